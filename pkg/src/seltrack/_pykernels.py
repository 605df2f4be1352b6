"""Pure-Python reference kernels.

These mirror ``_kernels.pyx`` function for function and are used when the
compiled extension is unavailable (or ``SELTRACK_PURE=1`` is set).
Boxes are 7-vectors ``(x, y, z, l, w, h, theta)`` with ``z`` at the box center.
"""

import math

import numpy as np

AREA_EPS = 1e-12


def _rect(cx, cy, l, w, theta):
    c, s = math.cos(theta), math.sin(theta)
    hl, hw = 0.5 * l, 0.5 * w
    pts = []
    # counter-clockwise in the local frame
    for u, v in ((hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)):
        pts.append((cx + u * c - v * s, cy + u * s + v * c))
    return pts


def _clip(subject, clip):
    out = subject
    n = len(clip)
    for i in range(n):
        if not out:
            break
        ax, ay = clip[i]
        bx, by = clip[(i + 1) % n]
        ex, ey = bx - ax, by - ay
        inp = out
        out = []
        m = len(inp)
        for k in range(m):
            px, py = inp[k]
            qx, qy = inp[(k + 1) % m]
            dp = ex * (py - ay) - ey * (px - ax)
            dq = ex * (qy - ay) - ey * (qx - ax)
            if dp >= 0.0:
                out.append((px, py))
                if dq < 0.0:
                    t = dp / (dp - dq)
                    out.append((px + t * (qx - px), py + t * (qy - py)))
            elif dq >= 0.0:
                t = dp / (dp - dq)
                out.append((px + t * (qx - px), py + t * (qy - py)))
    return out


def _shoelace(poly):
    n = len(poly)
    if n < 3:
        return 0.0
    acc = 0.0
    for i in range(n):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % n]
        acc += x0 * y1 - x1 * y0
    return 0.5 * abs(acc)


def bev_intersection(a, b):
    """Area of the intersection of the ground-plane footprints of ``a`` and ``b``."""
    # work relative to the midpoint of the centers to limit cancellation
    ox = 0.5 * (a[0] + b[0])
    oy = 0.5 * (a[1] + b[1])
    ra = _rect(a[0] - ox, a[1] - oy, a[3], a[4], a[6])
    rb = _rect(b[0] - ox, b[1] - oy, b[3], b[4], b[6])
    # quick reject on circumscribed circles
    da = math.hypot(a[3], a[4]) * 0.5
    db = math.hypot(b[3], b[4]) * 0.5
    if math.hypot(a[0] - b[0], a[1] - b[1]) > da + db:
        return 0.0
    area = _shoelace(_clip(ra, rb))
    return area if area > AREA_EPS else 0.0


def box_iou(a, b, bev):
    inter = bev_intersection(a, b)
    if inter == 0.0:
        return 0.0
    if bev:
        union = a[3] * a[4] + b[3] * b[4] - inter
        return min(1.0, max(0.0, inter / union))
    lo = max(a[2] - 0.5 * a[5], b[2] - 0.5 * b[5])
    hi = min(a[2] + 0.5 * a[5], b[2] + 0.5 * b[5])
    if hi <= lo:
        return 0.0
    vi = inter * (hi - lo)
    union = a[3] * a[4] * a[5] + b[3] * b[4] * b[5] - vi
    return min(1.0, max(0.0, vi / union))


def iou_matrix(boxes_a, boxes_b, bev):
    a = np.asarray(boxes_a, dtype=np.float64).reshape(-1, 7)
    b = np.asarray(boxes_b, dtype=np.float64).reshape(-1, 7)
    out = np.zeros((a.shape[0], b.shape[0]))
    al = a.tolist()
    bl = b.tolist()
    for i, ra in enumerate(al):
        for j, rb in enumerate(bl):
            out[i, j] = box_iou(ra, rb, bev)
    return out


def lsap(cost):
    """Minimum-cost assignment of every row of a finite ``n x m`` matrix, n <= m.

    Shortest augmenting path with dual potentials. Returns ``col_for_row``.
    """
    a = np.asarray(cost, dtype=np.float64)
    n, m = a.shape
    if n == 0:
        return np.zeros(0, dtype=np.intp)
    rows = a.tolist()
    inf = math.inf
    u = [0.0] * (n + 1)
    v = [0.0] * (m + 1)
    p = [0] * (m + 1)
    way = [0] * (m + 1)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [inf] * (m + 1)
        used = [False] * (m + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            row = rows[i0 - 1]
            ui0 = u[i0]
            delta = inf
            j1 = 0
            for j in range(1, m + 1):
                if not used[j]:
                    cur = row[j - 1] - ui0 - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(m + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    col_for_row = np.full(n, -1, dtype=np.intp)
    for j in range(1, m + 1):
        if p[j]:
            col_for_row[p[j] - 1] = j - 1
    return col_for_row
