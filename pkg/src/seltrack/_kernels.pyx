# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: rotated box IoU and linear sum assignment.

Same contracts as ``_pykernels``; see that module for the box layout.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sin, fabs, hypot, INFINITY

cnp.import_array()

cdef double AREA_EPS = 1e-12


cdef inline void _rect(double cx, double cy, double l, double w, double theta,
                       double* px, double* py) noexcept nogil:
    cdef double c = cos(theta), s = sin(theta)
    cdef double hl = 0.5 * l, hw = 0.5 * w
    cdef double us[4]
    cdef double vs[4]
    us[0] = hl; vs[0] = hw
    us[1] = -hl; vs[1] = hw
    us[2] = -hl; vs[2] = -hw
    us[3] = hl; vs[3] = -hw
    cdef int k
    for k in range(4):
        px[k] = cx + us[k] * c - vs[k] * s
        py[k] = cy + us[k] * s + vs[k] * c


cdef int _clip(double* sx, double* sy, int ns, double* cx, double* cy, int nc,
               double* ox, double* oy) noexcept nogil:
    # Sutherland-Hodgman; buffers hold up to 16 vertices
    cdef double bx[16]
    cdef double by[16]
    cdef int i, k, m, nout, kn
    cdef double ax_, ay_, ex, ey, px_, py_, qx, qy, dp, dq, t
    nout = ns
    for k in range(ns):
        ox[k] = sx[k]
        oy[k] = sy[k]
    for i in range(nc):
        if nout == 0:
            break
        m = nout
        for k in range(m):
            bx[k] = ox[k]
            by[k] = oy[k]
        ax_ = cx[i]
        ay_ = cy[i]
        ex = cx[(i + 1) % nc] - ax_
        ey = cy[(i + 1) % nc] - ay_
        nout = 0
        for k in range(m):
            kn = k + 1
            if kn == m:
                kn = 0
            px_ = bx[k]
            py_ = by[k]
            qx = bx[kn]
            qy = by[kn]
            dp = ex * (py_ - ay_) - ey * (px_ - ax_)
            dq = ex * (qy - ay_) - ey * (qx - ax_)
            if dp >= 0.0:
                ox[nout] = px_
                oy[nout] = py_
                nout += 1
                if dq < 0.0:
                    t = dp / (dp - dq)
                    ox[nout] = px_ + t * (qx - px_)
                    oy[nout] = py_ + t * (qy - py_)
                    nout += 1
            elif dq >= 0.0:
                t = dp / (dp - dq)
                ox[nout] = px_ + t * (qx - px_)
                oy[nout] = py_ + t * (qy - py_)
                nout += 1
    return nout


cdef double _shoelace(double* x, double* y, int n) noexcept nogil:
    if n < 3:
        return 0.0
    cdef double acc = 0.0
    cdef int i, j
    for i in range(n):
        j = i + 1
        if j == n:
            j = 0
        acc += x[i] * y[j] - x[j] * y[i]
    return 0.5 * fabs(acc)


cdef double _bev_inter(const double* a, const double* b) noexcept nogil:
    cdef double ax[4]
    cdef double ay[4]
    cdef double bx[4]
    cdef double by[4]
    cdef double ox[16]
    cdef double oy[16]
    cdef double mx = 0.5 * (a[0] + b[0])
    cdef double my = 0.5 * (a[1] + b[1])
    cdef double ra = 0.5 * hypot(a[3], a[4])
    cdef double rb = 0.5 * hypot(b[3], b[4])
    if hypot(a[0] - b[0], a[1] - b[1]) > ra + rb:
        return 0.0
    _rect(a[0] - mx, a[1] - my, a[3], a[4], a[6], ax, ay)
    _rect(b[0] - mx, b[1] - my, b[3], b[4], b[6], bx, by)
    cdef int n = _clip(ax, ay, 4, bx, by, 4, ox, oy)
    cdef double area = _shoelace(ox, oy, n)
    if area > AREA_EPS:
        return area
    return 0.0


cdef double _iou(const double* a, const double* b, bint bev) noexcept nogil:
    cdef double inter = _bev_inter(a, b)
    cdef double lo, hi, vi, union_, r
    if inter == 0.0:
        return 0.0
    if bev:
        union_ = a[3] * a[4] + b[3] * b[4] - inter
        r = inter / union_
    else:
        lo = max(a[2] - 0.5 * a[5], b[2] - 0.5 * b[5])
        hi = min(a[2] + 0.5 * a[5], b[2] + 0.5 * b[5])
        if hi <= lo:
            return 0.0
        vi = inter * (hi - lo)
        union_ = a[3] * a[4] * a[5] + b[3] * b[4] * b[5] - vi
        r = vi / union_
    if r > 1.0:
        return 1.0
    if r < 0.0:
        return 0.0
    return r


def bev_intersection(a, b):
    cdef double[::1] av = np.ascontiguousarray(a, dtype=np.float64)
    cdef double[::1] bv = np.ascontiguousarray(b, dtype=np.float64)
    return _bev_inter(&av[0], &bv[0])


def box_iou(a, b, bint bev):
    cdef double[::1] av = np.ascontiguousarray(a, dtype=np.float64)
    cdef double[::1] bv = np.ascontiguousarray(b, dtype=np.float64)
    return _iou(&av[0], &bv[0], bev)


def iou_matrix(boxes_a, boxes_b, bint bev):
    cdef double[:, ::1] a = np.ascontiguousarray(boxes_a, dtype=np.float64).reshape(-1, 7)
    cdef double[:, ::1] b = np.ascontiguousarray(boxes_b, dtype=np.float64).reshape(-1, 7)
    cdef Py_ssize_t m = a.shape[0], n = b.shape[0], i, j
    out = np.zeros((m, n), dtype=np.float64)
    cdef double[:, ::1] ov = out
    with nogil:
        for i in range(m):
            for j in range(n):
                ov[i, j] = _iou(&a[i, 0], &b[j, 0], bev)
    return out


def lsap(cost):
    """Minimum-cost assignment of every row of a finite n x m matrix, n <= m."""
    cdef double[:, ::1] c = np.ascontiguousarray(cost, dtype=np.float64)
    cdef Py_ssize_t n = c.shape[0], m = c.shape[1]
    col_for_row = np.full(n, -1, dtype=np.intp)
    if n == 0:
        return col_for_row
    u_arr = np.zeros(n + 1)
    v_arr = np.zeros(m + 1)
    p_arr = np.zeros(m + 1, dtype=np.intp)
    way_arr = np.zeros(m + 1, dtype=np.intp)
    minv_arr = np.empty(m + 1)
    used_arr = np.empty(m + 1, dtype=np.uint8)
    cdef double[::1] u = u_arr
    cdef double[::1] v = v_arr
    cdef Py_ssize_t[::1] p = p_arr
    cdef Py_ssize_t[::1] way = way_arr
    cdef double[::1] minv = minv_arr
    cdef unsigned char[::1] used = used_arr
    cdef Py_ssize_t[::1] out = col_for_row
    cdef Py_ssize_t i, j, j0, j1, i0
    cdef double delta, cur, ui0
    with nogil:
        for i in range(1, n + 1):
            p[0] = i
            j0 = 0
            for j in range(m + 1):
                minv[j] = INFINITY
                used[j] = 0
            while True:
                used[j0] = 1
                i0 = p[j0]
                ui0 = u[i0]
                delta = INFINITY
                j1 = 0
                for j in range(1, m + 1):
                    if not used[j]:
                        cur = c[i0 - 1, j - 1] - ui0 - v[j]
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
        for j in range(1, m + 1):
            if p[j]:
                out[p[j] - 1] = j - 1
    return col_for_row
