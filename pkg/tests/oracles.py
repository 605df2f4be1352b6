"""Independent reference implementations used as test oracles."""

from __future__ import annotations

import functools
import itertools
import math

import numpy as np
from scipy.stats import qmc

from seltrack.geometry import Box3D
from seltrack.metrics import ClearCounts, match_sequence, samota_term


def inside(points: np.ndarray, b: Box3D, bev: bool = False) -> np.ndarray:
    c, s = math.cos(b.theta), math.sin(b.theta)
    dx, dy = points[:, 0] - b.x, points[:, 1] - b.y
    u = c * dx + s * dy
    v = -s * dx + c * dy
    ok = (np.abs(u) <= b.l / 2) & (np.abs(v) <= b.w / 2)
    if not bev:
        ok &= np.abs(points[:, 2] - b.z) <= b.h / 2
    return ok


@functools.lru_cache(maxsize=8)
def _unit_points(d: int, m: int, seed: int) -> np.ndarray:
    pts = qmc.Sobol(d, scramble=True, seed=seed).random_base2(m) - 0.5
    pts.flags.writeable = False
    return pts


def sample_in_box(b: Box3D, m: int, bev: bool, seed: int) -> np.ndarray:
    """2**m scrambled Sobol points spread uniformly over box ``b``."""
    d = 2 if bev else 3
    local = _unit_points(d, m, seed) * np.array([b.l, b.w, b.h][:d])
    c, s = math.cos(b.theta), math.sin(b.theta)
    x = b.x + c * local[:, 0] - s * local[:, 1]
    y = b.y + s * local[:, 0] + c * local[:, 1]
    cols = [x, y] if bev else [x, y, b.z + local[:, 2]]
    return np.column_stack(cols)


def mc_iou(a: Box3D, b: Box3D, bev: bool = False, m: int = 20, seed: int = 0) -> float:
    pts = sample_in_box(a, m, bev, seed)
    frac = inside(pts, b, bev).mean()
    va = a.l * a.w * (1.0 if bev else a.h)
    vb = b.l * b.w * (1.0 if bev else b.h)
    inter = frac * va
    return float(inter / (va + vb - inter))


def random_box(rng: np.random.Generator, spread: float = 3.0) -> Box3D:
    return Box3D(
        rng.uniform(-spread, spread),
        rng.uniform(-spread, spread),
        rng.uniform(-0.5, 0.5),
        rng.uniform(0.5, 5.0),
        rng.uniform(0.5, 3.0),
        rng.uniform(0.5, 2.5),
        rng.uniform(-math.pi, math.pi),
    )


def brute_lsap(cost: np.ndarray) -> float:
    """Minimum total over all injective row->column maps (rows <= cols after transposing)."""
    c = np.asarray(cost, dtype=np.float64)
    if c.shape[0] > c.shape[1]:
        c = c.T
    n, m = c.shape
    if n == 0:
        return 0.0
    perms = np.array(list(itertools.permutations(range(m), n)))
    return float(c[np.arange(n), perms].sum(axis=1).min())


def brute_sweep(sequences, criterion, steps: int = 40):
    """Recall-averaged metrics by enumerating every distinct confidence cutoff.

    For each recall target the chosen cutoff is the largest one whose full-run
    matched-hypothesis recall reaches the target.
    """
    full = ClearCounts()
    conf = []
    for h, g in sequences:
        c, m = match_sequence(h, g, criterion)
        full = full + c
        conf += m
    distinct = sorted({float(x) for x in conf}, reverse=True)
    amota = samota = amotp = 0.0
    for k in range(1, steps + 1):
        r = k / steps
        chosen = None
        for cut in distinct:  # descending: the first that reaches r is the largest
            if sum(1 for x in conf if x >= cut) / full.num_gt >= r - 1e-12:
                chosen = cut
                break
        if chosen is None:
            continue
        tot = ClearCounts()
        for h, g in sequences:
            tot = tot + match_sequence(h, g, criterion, chosen)[0]
        amota += max(0.0, tot.mota)
        samota += samota_term(tot, r)
        amotp += tot.motp
    return samota / steps, amota / steps, amotp / steps
