"""Optimal bipartite assignment and detection/ground-truth matching."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ._backend import kernels
from .geometry import Box3D, distance_matrix, iou_matrix


@dataclass
class Assignment:
    pairs: list[tuple[int, int]]
    unmatched_rows: list[int]
    unmatched_cols: list[int]

    def total_cost(self, cost) -> float:
        c = np.asarray(cost, dtype=np.float64)
        return float(sum(c[i, j] for i, j in self.pairs))


def hungarian(cost) -> Assignment:
    """Minimum-cost maximum matching over the finite entries of ``cost``.

    ``+inf`` marks a forbidden pair. Among matchings of maximum cardinality
    the total cost is minimal. NaN and ``-inf`` are rejected.
    """
    c = np.asarray(cost, dtype=np.float64)
    if c.ndim != 2:
        raise ValueError(f"cost matrix must be 2-D, got shape {c.shape}")
    m, n = c.shape
    if m == 0 or n == 0:
        return Assignment([], list(range(m)), list(range(n)))
    if np.isnan(c).any() or np.isneginf(c).any():
        raise ValueError("cost matrix may only contain finite values or +inf")
    finite = np.isfinite(c)
    if not finite.any():
        return Assignment([], list(range(m)), list(range(n)))

    transposed = m > n
    work = c.T if transposed else c
    fin = finite.T if transposed else finite
    k = work.shape[0]
    lo = work[fin].min()
    span = work[fin].max() - lo
    # any extra forbidden pair must cost more than every finite total
    big = span * k + 1.0
    shifted = np.where(fin, work - lo, big)
    col_for_row = kernels.lsap(np.ascontiguousarray(shifted))

    pairs = []
    for r, col in enumerate(col_for_row):
        if col >= 0 and fin[r, col]:
            pairs.append((int(col), r) if transposed else (r, int(col)))
    pairs.sort()
    rows = {p[0] for p in pairs}
    cols = {p[1] for p in pairs}
    return Assignment(
        pairs,
        [i for i in range(m) if i not in rows],
        [j for j in range(n) if j not in cols],
    )


def greedy_assignment(cost) -> Assignment:
    """Repeatedly take the cheapest remaining finite pair (row index breaks ties)."""
    c = np.asarray(cost, dtype=np.float64)
    m, n = c.shape if c.ndim == 2 else (0, 0)
    order = sorted(
        ((c[i, j], i, j) for i in range(m) for j in range(n) if math.isfinite(c[i, j])),
    )
    used_r, used_c, pairs = set(), set(), []
    for _, i, j in order:
        if i in used_r or j in used_c:
            continue
        used_r.add(i)
        used_c.add(j)
        pairs.append((i, j))
    pairs.sort()
    return Assignment(
        pairs,
        [i for i in range(m) if i not in used_r],
        [j for j in range(n) if j not in used_c],
    )


@dataclass(frozen=True)
class MatchCriterion:
    """``kind`` is ``"iou3d"`` (match when IoU >= threshold), ``"iou_bev"``,
    or ``"distance"`` (match when center distance <= threshold)."""

    kind: str = "iou3d"
    threshold: float = 0.25
    planar: bool = False

    def __post_init__(self):
        if self.kind not in ("iou3d", "iou_bev", "distance"):
            raise ValueError(f"unknown criterion kind {self.kind!r}")
        if self.kind == "distance":
            if not self.threshold > 0:
                raise ValueError("distance threshold must be positive")
        elif not 0 < self.threshold <= 1:
            raise ValueError("IoU threshold must lie in (0, 1]")

    @property
    def label(self) -> str:
        if self.kind == "distance":
            return f"dist<={self.threshold:g}"
        return f"{self.kind}>={self.threshold:g}"

    def overlap(self, a, b) -> np.ndarray:
        """Raw overlap matrix: IoU, or center distance for the distance criterion."""
        if self.kind == "iou3d":
            return iou_matrix(a, b, bev=False)
        if self.kind == "iou_bev":
            return iou_matrix(a, b, bev=True)
        return distance_matrix(a, b, planar=self.planar)

    def gate(self, overlap: np.ndarray) -> np.ndarray:
        if self.kind == "distance":
            return overlap <= self.threshold
        return overlap >= self.threshold

    def cost(self, overlap: np.ndarray) -> np.ndarray:
        """Assignment cost with failing pairs forbidden."""
        base = overlap if self.kind == "distance" else -overlap
        return np.where(self.gate(overlap), base, np.inf)

    def quality(self, overlap: float) -> float:
        """Higher-is-better alignment score of a matched pair, in [0, 1]."""
        if self.kind == "distance":
            return 1.0 - overlap / self.threshold
        return float(overlap)


@dataclass
class TpFpLabels:
    is_tp: np.ndarray  # per detection
    gt_matched: np.ndarray  # per ground-truth box
    det_to_gt: np.ndarray  # matched gt index or -1
    overlap: np.ndarray  # per detection overlap with its match (nan if FP)
    pairs: list[tuple[int, int]] = field(default_factory=list)

    @property
    def n_tp(self) -> int:
        return int(self.is_tp.sum())

    @property
    def n_fp(self) -> int:
        return int((~self.is_tp).sum())

    @property
    def n_missed(self) -> int:
        return int((~self.gt_matched).sum())


def match_tp_fp(dets: Sequence, gts: Sequence[Box3D], criterion: MatchCriterion | None = None) -> TpFpLabels:
    """Label detections TP/FP by gated Hungarian matching against ground truth.

    ``dets`` may hold :class:`~seltrack.tracker.Detection` objects or bare boxes.
    """
    criterion = criterion or MatchCriterion()
    boxes = [getattr(d, "box", d) for d in dets]
    n, g = len(boxes), len(gts)
    is_tp = np.zeros(n, dtype=bool)
    matched = np.zeros(g, dtype=bool)
    det_to_gt = np.full(n, -1, dtype=int)
    overlap_out = np.full(n, np.nan)
    if n == 0 or g == 0:
        return TpFpLabels(is_tp, matched, det_to_gt, overlap_out)
    ov = criterion.overlap(boxes, gts)
    result = hungarian(criterion.cost(ov))
    pairs = []
    for i, j in result.pairs:
        is_tp[i] = True
        matched[j] = True
        det_to_gt[i] = j
        overlap_out[i] = ov[i, j]
        pairs.append((i, j))
    return TpFpLabels(is_tp, matched, det_to_gt, overlap_out, pairs)
