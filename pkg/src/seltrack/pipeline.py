"""Glue between simulator, labels, selector training, tracking and evaluation."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .assignment import MatchCriterion
from .metrics import MetricsReport, evaluate
from .neural import TrainConfig, TrainResult, train
from .selection import FrameSample, SelectorConfig, SelectorModel
from .simulator import LabeledFrame, SimConfig, label, simulate_benchmark
from .tracker import TrackerConfig, TrackerState, TrackingResult, detection_raw, raw_rows, run_sequence, step, tracklet_raw


def sequence_samples(frames: Sequence[LabeledFrame], cfg: TrackerConfig | None = None) -> list[FrameSample]:
    """Training samples from one labeled sequence.

    The tracker runs with the oracle instance selector so tracklet context
    is what a good selector would produce. Tracklets inherit the GT id of
    their last detection, which gives the association targets; affinity is
    supervised only on detections that survive the oracle threshold.
    """
    cfg = replace(cfg or TrackerConfig(), selector="oracle-instance", association="iou")
    h = cfg.history
    state = TrackerState(cfg)
    out = []
    for lf in frames:
        alive = list(state.tracklets)
        det_raw = raw_rows(lf.dets, lambda d: detection_raw(d, h), h)
        trk_raw = raw_rows(alive, lambda t: tracklet_raw(t, lf.frame, h), h)
        scores = np.array([d.score for d in lf.dets], dtype=np.float64)
        tags = np.array([t.tag for t in alive], dtype=int)
        target = ((tags[:, None] == lf.det_gt[None, :]) & (lf.det_gt[None, :] >= 0)).astype(np.float64)
        out.append(
            FrameSample(
                det_raw,
                trk_raw,
                np.asarray(lf.is_tp, dtype=np.float64),
                lf.tau if lf.has_tp else None,
                target,
                np.flatnonzero(scores > lf.tau),
                scores,
            )
        )
        step(state, lf.dets, lf.frame, oracle=lf, det_tags=lf.det_gt)
    return out


def build_samples(labeled: Sequence[Sequence[LabeledFrame]], cfg: TrackerConfig | None = None) -> list[FrameSample]:
    return [s for seq in labeled for s in sequence_samples(seq, cfg)]


def train_selector(
    samples: Sequence[FrameSample],
    mode: str,
    train_cfg: TrainConfig | None = None,
    selector_cfg: SelectorConfig | None = None,
    feature_dim: int = 128,
    hidden: int = 64,
    history: int = 5,
    with_edge: bool = False,
    progress=None,
    model: SelectorModel | None = None,
) -> TrainResult:
    """Train a fresh selector, or continue training ``model`` when given."""
    train_cfg = train_cfg or TrainConfig()
    if model is None:
        model = SelectorModel.init(mode, feature_dim, hidden, history, with_edge, selector_cfg or SelectorConfig(), seed=train_cfg.seed)
    data = list(samples)
    if mode == "frame":
        # frames without true positives carry no threshold target
        data = [s for s in data if s.tau is not None]
    return train(model, data, train_cfg, progress)


def track_labeled(labeled: Sequence[Sequence[LabeledFrame]], cfg: TrackerConfig, model: SelectorModel | None = None) -> list[TrackingResult]:
    out = []
    for seq in labeled:
        frames = [lf.dets for lf in seq]
        ids = [lf.frame for lf in seq]
        oracle = seq if cfg.selector.startswith("oracle") else None
        out.append(run_sequence(frames, model, cfg, oracle, ids))
    return out


def gt_frames(seq: Sequence[LabeledFrame]) -> list[list[tuple]]:
    return [list(zip(lf.gt_ids, lf.gt_boxes)) for lf in seq]


def evaluate_tracking(results: Sequence[TrackingResult], labeled: Sequence[Sequence[LabeledFrame]], criteria: Sequence[MatchCriterion]) -> list[MetricsReport]:
    pairs = [(r.frames, gt_frames(seq)) for r, seq in zip(results, labeled)]
    return [evaluate(pairs, c) for c in criteria]


@dataclass
class SelectionStats:
    """Detection-level effect of a selector."""

    n_tp: int
    n_fp: int
    tp_kept: int
    fp_kept: int

    @property
    def fp_removal(self) -> float:
        return 1.0 - self.fp_kept / self.n_fp if self.n_fp else 0.0

    @property
    def tp_retention(self) -> float:
        return self.tp_kept / self.n_tp if self.n_tp else 1.0


def selection_stats(results: Sequence[TrackingResult], labeled: Sequence[Sequence[LabeledFrame]]) -> SelectionStats:
    n_tp = n_fp = tp_kept = fp_kept = 0
    for r, seq in zip(results, labeled):
        for dec, lf in zip(r.decisions, seq):
            tp = np.asarray(lf.is_tp, dtype=bool)
            keep = np.asarray(dec.keep, dtype=bool)
            n_tp += int(tp.sum())
            n_fp += int((~tp).sum())
            tp_kept += int((keep & tp).sum())
            fp_kept += int((keep & ~tp).sum())
    return SelectionStats(n_tp, n_fp, tp_kept, fp_kept)


def split_scores(labeled: Sequence[Sequence[LabeledFrame]]) -> tuple[np.ndarray, np.ndarray]:
    tp, fp = [], []
    for seq in labeled:
        for lf in seq:
            s = np.array([d.score for d in lf.dets], dtype=np.float64)
            m = np.asarray(lf.is_tp, dtype=bool)
            tp.append(s[m])
            fp.append(s[~m])
    cat = lambda xs: np.concatenate(xs) if xs else np.zeros(0)  # noqa: E731
    return cat(tp), cat(fp)


def best_global_threshold(tp_scores, fp_scores, min_retention: float) -> tuple[float, float, float]:
    """Exact search over every distinct score for the global cutoff (keep ``s > t``)
    that removes the most FPs while keeping at least ``min_retention`` of TPs.

    Returns ``(threshold, fp_removal, tp_retention)``.
    """
    tp = np.sort(np.asarray(tp_scores, dtype=np.float64))
    fp = np.sort(np.asarray(fp_scores, dtype=np.float64))
    cands = np.concatenate([[-np.inf], np.unique(np.concatenate([tp, fp]))])
    tp_keep = len(tp) - np.searchsorted(tp, cands, side="right")
    fp_keep = len(fp) - np.searchsorted(fp, cands, side="right")
    ret = tp_keep / len(tp) if len(tp) else np.ones(len(cands))
    rem = 1.0 - fp_keep / len(fp) if len(fp) else np.zeros(len(cands))
    # tolerance absorbs rounding when the target retention came from a ratio
    ok = ret >= min_retention - 1e-12
    k = int(np.flatnonzero(ok)[np.argmax(rem[ok])])
    return float(cands[k]), float(rem[k]), float(ret[k])


def simulate_labeled(cfg: SimConfig, n_sequences: int, selector_cfg: SelectorConfig | None = None) -> list[list[LabeledFrame]]:
    return [label(s, selector_cfg or SelectorConfig()) for s in simulate_benchmark(cfg, n_sequences)]
