"""Online tracking-by-detection with an optional learned detection selector."""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .assignment import greedy_assignment, hungarian
from .geometry import Box3D, Detection, iou_matrix
from .neural import raw_box_input, raw_input_dim
from .selection import SelectionDecision, SelectorModel

ASSOCIATION_MODES = ("iou", "feature", "greedy")
SELECTOR_MODES = ("off", "global", "frame", "instance", "oracle-frame", "oracle-instance")
DEFAULT_GATES = {"iou": 0.1, "greedy": 0.1, "feature": 0.5}

TENTATIVE, CONFIRMED, DEAD = "tentative", "confirmed", "dead"


@dataclass
class TrackerConfig:
    min_hits: int = 3
    max_age: int = 2
    association: str = "iou"
    selector: str = "off"
    global_threshold: float = 0.0
    gate: float | None = None
    history: int = 5

    def __post_init__(self):
        if self.min_hits < 1 or self.max_age < 1:
            raise ValueError("min_hits and max_age must be >= 1")
        if self.association not in ASSOCIATION_MODES:
            raise ValueError(f"association must be one of {ASSOCIATION_MODES}")
        if self.selector not in SELECTOR_MODES:
            raise ValueError(f"selector must be one of {SELECTOR_MODES}")
        if self.history < 1:
            raise ValueError("history must be >= 1")

    @property
    def effective_gate(self) -> float:
        return DEFAULT_GATES[self.association] if self.gate is None else self.gate


@dataclass
class HistoryEntry:
    box: Box3D
    score: float
    frame: int


@dataclass
class Tracklet:
    id: int
    history: deque
    hits: int = 1
    streak: int = 1
    misses: int = 0
    state: str = TENTATIVE
    scores: list = field(default_factory=list)
    tag: int = -1
    feature: np.ndarray | None = None

    @property
    def last(self) -> HistoryEntry:
        return self.history[-1]


def predict(t: Tracklet, frame: int | None = None) -> Box3D:
    """Constant-velocity extrapolation of the center from the last two entries.

    Velocity is per frame, so gaps from missed frames are accounted for.
    Size and heading carry over from the latest entry.
    """
    last = t.history[-1]
    if len(t.history) < 2:
        return last.box
    prev = t.history[-2]
    gap = max(last.frame - prev.frame, 1)
    ahead = (frame - last.frame) if frame is not None else 1
    k = ahead / gap
    b = last.box
    return Box3D(
        b.x + k * (b.x - prev.box.x),
        b.y + k * (b.y - prev.box.y),
        b.z + k * (b.z - prev.box.z),
        b.l,
        b.w,
        b.h,
        b.theta,
    )


def tracklet_raw(t: Tracklet, frame: int, history: int) -> np.ndarray:
    pred = predict(t, frame)
    return raw_box_input(pred, t.last.score, [(e.box, e.score) for e in t.history], history)


def detection_raw(d: Detection, history: int) -> np.ndarray:
    return raw_box_input(d.box, d.score, (), history)


def raw_rows(items, fn, history: int) -> np.ndarray:
    if not items:
        return np.zeros((0, raw_input_dim(history)))
    return np.vstack([fn(x) for x in items])


def affinity(tracklets: Sequence[Tracklet], dets: Sequence[Detection], mode: str = "iou", frame: int | None = None, model: SelectorModel | None = None, trk_feats=None, det_feats=None) -> np.ndarray:
    """Tracklet x detection similarity matrix.

    ``iou``/``greedy`` use 3D IoU between the predicted tracklet box and the
    detection; ``feature`` uses the model's edge head on encoder features.
    """
    m, n = len(tracklets), len(dets)
    if m == 0 or n == 0:
        return np.zeros((m, n))
    if mode == "feature":
        if model is None or model.edge is None:
            raise ValueError("feature affinity needs a model with an edge head")
        return model.affinity(trk_feats, det_feats)
    preds = [predict(t, frame) for t in tracklets]
    return iou_matrix(preds, [d.box for d in dets])


@dataclass
class TrackedBox:
    frame: int
    track_id: int
    box: Box3D
    score: float
    confidence: float = 0.0


@dataclass
class FilteredDetection:
    frame: int
    index: int
    score: float
    value: float  # threshold or probability that decided the drop
    kind: str


@dataclass
class StepResult:
    assignments: list[tuple[int, int]]  # (track id, detection index)
    outputs: list[TrackedBox]
    filtered: list[FilteredDetection]
    decision: SelectionDecision


class TrackerState:
    def __init__(self, cfg: TrackerConfig | None = None):
        self.cfg = cfg or TrackerConfig()
        self.tracklets: list[Tracklet] = []
        self.next_id = 1
        self.frame = None

    def new_tracklet(self, det: Detection, frame: int, tag: int = -1) -> Tracklet:
        t = Tracklet(self.next_id, deque([HistoryEntry(det.box, det.score, frame)], maxlen=self.cfg.history), scores=[det.score], tag=tag)
        self.next_id += 1
        if self.cfg.min_hits <= 1:
            t.state = CONFIRMED
        self.tracklets.append(t)
        return t


def select(dets: Sequence[Detection], cfg: TrackerConfig, model: SelectorModel | None, det_feats, trk_feats, oracle=None) -> tuple[SelectionDecision, str]:
    n = len(dets)
    scores = np.array([d.score for d in dets], dtype=np.float64)
    mode = cfg.selector
    if mode == "off" or n == 0:
        return SelectionDecision(np.ones(n, dtype=bool)), "none"
    if mode == "global":
        tau = cfg.global_threshold
        return SelectionDecision(scores > tau, tau=tau), "threshold"
    if mode == "frame":
        if model is None or model.mode != "frame":
            raise ValueError("frame selector needs a frame-mode model")
        tau = model.frame_threshold(np.vstack([det_feats, trk_feats]))
        return SelectionDecision(scores > tau, tau=tau), "threshold"
    if mode == "instance":
        if model is None or model.mode != "instance":
            raise ValueError("instance selector needs an instance-mode model")
        lam = model.instance_probs(det_feats, trk_feats)
        return SelectionDecision(lam > model.config.lambda_thres, lam=lam), "probability"
    if oracle is None:
        raise ValueError(f"{mode} selector needs oracle labels")
    if mode == "oracle-frame":
        tau = oracle.tau
        return SelectionDecision(scores > tau, tau=tau), "threshold"
    lam = np.asarray(oracle.is_tp, dtype=np.float64)
    return SelectionDecision(lam > 0.5, lam=lam), "probability"


def step(state: TrackerState, dets: Sequence[Detection], frame: int, model: SelectorModel | None = None, oracle=None, det_tags: Sequence[int] | None = None) -> StepResult:
    """Advance the tracker by one frame.

    Order: encode features, select detections, compute affinity over the
    survivors, gated Hungarian association, then lifecycle updates.
    ``oracle`` supplies ``tau``/``is_tp`` for the oracle selector modes.
    """
    cfg = state.cfg
    if state.frame is not None and frame <= state.frame:
        raise ValueError(f"frame index must increase (got {frame} after {state.frame})")
    state.frame = frame
    alive = list(state.tracklets)

    need_feats = model is not None and (cfg.selector in ("frame", "instance") or cfg.association == "feature")
    det_feats = trk_feats = None
    if need_feats:
        h = model.encoder.history
        det_feats = model.features(raw_rows(list(dets), lambda d: detection_raw(d, h), h))
        trk_feats = model.features(raw_rows(alive, lambda t: tracklet_raw(t, frame, h), h))
        for t, f in zip(alive, trk_feats):
            t.feature = f

    decision, kind = select(dets, cfg, model, det_feats, trk_feats, oracle)
    keep = np.flatnonzero(decision.keep)
    filtered = []
    for j in np.flatnonzero(~decision.keep):
        value = decision.tau if decision.tau is not None else float(decision.lam[j])
        filtered.append(FilteredDetection(frame, int(j), dets[j].score, value, kind))

    survivors = [dets[j] for j in keep]
    sf = det_feats[keep] if det_feats is not None else None
    aff = affinity(alive, survivors, cfg.association, frame, model, trk_feats, sf)
    gate = cfg.effective_gate
    cost = np.where(aff >= gate, -aff, np.inf)
    result = greedy_assignment(cost) if cfg.association == "greedy" else hungarian(cost)

    assignments, outputs = [], []
    matched_t = set()
    for i, jj in result.pairs:
        t = alive[i]
        j = int(keep[jj])
        d = dets[j]
        t.history.append(HistoryEntry(d.box, d.score, frame))
        t.scores.append(d.score)
        t.hits += 1
        t.streak += 1
        t.misses = 0
        if det_tags is not None:
            t.tag = det_tags[j]
        if t.state == TENTATIVE and t.streak >= cfg.min_hits:
            t.state = CONFIRMED
        matched_t.add(i)
        assignments.append((t.id, j))
        if t.state == CONFIRMED:
            outputs.append(TrackedBox(frame, t.id, d.box, d.score))

    for i, t in enumerate(alive):
        if i in matched_t:
            continue
        t.misses += 1
        t.streak = 0
        if t.misses >= cfg.max_age:
            t.state = DEAD

    newborn = []
    # canonical birth order keeps ids independent of detection input order
    for jj in sorted(result.unmatched_cols, key=lambda c: _det_key(survivors[c])):
        j = int(keep[jj])
        t = state.new_tracklet(dets[j], frame, det_tags[j] if det_tags is not None else -1)
        newborn.append(t)
        assignments.append((t.id, j))
        if t.state == CONFIRMED:
            outputs.append(TrackedBox(frame, t.id, dets[j].box, dets[j].score))

    state.tracklets = [t for t in alive if t.state != DEAD] + newborn
    outputs.sort(key=lambda o: o.track_id)
    return StepResult(sorted(assignments, key=lambda a: a[1]), outputs, filtered, decision)


def _det_key(d: Detection):
    b = d.box
    return (b.x, b.y, b.z, b.l, b.w, b.h, b.theta, d.score)


@dataclass
class TrackingResult:
    frames: list[list[TrackedBox]]
    filtered: list[FilteredDetection]
    decisions: list[SelectionDecision]
    frame_ids: list[int]

    @property
    def n_filtered(self) -> int:
        return len(self.filtered)

    def track_ids(self) -> set[int]:
        return {o.track_id for f in self.frames for o in f}

    def write_diagnostics(self, path) -> None:
        write_filter_diagnostics(self.filtered, path)


def run_sequence(frames: Sequence[Sequence[Detection]], model: SelectorModel | None = None, cfg: TrackerConfig | None = None, oracle: Sequence | None = None, frame_ids: Sequence[int] | None = None) -> TrackingResult:
    """Track a whole sequence; track confidence is the mean associated score."""
    state = TrackerState(cfg)
    ids = list(frame_ids) if frame_ids is not None else list(range(len(frames)))
    out_frames, filtered, decisions = [], [], []
    all_scores: dict[int, list[float]] = {}
    for k, (fid, dets) in enumerate(zip(ids, frames)):
        res = step(state, dets, fid, model, oracle[k] if oracle is not None else None)
        for tid, j in res.assignments:
            all_scores.setdefault(tid, []).append(dets[j].score)
        out_frames.append(res.outputs)
        filtered += res.filtered
        decisions.append(res.decision)
    conf = {tid: math.fsum(s) / len(s) for tid, s in all_scores.items()}
    for f in out_frames:
        for o in f:
            o.confidence = conf[o.track_id]
    return TrackingResult(out_frames, filtered, decisions, ids)


def write_filter_diagnostics(filtered: Sequence[FilteredDetection], path, sequence: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sequence", "frame", "detection", "score", "kind", "value"])
        for f in filtered:
            w.writerow([sequence or "", f.frame, f.index, f"{f.score:.6f}", f.kind, f"{f.value:.6f}"])
