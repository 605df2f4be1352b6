"""Deterministic synthetic scenes and a detector model with frame-varying scores.

Scores are logit-like reals. A true detection scores
``mu_tp - decay * range + drift(frame) + noise``; a false one scores
``mu_fp + drift(frame) + noise``. ``drift`` is shared by every detection in a
frame and combines a sinusoid with piecewise-constant regimes, so the best
fixed threshold differs from frame to frame. Distance decay pushes far true
objects below near false ones. False detections come from "ghosts" that
persist across frames with probability ``fp_persistence`` and have loosely
car-like random shapes.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Sequence

import numpy as np

from .assignment import match_tp_fp
from .geometry import Box3D, Detection, iou_bev
from .selection import ScoreSplit, SelectorConfig, oracle_threshold

GROUND_Z = -1.7  # ground plane height in the sensor frame


@dataclass(frozen=True)
class SimConfig:
    n_frames: int = 100
    range_x: tuple[float, float] = (2.0, 70.0)
    half_width_y: float = 30.0
    initial_objects: tuple[int, int] = (5, 10)
    max_objects: int = 14
    spawn_prob: float = 0.15
    despawn_prob: float = 0.01
    speed_range: tuple[float, float] = (0.0, 1.5)
    heading_jitter: float = 0.02
    size_mean: tuple[float, float, float] = (4.2, 1.75, 1.55)
    size_spread: tuple[float, float, float] = (0.3, 0.1, 0.08)
    sigma_pos: float = 0.15
    sigma_size: float = 0.04
    sigma_theta: float = 0.05
    miss_base: float = 0.02
    miss_slope: float = 0.002
    fp_rate: float = 3.0
    fp_persistence: float = 0.6
    fp_jitter: float = 0.1
    fp_shape_spread: float = 0.35
    mu_tp: float = 9.5
    mu_fp: float = -1.5
    decay: float = 0.03
    sigma_score_tp: float = 1.0
    sigma_score_fp: float = 3.0
    drift_amplitude: float = 0.75
    drift_period: float = 40.0
    regime_levels: tuple[float, ...] = (-5.0, -2.5, 0.0, 3.0)
    regime_probs: tuple[float, ...] = (0.25, 0.15, 0.3, 0.3)
    regime_length: float = 25.0
    seed: int = 0

    def __post_init__(self):
        probs = (self.spawn_prob, self.despawn_prob, self.miss_base, self.fp_persistence)
        if any(not 0.0 <= p <= 1.0 for p in probs):
            raise ValueError("probabilities must lie in [0, 1]")
        sigmas = (self.sigma_pos, self.sigma_size, self.sigma_theta, self.sigma_score_tp, self.sigma_score_fp, self.fp_jitter, self.fp_shape_spread, self.heading_jitter)
        if any(s < 0 for s in sigmas):
            raise ValueError("noise scales must be >= 0")
        if self.fp_rate < 0 or self.miss_slope < 0 or self.n_frames < 1:
            raise ValueError("fp_rate, miss_slope must be >= 0 and n_frames >= 1")
        if len(self.regime_levels) != len(self.regime_probs) or not self.regime_levels:
            raise ValueError("regime_levels and regime_probs must have equal, non-zero length")
        if abs(sum(self.regime_probs) - 1.0) > 1e-9 or min(self.regime_probs) < 0:
            raise ValueError("regime_probs must be a probability vector")
        if self.speed_range[0] > self.speed_range[1] or self.range_x[0] >= self.range_x[1]:
            raise ValueError("ranges must be ordered")
        lo, hi = self.initial_objects
        if not 0 <= lo <= hi:
            raise ValueError("initial_objects must be an ordered non-negative range")

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown simulator keys: {sorted(unknown)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


PRESETS = {
    "default": SimConfig(),
    # strong regime shifts between frames: a single threshold cannot follow them
    "drift": SimConfig(
        regime_levels=(-6.0, -3.0, 0.0, 3.0, 6.0),
        regime_probs=(0.2, 0.2, 0.2, 0.2, 0.2),
        sigma_score_fp=2.0,
        sigma_score_tp=0.8,
        drift_amplitude=0.5,
    ),
    # steep distance decay: far true objects score below near false ones
    "crossed": SimConfig(
        mu_tp=9.0,
        decay=0.14,
        mu_fp=2.5,
        sigma_score_tp=0.7,
        sigma_score_fp=1.5,
        regime_levels=(0.0,),
        regime_probs=(1.0,),
        drift_amplitude=0.3,
        miss_slope=0.0,
    ),
}


def preset(name: str, **overrides) -> SimConfig:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return replace(PRESETS[name], **overrides)


@dataclass
class GTObject:
    id: int
    box: Box3D


@dataclass
class _Mover:
    id: int
    x: float
    y: float
    heading: float
    speed: float
    l: float
    w: float
    h: float

    def box(self) -> Box3D:
        return Box3D(self.x, self.y, GROUND_Z + 0.5 * self.h, self.l, self.w, self.h, self.heading)


@dataclass
class Scene:
    frames: list[list[GTObject]]
    drift: np.ndarray


@dataclass
class SimSequence:
    name: str
    gt: list[list[GTObject]]
    dets: list[list[Detection]]
    drift: np.ndarray


def _streams(cfg: SimConfig, seed: int | None):
    ss = np.random.SeedSequence(cfg.seed if seed is None else seed)
    a, b, c = ss.spawn(3)
    return np.random.default_rng(a), np.random.default_rng(b), np.random.default_rng(c)


def drift_series(cfg: SimConfig, rng: np.random.Generator) -> np.ndarray:
    """Per-frame score offset: a regime level plus a sinusoid.

    The regime is a Markov chain over ``regime_levels`` that holds for
    ``regime_length`` frames on average and only steps to an adjacent level,
    picking the side in proportion to ``regime_probs``.
    """
    n = cfg.n_frames
    levels = np.asarray(cfg.regime_levels, dtype=np.float64)
    probs = np.asarray(cfg.regime_probs, dtype=np.float64)
    out = np.empty(n)
    k = int(rng.choice(len(levels), p=probs))
    switch = 1.0 / max(cfg.regime_length, 1.0)
    phase = rng.uniform(0, 2 * math.pi)
    for t in range(n):
        if t > 0 and len(levels) > 1 and rng.random() < switch:
            nb = [j for j in (k - 1, k + 1) if 0 <= j < len(levels)]
            w = probs[nb]
            k = nb[int(rng.choice(len(nb), p=w / w.sum()))] if w.sum() > 0 else nb[0]
        out[t] = levels[k] + cfg.drift_amplitude * math.sin(2 * math.pi * t / cfg.drift_period + phase)
    return out


def _inside(cfg: SimConfig, x: float, y: float) -> bool:
    return cfg.range_x[0] <= x <= cfg.range_x[1] and abs(y) <= cfg.half_width_y


def _spawn(cfg: SimConfig, rng: np.random.Generator, oid: int, others: Sequence[_Mover]) -> _Mover | None:
    for _ in range(10):
        l, w, h = (max(m + s * rng.standard_normal(), 0.3 * m) for m, s in zip(cfg.size_mean, cfg.size_spread))
        mv = _Mover(
            oid,
            rng.uniform(*cfg.range_x),
            rng.uniform(-cfg.half_width_y, cfg.half_width_y),
            rng.uniform(-math.pi, math.pi),
            rng.uniform(*cfg.speed_range),
            l,
            w,
            h,
        )
        b = mv.box()
        if all(iou_bev(b, o.box()) == 0.0 for o in others):
            return mv
    return None


def generate_scene(cfg: SimConfig, seed: int | None = None) -> Scene:
    """Objects spawn, move at constant speed with small heading jitter, and leave."""
    scene_rng, _, drift_rng = _streams(cfg, seed)
    movers: list[_Mover] = []
    next_id = 0
    for _ in range(int(scene_rng.integers(cfg.initial_objects[0], cfg.initial_objects[1] + 1))):
        mv = _spawn(cfg, scene_rng, next_id, movers)
        next_id += 1
        if mv is not None:
            movers.append(mv)
    frames = []
    for t in range(cfg.n_frames):
        frames.append([GTObject(m.id, m.box()) for m in movers])
        kept = []
        for m in movers:
            if cfg.despawn_prob > 0 and scene_rng.random() < cfg.despawn_prob:
                continue
            if cfg.heading_jitter > 0:
                m.heading += cfg.heading_jitter * scene_rng.standard_normal()
            m.x += m.speed * math.cos(m.heading)
            m.y += m.speed * math.sin(m.heading)
            if _inside(cfg, m.x, m.y):
                kept.append(m)
        movers = kept
        if len(movers) < cfg.max_objects and cfg.spawn_prob > 0 and scene_rng.random() < cfg.spawn_prob:
            mv = _spawn(cfg, scene_rng, next_id, movers)
            next_id += 1
            if mv is not None:
                movers.append(mv)
    return Scene(frames, drift_series(cfg, drift_rng))


def _ghost(cfg: SimConfig, rng: np.random.Generator) -> list[float]:
    spread = np.exp(cfg.fp_shape_spread * rng.standard_normal(3))
    l, w, h = (m * s for m, s in zip(cfg.size_mean, spread))
    return [rng.uniform(*cfg.range_x), rng.uniform(-cfg.half_width_y, cfg.half_width_y), l, w, h, rng.uniform(-math.pi, math.pi)]


def detect(objects: Sequence[GTObject], frame: int, cfg: SimConfig, rng: np.random.Generator, drift: float = 0.0, ghosts: list | None = None, evolve: bool = True) -> list[Detection]:
    """Detections for one frame.

    ``ghosts`` is the persistent false-positive state (a list, updated in
    place); pass ``None`` for a memoryless frame with Poisson(fp_rate)
    ghosts. With ``evolve=False`` the given ghosts are shown unchanged.
    """
    dets = []
    for ob in objects:
        b = ob.box
        rng_m = math.hypot(b.x, b.y)
        p_miss = min(1.0, max(0.0, cfg.miss_base + cfg.miss_slope * rng_m))
        if rng.random() < p_miss:
            continue
        n = rng.standard_normal(8)
        box = Box3D(
            b.x + cfg.sigma_pos * n[0],
            b.y + cfg.sigma_pos * n[1],
            b.z + cfg.sigma_pos * 0.5 * n[2],
            b.l * max(1.0 + cfg.sigma_size * n[3], 0.2),
            b.w * max(1.0 + cfg.sigma_size * n[4], 0.2),
            b.h * max(1.0 + cfg.sigma_size * n[5], 0.2),
            b.theta + cfg.sigma_theta * n[6],
        )
        score = cfg.mu_tp - cfg.decay * rng_m + drift + cfg.sigma_score_tp * n[7]
        dets.append(Detection(box, score, frame, source_id=ob.id))

    state = ghosts if ghosts is not None else []
    if ghosts is None:
        count = rng.poisson(cfg.fp_rate)
        state.extend(_ghost(cfg, rng) for _ in range(count))
    elif evolve:
        survivors = [g for g in state if rng.random() < cfg.fp_persistence]
        for g in survivors:
            g[0] += cfg.fp_jitter * rng.standard_normal()
            g[1] += cfg.fp_jitter * rng.standard_normal()
        born = rng.poisson(cfg.fp_rate * (1.0 - cfg.fp_persistence))
        survivors.extend(_ghost(cfg, rng) for _ in range(born))
        state[:] = survivors
    for g in state:
        h = g[4]
        score = cfg.mu_fp + drift + cfg.sigma_score_fp * rng.standard_normal()
        dets.append(Detection(Box3D(g[0], g[1], GROUND_Z + 0.5 * h, g[2], g[3], h, g[5]), score, frame))
    return dets


def simulate_sequence(cfg: SimConfig, seed: int | None = None, name: str = "0000") -> SimSequence:
    scene = generate_scene(cfg, seed)
    _, det_rng, _ = _streams(cfg, seed)
    # stationary start: the persistent ghost count is Poisson(fp_rate) in every frame
    ghosts = [_ghost(cfg, det_rng) for _ in range(det_rng.poisson(cfg.fp_rate))]
    frames = [
        detect(objs, t, cfg, det_rng, float(scene.drift[t]), ghosts, evolve=t > 0)
        for t, objs in enumerate(scene.frames)
    ]
    return SimSequence(name, scene.frames, frames, scene.drift)


def sequence_seed(cfg: SimConfig, index: int) -> int:
    return int(np.random.SeedSequence([cfg.seed, index]).generate_state(1)[0])


def simulate_benchmark(cfg: SimConfig, n_sequences: int) -> list[SimSequence]:
    """Independent sequences; each draws from its own seed derived from ``cfg.seed``."""
    return [simulate_sequence(cfg, sequence_seed(cfg, k), f"{k:04d}") for k in range(n_sequences)]


# ---------------------------------------------------------------------------
# labels


@dataclass
class LabeledFrame:
    frame: int
    gt_ids: list[int]
    gt_boxes: list[Box3D]
    dets: list[Detection]
    is_tp: np.ndarray
    det_gt: np.ndarray  # matched ground-truth id, -1 for false positives
    tau: float
    lam: np.ndarray
    has_tp: bool = True

    @property
    def split(self) -> ScoreSplit:
        return ScoreSplit.from_labels([d.score for d in self.dets], self.is_tp)


def label_frame(frame: int, gt: Sequence[GTObject], dets: Sequence[Detection], cfg: SelectorConfig = SelectorConfig()) -> LabeledFrame:
    gt_boxes = [g.box for g in gt]
    lab = match_tp_fp(dets, gt_boxes, cfg.criterion)
    det_gt = np.array([gt[j].id if j >= 0 else -1 for j in lab.det_to_gt], dtype=int)
    split = ScoreSplit.from_labels([d.score for d in dets], lab.is_tp)
    return LabeledFrame(
        frame,
        [g.id for g in gt],
        gt_boxes,
        list(dets),
        lab.is_tp,
        det_gt,
        oracle_threshold(split, cfg),
        lab.is_tp.astype(np.float64),
        bool(split.tp),
    )


def label(seq: SimSequence, cfg: SelectorConfig = SelectorConfig()) -> list[LabeledFrame]:
    """TP/FP flags, oracle threshold and target probabilities for every frame."""
    return [label_frame(t, gt, dets, cfg) for t, (gt, dets) in enumerate(zip(seq.gt, seq.dets))]


def tp_score(cfg: SimConfig, distance: float, drift: float = 0.0) -> float:
    """Noise-free score of a true detection at ``distance`` meters."""
    return cfg.mu_tp - cfg.decay * distance + drift


def crossed_scores_frame(cfg: SelectorConfig = SelectorConfig()) -> LabeledFrame:
    """A scripted frame where a far true object scores -0.39 while three
    false detections score 5.22, 1.00 and 1.77.

    The true object sits at the range where the ``crossed`` preset's
    noise-free score model gives -0.39; the false detection scores are set
    directly, standing in for the preset's score noise.
    """
    sim = PRESETS["crossed"]
    distance = (sim.mu_tp + 0.39) / sim.decay
    obj = GTObject(7, Box3D(distance, 0.0, GROUND_Z + 0.775, 4.2, 1.75, 1.55, 0.0))
    dets = [Detection(obj.box, round(tp_score(sim, distance), 2), 0, source_id=7)]
    for k, s in enumerate((5.22, 1.00, 1.77)):
        ghost = Box3D(15.0 + 10.0 * k, -8.0 + 6.0 * k, GROUND_Z + 0.8, 3.0, 2.2, 1.6, 0.4 * k)
        dets.append(Detection(ghost, s, 0))
    return label_frame(0, [obj], dets, cfg)
