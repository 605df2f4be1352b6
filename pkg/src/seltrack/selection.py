"""Detection selection: oracle thresholds, score/probability filters and the
learned selectors (per-frame threshold regression, per-detection classifier).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .assignment import MatchCriterion, match_tp_fp
from .geometry import Box3D, Detection
from .neural import (
    DimensionMismatch,
    FeatureEncoder,
    Mlp,
    MlpSpec,
    TrainConfig,
    bce_logits_mean_with_grad,
    l2_mean_with_grad,
    maxpool_set,
    segment_maxpool,
    segment_maxpool_backward,
    sigmoid,
)

MODEL_FORMAT = "seltrack-selector"
MODEL_VERSION = 1


class EmptyTpError(ValueError):
    """No true-positive score in the frame; ``fallback`` holds the threshold to use."""

    def __init__(self, fallback: float):
        super().__init__(f"no true positives in frame; fallback threshold {fallback}")
        self.fallback = fallback


class LengthMismatch(ValueError):
    pass


@dataclass(frozen=True)
class SelectorConfig:
    s_buff: float = 3.0
    s_upper: float = 3.0
    lambda_thres: float = 0.1
    iou_min: float = 0.25

    def __post_init__(self):
        if not self.s_buff >= 0:
            raise ValueError("s_buff must be >= 0")
        if not math.isfinite(self.s_upper):
            raise ValueError("s_upper must be finite")
        if not 0 <= self.lambda_thres < 1:
            raise ValueError("lambda_thres must lie in [0, 1)")
        if not 0 < self.iou_min <= 1:
            raise ValueError("iou_min must lie in (0, 1]")

    @property
    def criterion(self) -> MatchCriterion:
        return MatchCriterion("iou3d", self.iou_min)


@dataclass
class ScoreSplit:
    tp: list[float]
    fp: list[float]

    @classmethod
    def from_labels(cls, scores: Sequence[float], is_tp: Sequence[bool]) -> "ScoreSplit":
        return cls(
            [float(s) for s, t in zip(scores, is_tp) if t],
            [float(s) for s, t in zip(scores, is_tp) if not t],
        )


@dataclass
class SelectionDecision:
    keep: np.ndarray
    tau: float | None = None
    lam: np.ndarray | None = None

    @property
    def n_kept(self) -> int:
        return int(self.keep.sum())


def gt_threshold(split: ScoreSplit, cfg: SelectorConfig = SelectorConfig()) -> float:
    """Oracle threshold ``min(min(S_TP) - s_buff, s_upper)``.

    Raises :class:`EmptyTpError` (carrying ``s_upper`` as fallback) when the
    frame has no TP score.
    """
    if not split.tp:
        raise EmptyTpError(cfg.s_upper)
    return min(min(split.tp) - cfg.s_buff, cfg.s_upper)


def oracle_threshold(split: ScoreSplit, cfg: SelectorConfig = SelectorConfig()) -> float:
    try:
        return gt_threshold(split, cfg)
    except EmptyTpError as e:
        return e.fallback


def gt_instance_labels(dets: Sequence[Detection], gts: Sequence[Box3D], cfg: SelectorConfig = SelectorConfig()) -> np.ndarray:
    """Per-detection target probability: 1 for a matched detection, else 0."""
    return match_tp_fp(dets, gts, cfg.criterion).is_tp.astype(np.float64)


def high_pass_filter(dets: Sequence[Detection], tau: float) -> list[Detection]:
    return [d for d in dets if d.score > tau]


def select_instances(dets: Sequence[Detection], lam: Sequence[float], cfg: SelectorConfig = SelectorConfig()) -> list[Detection]:
    if len(lam) != len(dets):
        raise LengthMismatch(f"{len(dets)} detections but {len(lam)} probabilities")
    return [d for d, p in zip(dets, lam) if p > cfg.lambda_thres]


# ---------------------------------------------------------------------------
# learned selectors


@dataclass
class FrameSample:
    """One training frame, stored as raw encoder inputs so features are
    recomputed with the current encoder weights on every step."""

    det_raw: np.ndarray  # (N, D)
    trk_raw: np.ndarray  # (M, D)
    labels: np.ndarray  # (N,) 1 = TP
    tau: float | None  # oracle threshold, None for frames without TPs
    aff_target: np.ndarray | None = None  # (M, N) correspondence, 1 = same object
    aff_cols: np.ndarray | None = None  # detection columns used for association
    scores: np.ndarray | None = None  # raw detector scores, for evaluation only

    def __post_init__(self):
        if self.det_raw.shape[0] != len(self.labels):
            raise LengthMismatch("one label per detection row required")


def frame_head_widths(feature_dim: int) -> tuple[int, ...]:
    return (feature_dim, 32, 8, 1)


def instance_head_widths(feature_dim: int) -> tuple[int, ...]:
    return (2 * feature_dim, 32, 8, 1)


def edge_widths(feature_dim: int) -> tuple[int, ...]:
    return (2 * feature_dim, 32, 1)


class SelectorModel:
    """Shared raw-box encoder plus a selection head and an optional edge head.

    ``mode="frame"`` regresses one threshold per frame from max-pooled object
    features; ``mode="instance"`` scores each detection given the max-pooled
    tracklet context. The edge head, when present, turns tracklet/detection
    feature pairs into association affinities.
    """

    def __init__(self, mode: str, encoder: FeatureEncoder, head: Mlp, config: SelectorConfig = SelectorConfig(), edge: Mlp | None = None):
        if mode not in ("frame", "instance"):
            raise ValueError(f"unknown selector mode {mode!r}")
        f = encoder.feature_dim
        want = frame_head_widths(f)[0] if mode == "frame" else instance_head_widths(f)[0]
        if head.in_dim != want or head.out_dim != 1:
            raise DimensionMismatch(f"{mode} head must map {want} -> 1, got {head.widths}")
        if edge is not None and (edge.in_dim != 2 * f or edge.out_dim != 1):
            raise DimensionMismatch(f"edge head must map {2 * f} -> 1, got {edge.widths}")
        self.mode = mode
        self.encoder = encoder
        self.head = head
        self.config = config
        self.edge = edge

    @classmethod
    def init(cls, mode: str, feature_dim: int = 128, hidden: int = 64, history: int = 5, with_edge: bool = False, config: SelectorConfig = SelectorConfig(), seed: int = 0) -> "SelectorModel":
        rng = np.random.default_rng(seed)
        enc = FeatureEncoder.init(feature_dim, hidden, history, rng)
        widths = frame_head_widths(feature_dim) if mode == "frame" else instance_head_widths(feature_dim)
        head = Mlp.init(MlpSpec(widths), rng)
        edge = Mlp.init(MlpSpec(edge_widths(feature_dim)), rng) if with_edge else None
        return cls(mode, enc, head, config, edge)

    @property
    def feature_dim(self) -> int:
        return self.encoder.feature_dim

    def params(self) -> list[np.ndarray]:
        out = self.encoder.mlp.params() + self.head.params()
        if self.edge is not None:
            out += self.edge.params()
        return out

    # -- inference ---------------------------------------------------------

    def features(self, raw: np.ndarray) -> np.ndarray:
        return self.encoder(raw)

    def frame_threshold(self, feats: np.ndarray) -> float:
        """Threshold from the max-pooled feature set; ``-inf`` (keep all) when empty."""
        if self.mode != "frame":
            raise ValueError("frame_threshold needs a frame-mode model")
        feats = np.asarray(feats, dtype=np.float64).reshape(-1, self.feature_dim)
        if feats.shape[0] == 0:
            return -math.inf
        pooled, _ = maxpool_set(feats)
        return float(self.head(pooled[None, :])[0, 0])

    def context(self, trk_feats: np.ndarray) -> np.ndarray:
        trk_feats = np.asarray(trk_feats, dtype=np.float64).reshape(-1, self.feature_dim)
        if trk_feats.shape[0] == 0:
            return np.zeros(self.feature_dim)
        return maxpool_set(trk_feats)[0]

    def instance_probs(self, det_feats: np.ndarray, trk_feats: np.ndarray) -> np.ndarray:
        if self.mode != "instance":
            raise ValueError("instance_probs needs an instance-mode model")
        det_feats = np.asarray(det_feats, dtype=np.float64).reshape(-1, self.feature_dim)
        if det_feats.shape[0] == 0:
            return np.zeros(0)
        ctx = self.context(trk_feats)
        x = np.hstack([det_feats, np.broadcast_to(ctx, det_feats.shape)])
        return sigmoid(self.head(x)[:, 0])

    def instance_prob(self, det_feat: np.ndarray, trk_feats: np.ndarray) -> float:
        return float(self.instance_probs(np.asarray(det_feat)[None, :], trk_feats)[0])

    def affinity(self, trk_feats: np.ndarray, det_feats: np.ndarray) -> np.ndarray:
        """Tracklet x detection affinities in (0, 1) after one mean-aggregation round."""
        if self.edge is None:
            raise ValueError("model has no edge head")
        m, n = len(trk_feats), len(det_feats)
        if m == 0 or n == 0:
            return np.zeros((m, n))
        ht, hd = _message_pass(np.asarray(trk_feats), np.asarray(det_feats))
        x = _pair_inputs(ht, hd)
        return sigmoid(self.edge(x)[:, 0]).reshape(m, n)

    # -- training ----------------------------------------------------------

    def loss_and_grads(self, batch: Sequence[FrameSample], cfg: TrainConfig = TrainConfig()):
        f = self.feature_dim
        det_off, trk_off, rows = [], [], []
        pos = 0
        for s in batch:
            det_off.append(pos)
            rows.append(s.det_raw)
            pos += len(s.det_raw)
            trk_off.append(pos)
            rows.append(s.trk_raw)
            pos += len(s.trk_raw)
        raw = np.vstack([r.reshape(-1, self.encoder.mlp.in_dim) for r in rows]) if pos else np.zeros((0, self.encoder.mlp.in_dim))
        feats, enc_cache = self.encoder.mlp.forward(raw) if pos else (np.zeros((0, f)), None)
        dfeats = np.zeros_like(feats)

        sel_loss, head_grads = self._selection_term(batch, feats, dfeats, det_off, trk_off, cfg.selection_weight)
        aff_loss, edge_grads = 0.0, None
        if self.edge is not None:
            aff_loss, edge_grads = self._affinity_term(batch, feats, dfeats, det_off, trk_off, cfg.affinity_weight)

        if enc_cache is not None:
            _, enc_grads = self.encoder.mlp.backward(enc_cache, dfeats)
        else:
            enc_grads = [np.zeros_like(p) for p in self.encoder.mlp.params()]
        grads = enc_grads + head_grads
        if self.edge is not None:
            grads += edge_grads
        return cfg.selection_weight * sel_loss + cfg.affinity_weight * aff_loss, grads

    def _selection_term(self, batch, feats, dfeats, det_off, trk_off, weight):
        zero = [np.zeros_like(p) for p in self.head.params()]
        if self.mode == "frame":
            used = [k for k, s in enumerate(batch) if s.tau is not None and len(s.det_raw) + len(s.trk_raw) > 0]
            if not used:
                return 0.0, zero
            # each sample's rows are contiguous: detections then tracklets
            idx = np.concatenate([np.arange(det_off[k], trk_off[k] + len(batch[k].trk_raw)) for k in used])
            offsets = np.concatenate([[0], np.cumsum([len(batch[k].det_raw) + len(batch[k].trk_raw) for k in used])])
            sub = feats[idx]
            pooled, arg = segment_maxpool(sub, offsets)
            pred, cache = self.head.forward(pooled)
            target = np.array([batch[k].tau for k in used])
            loss, dpred = l2_mean_with_grad(pred[:, 0], target)
            dpooled, grads = self.head.backward(cache, weight * dpred[:, None])
            dsub = segment_maxpool_backward(dpooled, arg, len(sub))
            np.add.at(dfeats, idx, dsub)
            return loss, grads

        used = [k for k, s in enumerate(batch) if len(s.det_raw) > 0]
        if not used:
            return 0.0, zero
        trk_idx = np.concatenate([np.arange(trk_off[k], trk_off[k] + len(batch[k].trk_raw)) for k in used]).astype(np.intp)
        trk_offsets = np.concatenate([[0], np.cumsum([len(batch[k].trk_raw) for k in used])])
        ctx, arg = segment_maxpool(feats[trk_idx], trk_offsets)
        det_idx = np.concatenate([np.arange(det_off[k], det_off[k] + len(batch[k].det_raw)) for k in used])
        owner = np.concatenate([np.full(len(batch[k].det_raw), i) for i, k in enumerate(used)])
        x = np.hstack([feats[det_idx], ctx[owner]])
        logits, cache = self.head.forward(x)
        target = np.concatenate([batch[k].labels for k in used])
        loss, dlogit = bce_logits_mean_with_grad(logits[:, 0], target)
        dx, grads = self.head.backward(cache, weight * dlogit[:, None])
        f = self.feature_dim
        np.add.at(dfeats, det_idx, dx[:, :f])
        dctx = np.zeros_like(ctx)
        np.add.at(dctx, owner, dx[:, f:])
        dtrk = segment_maxpool_backward(dctx, arg, len(trk_idx))
        np.add.at(dfeats, trk_idx, dtrk)
        return loss, grads

    def _affinity_term(self, batch, feats, dfeats, det_off, trk_off, weight):
        zero = [np.zeros_like(p) for p in self.edge.params()]
        inputs, targets, metas = [], [], []
        for k, s in enumerate(batch):
            if s.aff_target is None or s.aff_cols is None:
                continue
            m, cols = len(s.trk_raw), np.asarray(s.aff_cols, dtype=np.intp)
            if m == 0 or len(cols) == 0:
                continue
            t_idx = np.arange(trk_off[k], trk_off[k] + m)
            d_idx = det_off[k] + cols
            ht, hd = _message_pass(feats[t_idx], feats[d_idx])
            inputs.append(_pair_inputs(ht, hd))
            targets.append(np.asarray(s.aff_target, dtype=np.float64)[:, cols].ravel())
            metas.append((t_idx, d_idx))
        if not inputs:
            return 0.0, zero
        x = np.vstack(inputs)
        logits, cache = self.edge.forward(x)
        loss, dlogit = bce_logits_mean_with_grad(logits[:, 0], np.concatenate(targets))
        dx, grads = self.edge.backward(cache, weight * dlogit[:, None])
        f = self.feature_dim
        pos = 0
        for t_idx, d_idx in metas:
            m, n = len(t_idx), len(d_idx)
            block = dx[pos : pos + m * n].reshape(m, n, 2 * f)
            pos += m * n
            dht = block[:, :, :f].sum(axis=1)
            dhd = block[:, :, f:].sum(axis=0)
            # h_t = f_t + mean(f_d), h_d = f_d + mean(f_t)
            np.add.at(dfeats, t_idx, dht + dhd.sum(axis=0) / m)
            np.add.at(dfeats, d_idx, dhd + dht.sum(axis=0) / n)
        return loss, grads

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "mode": self.mode,
            "history": self.encoder.history,
            "config": asdict(self.config),
            "encoder": self.encoder.mlp.to_dict(),
            "head": self.head.to_dict(),
            "edge": None if self.edge is None else self.edge.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SelectorModel":
        if d.get("format") != MODEL_FORMAT:
            raise ValueError("not a selector model document")
        if d.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported model version {d.get('version')!r}")
        enc = FeatureEncoder(Mlp.from_dict(d["encoder"]), int(d["history"]))
        edge = None if d.get("edge") is None else Mlp.from_dict(d["edge"])
        return cls(d["mode"], enc, Mlp.from_dict(d["head"]), SelectorConfig(**d["config"]), edge)

    def save(self, path) -> None:
        # repr-based float output round-trips every double exactly
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "SelectorModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _message_pass(trk: np.ndarray, det: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return trk + det.mean(axis=0), det + trk.mean(axis=0)


def _pair_inputs(ht: np.ndarray, hd: np.ndarray) -> np.ndarray:
    m, n = len(ht), len(hd)
    return np.hstack([np.repeat(ht, n, axis=0), np.tile(hd, (m, 1))])
