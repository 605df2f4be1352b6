"""Small numpy neural-network toolkit with hand-written backprop.

Only the pieces the selectors need: dense ReLU stacks, set max-pooling,
sigmoid, L2 / binary cross-entropy losses, SGD and Adam, and the raw-box
feature encoder.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

BCE_EPS = 1e-7


class DimensionMismatch(ValueError):
    pass


class EmptySet(ValueError):
    pass


class DivergenceDetected(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# dense stacks


@dataclass(frozen=True)
class MlpSpec:
    widths: tuple[int, ...]
    seed: int = 0
    init: str = "glorot_uniform"

    def __post_init__(self):
        if len(self.widths) < 2:
            raise ValueError("an MLP needs at least an input and an output width")
        if any(int(w) <= 0 for w in self.widths):
            raise ValueError(f"widths must be positive, got {self.widths}")


class Mlp:
    """Affine layers with ReLU between them and a linear output.

    Weights are stored ``(fan_in, fan_out)`` so a batch ``x`` of shape
    ``(B, fan_in)`` maps as ``x @ W + b``.
    """

    def __init__(self, weights: Sequence[np.ndarray], biases: Sequence[np.ndarray]):
        if len(weights) != len(biases) or not weights:
            raise ValueError("need one bias per weight matrix")
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        for w, b in zip(self.weights, self.biases):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise DimensionMismatch(f"bad layer shapes {w.shape} / {b.shape}")
        for w0, w1 in zip(self.weights, self.weights[1:]):
            if w0.shape[1] != w1.shape[0]:
                raise DimensionMismatch(f"layer widths do not chain: {w0.shape} -> {w1.shape}")

    @classmethod
    def init(cls, spec: MlpSpec | Sequence[int], rng: np.random.Generator | None = None) -> "Mlp":
        if not isinstance(spec, MlpSpec):
            spec = MlpSpec(tuple(int(w) for w in spec))
        rng = rng if rng is not None else np.random.default_rng(spec.seed)
        ws, bs = [], []
        for fan_in, fan_out in zip(spec.widths[:-1], spec.widths[1:]):
            a = math.sqrt(6.0 / (fan_in + fan_out))
            ws.append(rng.uniform(-a, a, size=(fan_in, fan_out)))
            bs.append(np.zeros(fan_out))
        return cls(ws, bs)

    @classmethod
    def zeros(cls, widths: Sequence[int]) -> "Mlp":
        return cls(
            [np.zeros((a, b)) for a, b in zip(widths[:-1], widths[1:])],
            [np.zeros(b) for b in widths[1:]],
        )

    @property
    def widths(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "Mlp":
        return Mlp([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def forward(self, x: np.ndarray):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise DimensionMismatch(f"expected input (B, {self.in_dim}), got {x.shape}")
        acts = [x]
        pre = []
        h = x
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            pre.append(z)
            h = z if k == last else np.maximum(z, 0.0)
            acts.append(h)
        return h, (acts, pre)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache, dy: np.ndarray):
        """Return ``(dx, grads)`` with ``grads`` ordered like :meth:`params`."""
        acts, pre = cache
        grads: list[np.ndarray] = [None] * (2 * len(self.weights))  # type: ignore[list-item]
        g = dy
        for k in range(len(self.weights) - 1, -1, -1):
            if k != len(self.weights) - 1:
                g = g * (pre[k] > 0)
            grads[2 * k] = acts[k].T @ g
            grads[2 * k + 1] = g.sum(axis=0)
            g = g @ self.weights[k].T
        return g, grads

    def to_dict(self) -> dict:
        return {
            "widths": list(self.widths),
            "weights": [w.ravel().tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Mlp":
        widths = [int(v) for v in d["widths"]]
        ws = [np.array(w, dtype=np.float64).reshape(a, b) for w, a, b in zip(d["weights"], widths[:-1], widths[1:])]
        bs = [np.array(b, dtype=np.float64) for b in d["biases"]]
        return cls(ws, bs)


def mlp_forward(spec: MlpSpec | Sequence[int], weights: Sequence[tuple[np.ndarray, np.ndarray]], x) -> np.ndarray:
    """Functional forward pass: ``weights`` is a list of ``(W, b)`` pairs."""
    widths = spec.widths if isinstance(spec, MlpSpec) else tuple(spec)
    net = Mlp([w for w, _ in weights], [b for _, b in weights])
    if net.widths != tuple(widths):
        raise DimensionMismatch(f"weights give widths {net.widths}, spec says {tuple(widths)}")
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    y = net(x[None, :] if single else x)
    return y[0] if single else y


# ---------------------------------------------------------------------------
# set pooling


def maxpool_set(vectors) -> tuple[np.ndarray, np.ndarray]:
    """Elementwise maximum over a non-empty set; also returns the argmax rows."""
    v = np.asarray(vectors, dtype=np.float64)
    if v.ndim != 2 or v.shape[0] == 0:
        raise EmptySet("max-pooling needs at least one vector")
    idx = np.argmax(v, axis=0)  # first occurrence wins ties
    return v[idx, np.arange(v.shape[1])], idx


def segment_maxpool(x: np.ndarray, offsets: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    """Max-pool consecutive row segments ``x[offsets[k]:offsets[k+1]]``.

    Empty segments pool to zeros with argmax ``-1``.
    """
    nseg = len(offsets) - 1
    out = np.zeros((nseg, x.shape[1]))
    arg = np.full((nseg, x.shape[1]), -1, dtype=np.intp)
    cols = np.arange(x.shape[1])
    for k in range(nseg):
        lo, hi = offsets[k], offsets[k + 1]
        if hi > lo:
            local = np.argmax(x[lo:hi], axis=0)
            arg[k] = local + lo
            out[k] = x[arg[k], cols]
    return out, arg


def segment_maxpool_backward(dpooled: np.ndarray, arg: np.ndarray, n_rows: int) -> np.ndarray:
    dx = np.zeros((n_rows, dpooled.shape[1]))
    valid = arg >= 0
    cols = np.broadcast_to(np.arange(dpooled.shape[1]), arg.shape)
    np.add.at(dx, (arg[valid], cols[valid]), dpooled[valid])
    return dx


# ---------------------------------------------------------------------------
# activations and losses


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out if out.ndim else float(out)


def l2_loss(pred: float, target: float) -> float:
    return float((pred - target) ** 2)


def bce_loss(pred: float, target: float) -> float:
    p = min(max(float(pred), BCE_EPS), 1.0 - BCE_EPS)
    return float(-(target * math.log(p) + (1.0 - target) * math.log(1.0 - p)))


def l2_mean_with_grad(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    d = pred - target
    n = max(len(d), 1)
    return float((d**2).sum() / n), 2.0 * d / n


def bce_logits_mean_with_grad(logits: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean BCE of ``sigmoid(logits)``, computed stably, and its logit gradient."""
    n = max(len(logits), 1)
    loss = np.logaddexp(0.0, logits) - target * logits
    return float(loss.sum() / n), (sigmoid(logits) - target) / n


# ---------------------------------------------------------------------------
# raw-box feature encoder

# field scales for (x, y, z, l, w, h, sin, cos, score)
BOX_SCALE = np.array([50.0, 50.0, 2.0, 5.0, 2.0, 2.0, 1.0, 1.0, 5.0])
# history slots store center offsets relative to the encoded box
HIST_SCALE = np.array([5.0, 5.0, 2.0, 5.0, 2.0, 2.0, 1.0, 1.0, 5.0])
SLOT = 9


def raw_input_dim(history: int) -> int:
    return SLOT + history * SLOT + history


def _slot(box, score) -> np.ndarray:
    return np.array(
        [box.x, box.y, box.z, box.l, box.w, box.h, math.sin(box.theta), math.cos(box.theta), score],
        dtype=np.float64,
    )


def raw_box_input(box, score: float, history: Sequence[tuple] = (), max_history: int = 5) -> np.ndarray:
    """Flatten ``[x, y, z, l, w, h, sin, cos, s]`` plus a zero-padded history and its mask.

    ``history`` holds ``(Box3D, score)`` pairs, oldest first; only the most
    recent ``max_history`` are kept.
    """
    cur = _slot(box, score)
    vec = np.zeros(raw_input_dim(max_history))
    vec[:SLOT] = cur / BOX_SCALE
    recent = list(history)[-max_history:]
    for k, (hb, hs) in enumerate(recent):
        s = _slot(hb, hs)
        s[:3] -= cur[:3]
        vec[SLOT + k * SLOT : SLOT + (k + 1) * SLOT] = s / HIST_SCALE
        vec[SLOT + max_history * SLOT + k] = 1.0
    return vec


class FeatureEncoder:
    """Learned embedding of raw box tuples into fixed-length feature vectors."""

    def __init__(self, mlp: Mlp, history: int = 5):
        if mlp.in_dim != raw_input_dim(history):
            raise DimensionMismatch(f"encoder input {mlp.in_dim} does not fit history {history}")
        self.mlp = mlp
        self.history = history

    @classmethod
    def init(cls, feature_dim: int = 128, hidden: int = 64, history: int = 5, rng=None) -> "FeatureEncoder":
        return cls(Mlp.init(MlpSpec((raw_input_dim(history), hidden, feature_dim)), rng), history)

    @property
    def feature_dim(self) -> int:
        return self.mlp.out_dim

    def raw(self, box, score, history=()) -> np.ndarray:
        return raw_box_input(box, score, history, self.history)

    def __call__(self, raw: np.ndarray) -> np.ndarray:
        if raw.shape[0] == 0:
            return np.zeros((0, self.feature_dim))
        return self.mlp(raw)


def encode_detection(encoder: FeatureEncoder, det, history: Sequence[tuple] | None = None) -> np.ndarray:
    """Feature vector of one detection (anything with ``.box`` and ``.score``)."""
    raw = encoder.raw(det.box, det.score, history or ())
    return encoder(raw[None, :])[0]


# ---------------------------------------------------------------------------
# optimisation


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 200
    optimizer: str = "sgd"
    seed: int = 0
    selection_weight: float = 1.0
    affinity_weight: float = 1.0
    smooth_window: int = 5

    def __post_init__(self):
        if self.learning_rate < 0 or not math.isfinite(self.learning_rate):
            raise ValueError("learning rate must be a finite non-negative number")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")


class Sgd:
    def __init__(self, params: list[np.ndarray], lr: float):
        self.params = params
        self.lr = lr

    def step(self, grads):
        for p, g in zip(self.params, grads):
            p -= self.lr * g


class Adam:
    def __init__(self, params: list[np.ndarray], lr: float, b1=0.9, b2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class TrainResult:
    model: object
    losses: list[float] = field(default_factory=list)

    def write_loss_csv(self, path) -> None:
        write_loss_csv(self.losses, path)


def write_loss_csv(losses: Iterable[float], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss"])
        for k, v in enumerate(losses, 1):
            w.writerow([k, repr(float(v))])


def train(model, dataset: Sequence, cfg: TrainConfig | None = None, progress: Callable | None = None) -> TrainResult:
    """Minibatch training of ``model`` in place.

    ``model`` must provide ``params()`` and ``loss_and_grads(batch, cfg)``
    returning ``(loss, grads)`` aligned with ``params()``. The reported loss
    per epoch is the mean of the minibatch losses.
    """
    cfg = cfg or TrainConfig()
    if len(dataset) == 0:
        raise ValueError("training set is empty")
    params = model.params()
    opt = Adam(params, cfg.learning_rate) if cfg.optimizer == "adam" else Sgd(params, cfg.learning_rate)
    rng = np.random.default_rng(cfg.seed)
    losses = []
    n = len(dataset)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total, count = 0.0, 0
        for lo in range(0, n, cfg.batch_size):
            batch = [dataset[i] for i in order[lo : lo + cfg.batch_size]]
            loss, grads = model.loss_and_grads(batch, cfg)
            if not math.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
                raise DivergenceDetected(f"non-finite loss or gradient at epoch {epoch + 1}")
            opt.step(grads)
            total += loss
            count += 1
        losses.append(total / count)
        if progress is not None:
            progress(epoch + 1, losses[-1])
    return TrainResult(model, losses)


def smoothed(values: Sequence[float], window: int) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if len(v) < window or window <= 1:
        return v
    return np.convolve(v, np.ones(window) / window, mode="valid")


def numeric_grad(f: Callable[[], float], param: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of ``f`` with respect to ``param`` (perturbed in place)."""
    g = np.zeros_like(param)
    flat = param.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + step
        fp = f()
        flat[i] = old - step
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * step)
    return g
