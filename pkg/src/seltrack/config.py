"""Run configuration: one versioned JSON document, unknown keys rejected."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .assignment import MatchCriterion
from .neural import TrainConfig
from .selection import SelectorConfig
from .simulator import SimConfig, preset
from .tracker import TrackerConfig

CONFIG_VERSION = 1


class ConfigError(ValueError):
    pass


def _build(cls, data, where: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    vals = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
    try:
        return cls(**vals)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}: {e}") from None


@dataclass
class RunConfig:
    seed: int = 0
    preset: str = "default"
    n_sequences: int = 20
    paths: dict = field(default_factory=dict)
    selector: SelectorConfig = field(default_factory=SelectorConfig)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=20, optimizer="adam"))
    sim: SimConfig | None = None
    criteria: list = field(default_factory=lambda: [MatchCriterion("iou3d", 0.25)])

    def __post_init__(self):
        if not self.criteria:
            raise ConfigError("criteria must be non-empty")
        if self.n_sequences < 1:
            raise ConfigError("n_sequences must be >= 1")
        if not self.train.learning_rate > 0:
            raise ConfigError("train.learning_rate must be > 0")

    def sim_config(self) -> SimConfig:
        """Explicit ``sim`` block if present, else the named preset; seeded by ``seed``."""
        base = self.sim if self.sim is not None else preset(self.preset)
        return SimConfig(**{**asdict(base), "seed": self.seed})

    def to_dict(self) -> dict:
        return {
            "version": CONFIG_VERSION,
            "seed": self.seed,
            "preset": self.preset,
            "n_sequences": self.n_sequences,
            "paths": dict(self.paths),
            "selector": asdict(self.selector),
            "tracker": asdict(self.tracker),
            "train": asdict(self.train),
            "sim": None if self.sim is None else self.sim.to_dict(),
            "criteria": [asdict(c) for c in self.criteria],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        if d.get("version") != CONFIG_VERSION:
            raise ConfigError(f"unsupported or missing config version {d.get('version')!r} (expected {CONFIG_VERSION})")
        known = {f.name for f in fields(cls)} | {"version"}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown keys {unknown}")
        crit = d.get("criteria", [{"kind": "iou3d", "threshold": 0.25}])
        if not isinstance(crit, list):
            raise ConfigError("criteria: expected a list")
        paths = d.get("paths", {})
        if not isinstance(paths, dict) or not all(isinstance(v, str) for v in paths.values()):
            raise ConfigError("paths: expected an object of strings")
        for k, v in paths.items():
            if k.startswith("in_") and not Path(v).is_file():
                raise ConfigError(f"paths.{k}: {v} is not a readable file")
        sim = d.get("sim")
        try:
            name = d.get("preset", "default")
            preset(name)
            return cls(
                seed=_int(d.get("seed", 0), "seed"),
                preset=name,
                n_sequences=_int(d.get("n_sequences", 20), "n_sequences"),
                paths=paths,
                selector=_build(SelectorConfig, d.get("selector"), "selector"),
                tracker=_build(TrackerConfig, d.get("tracker"), "tracker"),
                train=_build(TrainConfig, d.get("train"), "train") if "train" in d else TrainConfig(epochs=20, optimizer="adam"),
                sim=None if sim is None else _build(SimConfig, sim, "sim"),
                criteria=[_build(MatchCriterion, c, f"criteria[{i}]") for i, c in enumerate(crit)],
            )
        except ConfigError:
            raise
        except ValueError as e:
            raise ConfigError(str(e)) from None


def _int(v, where: str) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{where}: expected an integer")
    return v


def load_config(path) -> RunConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e.msg} at line {e.lineno})") from None
    return RunConfig.from_dict(doc)


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")
