import json

import pytest

from seltrack.assignment import MatchCriterion
from seltrack.config import ConfigError, RunConfig, load_config, save_config


def test_round_trip(tmp_path):
    cfg = RunConfig(seed=4, preset="drift", criteria=[MatchCriterion("distance", 2.0)])
    p = tmp_path / "c.json"
    save_config(cfg, p)
    assert load_config(p) == cfg


def test_defaults_from_minimal_document():
    cfg = RunConfig.from_dict({"version": 1})
    assert cfg == RunConfig()
    assert cfg.sim_config().seed == 0


@pytest.mark.parametrize(
    "doc",
    [
        {},
        {"version": 2},
        {"version": 1, "colour": "red"},
        {"version": 1, "tracker": {"min_hitz": 3}},
        {"version": 1, "train": {"learning_rate": 0.0}},
        {"version": 1, "train": {"learning_rate": -1.0}},
        {"version": 1, "criteria": []},
        {"version": 1, "criteria": [{"kind": "giou", "threshold": 0.5}]},
        {"version": 1, "preset": "unknown"},
        {"version": 1, "seed": "seven"},
        {"version": 1, "paths": {"in_model": "/does/not/exist.json"}},
        {"version": 1, "sim": {"fp_rate": -2}},
    ],
)
def test_invalid_documents_rejected(doc):
    with pytest.raises(ConfigError):
        RunConfig.from_dict(doc)


def test_invalid_json(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(p)


def test_explicit_sim_block_overrides_preset():
    cfg = RunConfig.from_dict({"version": 1, "seed": 3, "sim": {"n_frames": 7}})
    sim = cfg.sim_config()
    assert sim.n_frames == 7 and sim.seed == 3
    assert json.loads(json.dumps(cfg.to_dict()))["sim"]["n_frames"] == 7
