import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seltrack.geometry import Box3D, Detection
from seltrack.neural import Mlp
from seltrack.selection import (
    EmptyTpError,
    LengthMismatch,
    ScoreSplit,
    SelectorConfig,
    SelectorModel,
    gt_instance_labels,
    gt_threshold,
    high_pass_filter,
    oracle_threshold,
    select_instances,
)

CFG = SelectorConfig()
B = Box3D(0, 0, 0, 4, 2, 1.5)


def dets(scores):
    return [Detection(B.moved(dx=5 * k), s) for k, s in enumerate(scores)]


def test_threshold_examples():
    assert gt_threshold(ScoreSplit([13.0, 3.5, 3.1], [])) == pytest.approx(0.1)
    assert gt_threshold(ScoreSplit([13.0], [1.0])) == 3.0
    assert gt_threshold(ScoreSplit([6.0], [])) == 3.0


def test_empty_tp_fallback():
    with pytest.raises(EmptyTpError) as e:
        gt_threshold(ScoreSplit([], [1.0, 2.0]))
    assert e.value.fallback == CFG.s_upper
    assert oracle_threshold(ScoreSplit([], [1.0])) == 3.0


def test_config_validation():
    with pytest.raises(ValueError):
        SelectorConfig(s_buff=-1)
    with pytest.raises(ValueError):
        SelectorConfig(lambda_thres=1.0)
    with pytest.raises(ValueError):
        SelectorConfig(iou_min=0)


scores = st.lists(st.floats(-20, 20, allow_nan=False), min_size=1, max_size=8)


@settings(max_examples=200)
@given(scores, st.lists(st.floats(-20, 20, allow_nan=False), max_size=8), st.floats(1e-3, 10), st.floats(-5, 10))
def test_oracle_preserves_every_tp(tp, fp, buff, upper):
    cfg = SelectorConfig(s_buff=buff, s_upper=upper)
    tau = gt_threshold(ScoreSplit(tp, fp), cfg)
    assert all(s > tau for s in tp)
    assert len(high_pass_filter(dets(tp), tau)) == len(tp)
    # FP scores play no part, in any order or multiplicity
    assert tau == gt_threshold(ScoreSplit(tp, list(reversed(fp)) * 2), cfg)


def test_zero_buffer_boundary():
    # with no buffer the lowest TP sits exactly on the threshold and the strict filter drops it
    tau = gt_threshold(ScoreSplit([5.0, 6.0], []), SelectorConfig(s_buff=0.0, s_upper=10.0))
    assert tau == 5.0
    assert [d.score for d in high_pass_filter(dets([5.0, 6.0]), tau)] == [6.0]


@settings(max_examples=100)
@given(scores, st.floats(-5, 5))
def test_unclamped_branch_shifts(tp, c):
    cfg = SelectorConfig(s_upper=1e6)
    shifted = gt_threshold(ScoreSplit([s + c for s in tp], []), cfg)
    assert shifted == pytest.approx(gt_threshold(ScoreSplit(tp, []), cfg) + c, abs=1e-9)


def test_high_pass_filter():
    d = dets([-0.39, 1.00, 1.77, 5.22])
    assert [x.score for x in high_pass_filter(d, 2.0)] == [5.22]
    assert high_pass_filter(d, -math.inf) == d
    assert high_pass_filter(d, 5.22) == []


@settings(max_examples=100)
@given(scores, st.floats(-20, 20), st.floats(-20, 20))
def test_filter_monotone(s, t1, t2):
    lo, hi = sorted((t1, t2))
    d = dets(s)
    kept_hi = high_pass_filter(d, hi)
    kept_lo = high_pass_filter(d, lo)
    assert all(x in kept_lo for x in kept_hi)


def test_select_instances():
    d = dets([1, 2, 3])
    assert [x.score for x in select_instances(d, [0.05, 0.1, 0.11])] == [3]
    assert select_instances(d, [1, 1, 1]) == d
    assert select_instances(d, [0, 0, 0]) == []
    assert len(select_instances(d, [0.0, 0.01, 0.0], SelectorConfig(lambda_thres=0.0))) == 1
    with pytest.raises(LengthMismatch):
        select_instances(d, [0.5])


def test_instance_labels():
    g = [B, B.moved(dx=20)]
    assert gt_instance_labels([Detection(b, 1.0) for b in g], g).tolist() == [1, 1]
    assert gt_instance_labels(dets([1, 2]), []).tolist() == [0, 0]


def _zero(model):
    for p in model.params():
        p[...] = 0.0
    return model


def test_zero_weights():
    rng = np.random.default_rng(0)
    f = _zero(SelectorModel.init("frame", feature_dim=8, hidden=6))
    assert f.frame_threshold(rng.normal(size=(4, 8))) == 0.0
    i = _zero(SelectorModel.init("instance", feature_dim=8, hidden=6))
    assert i.instance_prob(rng.normal(size=8), rng.normal(size=(3, 8))) == 0.5


def test_frame_threshold_pooling_properties():
    m = SelectorModel.init("frame", feature_dim=8, hidden=6, seed=2)
    rng = np.random.default_rng(1)
    f = rng.normal(size=8)
    one = m.frame_threshold(f[None, :])
    assert m.frame_threshold(np.vstack([f, f, f])) == one
    assert m.frame_threshold(np.zeros((0, 8))) == -math.inf
    x = rng.normal(size=(5, 8))
    assert m.frame_threshold(x) == m.frame_threshold(x[::-1])


def test_instance_probs_properties():
    m = SelectorModel.init("instance", feature_dim=8, hidden=6, seed=2)
    rng = np.random.default_rng(1)
    d = rng.normal(size=(4, 8)) * 10
    d[1] = d[0]
    p = m.instance_probs(d, rng.normal(size=(2, 8)))
    assert np.all((p > 0) & (p < 1))
    assert p[0] == p[1]
    # an empty tracklet set means a zero context vector
    np.testing.assert_allclose(m.instance_probs(d, np.zeros((0, 8))), m.instance_probs(d, np.zeros((1, 8))))


def test_wrong_head_rejected():
    m = SelectorModel.init("frame", feature_dim=8, hidden=6)
    with pytest.raises(ValueError):
        SelectorModel("instance", m.encoder, m.head)
    with pytest.raises(ValueError):
        SelectorModel("frame", m.encoder, Mlp.init((8, 3)))


@pytest.mark.parametrize("mode", ["frame", "instance"])
def test_model_round_trip_bit_exact(tmp_path, mode):
    m = SelectorModel.init(mode, feature_dim=8, hidden=6, with_edge=True, seed=5)
    path = tmp_path / "m.json"
    m.save(path)
    r = SelectorModel.load(path)
    assert r.mode == mode and r.config == m.config
    for a, b in zip(m.params(), r.params()):
        assert np.array_equal(a, b)
    path.write_text(path.read_text().replace('"version": 1', '"version": 9'))
    with pytest.raises(ValueError):
        SelectorModel.load(path)
