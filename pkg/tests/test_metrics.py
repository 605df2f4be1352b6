import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_sweep
from seltrack.assignment import MatchCriterion
from seltrack.geometry import Box3D
from seltrack.metrics import (
    REPORT_COLUMNS,
    EmptyGroundTruth,
    amota_suite,
    clear_counts,
    clear_metrics,
    evaluate,
    format_table,
    recall_cutoffs,
    reports_csv,
)

A = Box3D(10, 0, 0, 4, 2, 1.5, 0.3)
B = Box3D(20, 5, 0, 4, 2, 1.5, -1.0)
FAR = Box3D(50, 50, 0, 4, 2, 1.5)


def clear_fixture():
    """Two GT tracks over three frames with exactly one FP, one FN and one IDS."""
    gts = [[(1, A), (2, B)]] * 3
    hyps = [
        [(10, A, 1.0), (20, B, 1.0)],
        [(10, A, 1.0), (30, FAR, 0.5)],  # GT 2 missed, a false track elsewhere
        [(10, A, 1.0), (21, B, 1.0)],  # GT 2 resumed under a new id
    ]
    return hyps, gts


def two_track_fixture():
    """Two true tracks of differing confidence plus one low-confidence false track."""
    gts, hyps = [], []
    for t in range(6):
        a, b = A.moved(dx=t), B.moved(dx=t)
        gts.append([(1, a), (2, b)])
        f = [(10, a, 0.9)]
        if t != 2:
            f.append((20, b, 0.6))
        f.append((30, FAR.moved(dy=t), 0.2))
        hyps.append(f)
    return hyps, gts


def test_hand_counted_fixture():
    hyps, gts = clear_fixture()
    r = clear_metrics(hyps, gts)
    assert (r.numGT, r.FP, r.FN, r.IDS) == (6, 1, 1, 1)
    assert r.MOTA == 0.5
    assert r.FRAG == 1


def test_perfect_tracking():
    gts = [[(1, A.moved(dx=t)), (2, B.moved(dx=t))] for t in range(5)]
    hyps = [[(7, a, 1.0), (9, b, 1.0)] for (_, a), (_, b) in gts]
    r = evaluate([(hyps, gts)])
    assert (r.MOTA, r.MOTP, r.FP, r.FN, r.IDS) == (1.0, 1.0, 0, 0, 0)
    assert r.AMOTA == 1.0 and r.sAMOTA == 1.0 and r.AMOTP == 1.0


def test_perfect_tracking_split_confidence():
    # below recall 0.5 only the confident track survives: MOTA 0.5 there, 1 above
    gts = [[(1, A.moved(dx=t)), (2, B.moved(dx=t))] for t in range(5)]
    hyps = [[(7, a, 1.0), (9, b, 0.5)] for (_, a), (_, b) in gts]
    r = evaluate([(hyps, gts)])
    assert r.AMOTA == pytest.approx(0.75) and r.sAMOTA == 1.0


def test_fragmentation_example():
    gts = [[(1, A)] for _ in range(5)]
    hyps = [[(4, A, 1.0)] if t != 2 else [] for t in range(5)]
    r = clear_metrics(hyps, gts)
    assert r.FRAG == 1 and r.FN == 1 and r.IDS == 0


def test_continuity_preference():
    # both hypotheses overlap the GT in frame 1; keeping the earlier pair avoids a switch
    gts = [[(1, A)], [(1, A)]]
    close = A.moved(dx=0.05)
    hyps = [[(5, A.moved(dx=0.4), 1.0)], [(5, A.moved(dx=0.4), 1.0), (6, close, 1.0)]]
    assert clear_metrics(hyps, gts).IDS == 0


def test_empty_ground_truth():
    with pytest.raises(EmptyGroundTruth):
        clear_metrics([[]], [[]])
    with pytest.raises(EmptyGroundTruth):
        amota_suite([([[]], [[]])])


def test_empty_hypotheses():
    gts = [[(1, A)]] * 3
    r = evaluate([([[]] * 3, gts)])
    assert r.AMOTA == 0.0 and r.sAMOTA == 0.0 and r.FN == 3


def test_duplicate_ids_rejected():
    with pytest.raises(ValueError):
        clear_metrics([[(1, A), (1, B)]], [[(1, A)]])


def test_distance_criterion_motp():
    gts = [[(1, A)]]
    hyps = [[(3, A.moved(dx=0.5), 1.0)]]
    r = clear_metrics(hyps, gts, MatchCriterion("distance", 2.0))
    assert r.MOTP == pytest.approx(0.75)


def test_sweep_matches_brute_force_on_two_track_fixture():
    seqs = [two_track_fixture()]
    for crit in (MatchCriterion(), MatchCriterion("distance", 2.0)):
        got = amota_suite(seqs, crit)
        want = brute_sweep(seqs, crit)
        assert (got.sAMOTA, got.AMOTA, got.AMOTP) == want


def test_recall_cutoffs():
    assert recall_cutoffs([0.9, 0.5, 0.7], 4, steps=4) == [0.9, 0.7, 0.5, None]


@st.composite
def random_scene(draw):
    n_frames = draw(st.integers(1, 6))
    n_obj = draw(st.integers(1, 3))
    gts, hyps = [], []
    for t in range(n_frames):
        g = [(i, Box3D(10.0 * i + t, 0, 0, 4, 2, 1.5)) for i in range(n_obj) if draw(st.booleans()) or t == 0]
        h = []
        for i, box in g:
            if draw(st.booleans()):
                h.append((draw(st.integers(0, 4)) + 10 * i, box.moved(dx=draw(st.floats(-0.3, 0.3))), draw(st.sampled_from([0.1, 0.5, 0.9]))))
        if draw(st.booleans()):
            h.append((99, Box3D(200, 200, 0, 4, 2, 1.5), draw(st.sampled_from([0.1, 0.5]))))
        gts.append(g)
        hyps.append(h)
    return hyps, gts


@settings(max_examples=60, deadline=None)
@given(random_scene())
def test_sweep_matches_brute_force_random(scene):
    got = amota_suite([scene])
    assert (got.sAMOTA, got.AMOTA, got.AMOTP) == pytest.approx(brute_sweep([scene], MatchCriterion()), abs=1e-12)
    assert 0.0 <= got.AMOTA <= 1.0 and 0.0 <= got.sAMOTA <= 1.0


@settings(max_examples=60, deadline=None)
@given(random_scene())
def test_removing_false_track_never_hurts(scene):
    hyps, gts = scene
    clean = [[h for h in f if h[0] != 99] for f in hyps]
    assert clear_metrics(clean, gts).MOTA >= clear_metrics(hyps, gts).MOTA


@settings(max_examples=60, deadline=None)
@given(random_scene(), st.permutations(list(range(100))))
def test_relabeling_invariance(scene, perm):
    hyps, gts = scene
    relabeled = [[(perm[h[0]], h[1], h[2]) for h in f] for f in hyps]
    a, b = clear_metrics(hyps, gts), clear_metrics(relabeled, gts)
    assert (a.MOTA, a.IDS, a.FRAG, a.FP, a.FN) == (b.MOTA, b.IDS, b.FRAG, b.FP, b.FN)


@settings(max_examples=40, deadline=None)
@given(random_scene(), random_scene())
def test_concatenation_sums_counts(s1, s2):
    c1, c2 = clear_counts(*s1), clear_counts(*s2)
    merged = evaluate([s1, s2])
    tot = c1 + c2
    assert (merged.FP, merged.FN, merged.IDS, merged.FRAG, merged.numGT) == (tot.fp, tot.fn, tot.ids, tot.frag, tot.num_gt)
    assert merged.MOTA == pytest.approx(1 - (tot.fp + tot.fn + tot.ids) / tot.num_gt)


def test_report_outputs():
    hyps, gts = clear_fixture()
    rep = evaluate([(hyps, gts)])
    text = reports_csv([rep])
    head = text.splitlines()[0].split(",")
    assert head[1:10] == list(REPORT_COLUMNS)
    assert "0.500000" in text
    table = format_table([rep])
    assert table.splitlines()[0].split()[1:] == list(REPORT_COLUMNS)
