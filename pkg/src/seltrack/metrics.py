"""CLEAR MOT counters and the recall-averaged sMOTA/AMOTA/AMOTP family.

Hypotheses are per-frame lists of objects with ``track_id``, ``box`` and
``confidence`` attributes (``TrackedBox``); ground truth is per-frame lists
of objects with ``id`` and ``box`` (``GTObject``). Plain ``(id, box)`` or
``(id, box, confidence)`` tuples are accepted too.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, fields
from typing import Sequence

import numpy as np

from .assignment import MatchCriterion, hungarian

RECALL_STEPS = 40
REPORT_COLUMNS = ("sAMOTA", "AMOTA", "AMOTP", "MOTA", "MOTP", "IDS", "FRAG", "FP", "FN")


class EmptyGroundTruth(ValueError):
    """No ground-truth boxes to evaluate against."""


@dataclass
class ClearCounts:
    """Additive CLEAR counters; derived scores are recomputed from sums."""

    num_gt: int = 0
    tp: int = 0
    fp: int = 0
    fn: int = 0
    ids: int = 0
    frag: int = 0
    quality_sum: float = 0.0

    def __add__(self, other: "ClearCounts") -> "ClearCounts":
        return ClearCounts(*(getattr(self, f.name) + getattr(other, f.name) for f in fields(self)))

    @property
    def mota(self) -> float:
        if self.num_gt == 0:
            raise EmptyGroundTruth("MOTA undefined without ground truth")
        return 1.0 - (self.fp + self.fn + self.ids) / self.num_gt

    @property
    def motp(self) -> float:
        return self.quality_sum / self.tp if self.tp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / self.num_gt if self.num_gt else 0.0


@dataclass
class MetricsReport:
    criterion: str
    MOTA: float
    MOTP: float
    IDS: int
    FRAG: int
    FP: int
    FN: int
    numGT: int
    recall: float
    sAMOTA: float = 0.0
    AMOTA: float = 0.0
    AMOTP: float = 0.0
    best_recall: float = 0.0

    def row(self) -> list:
        return [getattr(self, c) for c in REPORT_COLUMNS]


@dataclass
class SweepResult:
    sAMOTA: float
    AMOTA: float
    AMOTP: float
    best_recall: float
    cutoffs: list = field(default_factory=list)  # one per recall target, None when unattainable


def _hyp_items(frame):
    out = []
    for h in frame:
        if isinstance(h, tuple):
            out.append((h[0], h[1], h[2] if len(h) > 2 else 0.0))
        else:
            out.append((h.track_id, h.box, getattr(h, "confidence", 0.0)))
    return out


def _gt_items(frame):
    return [(g[0], g[1]) if isinstance(g, tuple) else (g.id, g.box) for g in frame]


def _check_unique(ids, what, k):
    if len(set(ids)) != len(ids):
        raise ValueError(f"duplicate {what} id in frame {k}")


def match_sequence(hyps: Sequence, gts: Sequence, criterion: MatchCriterion, cutoff: float | None = None) -> tuple[ClearCounts, list[float]]:
    """Count one sequence; returns counters and the confidences of matched hypotheses.

    Hypotheses with confidence below ``cutoff`` are dropped first. A pair
    matched in the previous frame is kept when it still passes the gate;
    the rest are assigned by gated Hungarian on the criterion cost.
    """
    if len(hyps) != len(gts):
        raise ValueError(f"hypotheses cover {len(hyps)} frames, ground truth {len(gts)}")
    c = ClearCounts()
    matched_conf: list[float] = []
    prev: dict = {}  # gt id -> hyp id matched in the previous frame
    last: dict = {}  # gt id -> last hyp id it was ever matched to
    was_tracked: dict = {}  # gt id -> tracked at its previous appearance
    for k, (hf, gf) in enumerate(zip(hyps, gts)):
        H = _hyp_items(hf)
        if cutoff is not None:
            H = [h for h in H if h[2] >= cutoff]
        G = _gt_items(gf)
        _check_unique([h[0] for h in H], "hypothesis", k)
        _check_unique([g[0] for g in G], "ground-truth", k)
        c.num_gt += len(G)
        ov = criterion.overlap([g[1] for g in G], [h[1] for h in H])
        ok = criterion.gate(ov)
        hyp_col = {h[0]: j for j, h in enumerate(H)}
        pairs = []
        used_r, used_c = set(), set()
        for i, g in enumerate(G):
            j = hyp_col.get(prev.get(g[0]))
            if j is not None and ok[i, j]:
                pairs.append((i, j))
                used_r.add(i)
                used_c.add(j)
        rows = [i for i in range(len(G)) if i not in used_r]
        cols = [j for j in range(len(H)) if j not in used_c]
        if rows and cols:
            sub = criterion.cost(ov[np.ix_(rows, cols)])
            for a, b in hungarian(sub).pairs:
                pairs.append((rows[a], cols[b]))
        now = {}
        for i, j in pairs:
            gid, hid = G[i][0], H[j][0]
            c.quality_sum += criterion.quality(float(ov[i, j]))
            matched_conf.append(float(H[j][2]))
            if gid in last and last[gid] != hid:
                c.ids += 1
            now[gid] = hid
        for gid, _ in G:
            tracked = gid in now
            # a fragmentation is a resumed match after a gap in a once-tracked GT
            if tracked and gid in last and was_tracked.get(gid) is False:
                c.frag += 1
            was_tracked[gid] = tracked
        last.update(now)
        c.tp += len(pairs)
        c.fp += len(H) - len(pairs)
        c.fn += len(G) - len(pairs)
        prev = now
    return c, matched_conf


def clear_counts(hyps, gts, criterion: MatchCriterion | None = None, cutoff: float | None = None) -> ClearCounts:
    return match_sequence(hyps, gts, criterion or MatchCriterion(), cutoff)[0]


def _sum_sequences(sequences, criterion, cutoff=None) -> tuple[ClearCounts, list[float]]:
    total, conf = ClearCounts(), []
    for hyps, gts in sequences:
        c, m = match_sequence(hyps, gts, criterion, cutoff)
        total = total + c
        conf += m
    return total, conf


def recall_cutoffs(matched_conf: Sequence[float], num_gt: int, steps: int = RECALL_STEPS) -> list[float | None]:
    """Confidence cutoff realizing each recall target ``k / steps``.

    The cutoff for target ``r`` is the confidence of the ``ceil(r * numGT)``-th
    most confident matched hypothesis of the uncut run; ``None`` marks a
    target the run never reaches.
    """
    ranked = sorted(matched_conf, reverse=True)
    out = []
    for k in range(1, steps + 1):
        need = math.ceil(k * num_gt / steps)
        out.append(ranked[need - 1] if need <= len(ranked) else None)
    return out


def samota_term(c: ClearCounts, r: float) -> float:
    s = 1.0 - (c.fp + c.ids + c.fn - (1.0 - r) * c.num_gt) / (r * c.num_gt)
    return min(1.0, max(0.0, s))


def amota_suite(sequences: Sequence[tuple], criterion: MatchCriterion | None = None, steps: int = RECALL_STEPS) -> SweepResult:
    """Recall-averaged metrics over ``steps`` evenly spaced recall targets.

    ``sequences`` is a list of ``(hyps, gts)`` pairs; counts at each cutoff
    are summed across sequences. Unreachable targets contribute 0.
    """
    criterion = criterion or MatchCriterion()
    full, conf = _sum_sequences(sequences, criterion)
    if full.num_gt == 0:
        raise EmptyGroundTruth("no ground-truth boxes")
    cutoffs = recall_cutoffs(conf, full.num_gt, steps)
    cache: dict = {}
    amota = samota = amotp = 0.0
    best = 0.0
    for k, cut in enumerate(cutoffs, start=1):
        if cut is None:
            continue
        if cut not in cache:
            cache[cut] = _sum_sequences(sequences, criterion, cut)[0]
        c = cache[cut]
        r = k / steps
        amota += max(0.0, c.mota)
        samota += samota_term(c, r)
        amotp += c.motp
        best = max(best, c.recall)
    return SweepResult(samota / steps, amota / steps, amotp / steps, best, cutoffs)


def clear_metrics(hyps, gts, criterion: MatchCriterion | None = None) -> MetricsReport:
    """CLEAR subset for one sequence (sweep fields left at zero)."""
    criterion = criterion or MatchCriterion()
    c = clear_counts(hyps, gts, criterion)
    if c.num_gt == 0:
        raise EmptyGroundTruth("no ground-truth boxes")
    return _report(c, criterion)


def _report(c: ClearCounts, criterion: MatchCriterion, sweep: SweepResult | None = None) -> MetricsReport:
    rep = MetricsReport(criterion.label, c.mota, c.motp, c.ids, c.frag, c.fp, c.fn, c.num_gt, c.recall)
    if sweep is not None:
        rep.sAMOTA, rep.AMOTA, rep.AMOTP, rep.best_recall = sweep.sAMOTA, sweep.AMOTA, sweep.AMOTP, sweep.best_recall
    return rep


def evaluate(sequences: Sequence[tuple], criterion: MatchCriterion | None = None, steps: int = RECALL_STEPS) -> MetricsReport:
    """Full report over several ``(hyps, gts)`` sequences merged by counter sums."""
    criterion = criterion or MatchCriterion()
    c, _ = _sum_sequences(sequences, criterion)
    if c.num_gt == 0:
        raise EmptyGroundTruth("no ground-truth boxes")
    return _report(c, criterion, amota_suite(sequences, criterion, steps))


FOOTER = "IDS counted when a GT's matched hypothesis id differs from its last matched id; FRAG counted at each resumed match after a gap."


def _fmt(v) -> str:
    return str(v) if isinstance(v, (int, np.integer)) else f"{v:.6f}"


def reports_csv(reports: Sequence[MetricsReport], label: str | None = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    head = (["run"] if label is not None else []) + ["criterion", *REPORT_COLUMNS, "numGT", "recall"]
    w.writerow(head)
    for r in reports:
        w.writerow(([label] if label is not None else []) + [r.criterion, *(_fmt(v) for v in r.row()), r.numGT, _fmt(r.recall)])
    return buf.getvalue()


def write_reports_csv(reports: Sequence[MetricsReport], path, label: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(reports_csv(reports, label))


def format_table(reports: Sequence[MetricsReport]) -> str:
    head = ["criterion", *REPORT_COLUMNS]
    rows = [[r.criterion] + [f"{v:.4f}" if isinstance(v, float) else str(v) for v in r.row()] for r in reports]
    widths = [max(len(h), *(len(row[i]) for row in rows)) if rows else len(h) for i, h in enumerate(head)]
    line = "  ".join(h.rjust(w) for h, w in zip(head, widths))
    out = [line, "-" * len(line)]
    out += ["  ".join(v.rjust(w) for v, w in zip(row, widths)) for row in rows]
    out.append(FOOTER)
    return "\n".join(out)
