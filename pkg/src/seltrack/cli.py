"""Command-line entry point: simulate, label, train, track, eval, sweep.

A dataset directory holds ``gt/NNNN.txt`` and ``det/NNNN.txt`` in KITTI
tracking format plus, after ``label``, ``oracle/NNNN.json`` sidecars.
Exit codes: 0 success, 1 input error, 2 internal error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import kitti
from ._backend import NAME as BACKEND
from .assignment import MatchCriterion
from .config import ConfigError, RunConfig, load_config
from .metrics import EmptyGroundTruth, evaluate, format_table, reports_csv
from .neural import DivergenceDetected
from .pipeline import build_samples, selection_stats, train_selector
from .selection import SelectorModel
from .simulator import PRESETS, GTObject, LabeledFrame, label_frame, simulate_benchmark
from .tracker import ASSOCIATION_MODES, SELECTOR_MODES, run_sequence

log = logging.getLogger("seltrack")


class InputError(Exception):
    """Bad user input; reported with exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise InputError(message)


# -- dataset helpers ---------------------------------------------------------


def _seq_files(root: Path, sub: str, suffix: str = ".txt") -> dict[str, Path]:
    d = root / sub
    if not d.is_dir():
        raise InputError(f"{d} is not a directory")
    return {p.stem: p for p in sorted(d.glob(f"*{suffix}"))}


def _sequence_names(root: Path) -> list[str]:
    det = _seq_files(root, "det")
    if not det:
        raise InputError(f"no detection files in {root / 'det'}")
    return sorted(det)


def _load_pair(root: Path, name: str):
    det_recs = kitti.parse_kitti(root / "det" / f"{name}.txt")
    gt_path = root / "gt" / f"{name}.txt"
    if not gt_path.is_file():
        raise InputError(f"missing ground truth {gt_path}")
    gt_recs = kitti.parse_kitti(gt_path)
    n = max([r.frame for r in det_recs + gt_recs], default=-1) + 1
    meta = root / "meta.json"
    if meta.is_file():
        n = max(n, int(json.loads(meta.read_text()).get("n_frames", 0)))
    dets = kitti.to_detections(det_recs, n)
    gts = [[GTObject(tid, box) for tid, box, _ in f] for f in kitti.to_objects(gt_recs, n)]
    return dets, gts


def _load_labeled(root: Path, name: str) -> list[LabeledFrame]:
    dets, gts = _load_pair(root, name)
    side = root / "oracle" / f"{name}.json"
    if not side.is_file():
        raise InputError(f"missing oracle sidecar {side}; run `seltrack label` first")
    doc = kitti.read_sidecar(side)
    frames = doc["frames"]
    if len(frames) != len(dets):
        raise InputError(f"{side}: {len(frames)} frames but detections cover {len(dets)}")
    out = []
    for k, (fr, d, g) in enumerate(zip(frames, dets, gts)):
        if len(fr["is_tp"]) != len(d):
            raise InputError(f"{side}: frame {k} labels {len(fr['is_tp'])} detections, file has {len(d)}")
        out.append(
            LabeledFrame(
                k,
                [o.id for o in g],
                [o.box for o in g],
                d,
                np.array(fr["is_tp"], dtype=bool),
                np.array(fr["gt_id"], dtype=int),
                float(fr["tau"]),
                np.array(fr["lambda"], dtype=np.float64),
                bool(fr["has_tp"]),
            )
        )
    return out


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _criteria(args, cfg: RunConfig) -> list[MatchCriterion]:
    if not getattr(args, "criterion", None):
        return cfg.criteria
    out = []
    for spec in args.criterion:
        kind, _, thr = spec.partition(":")
        try:
            out.append(MatchCriterion(kind, float(thr)))
        except ValueError as e:
            raise InputError(f"--criterion {spec!r}: {e}") from None
    return out


def _prepare_out(path: Path, force_dir: bool = True) -> Path:
    (path if force_dir else path.parent).mkdir(parents=True, exist_ok=True)
    return path


# -- commands ------------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = _config(args)
    sim = cfg.sim_config()
    if args.preset:
        if args.preset not in PRESETS:
            raise InputError(f"unknown preset {args.preset!r}; choose from {sorted(PRESETS)}")
        sim = replace(PRESETS[args.preset], seed=cfg.seed)
    if args.frames is not None:
        if args.frames < 1:
            raise InputError("--frames must be >= 1")
        sim = replace(sim, n_frames=args.frames)
    n = args.sequences if args.sequences is not None else cfg.n_sequences
    if n < 1:
        raise InputError("--sequences must be >= 1")
    seqs = simulate_benchmark(sim, n)
    out = Path(args.out)
    for sub in ("gt", "det"):
        _prepare_out(out / sub)
    for s in seqs:
        gt_lines = [kitti.box_to_line(t, o.id, o.box) for t, f in enumerate(s.gt) for o in f]
        kitti.emit_kitti(gt_lines, out / "gt" / f"{s.name}.txt")
        kitti.emit_kitti(kitti.detections_to_lines(s.dets), out / "det" / f"{s.name}.txt")
    meta = {"n_frames": sim.n_frames, "n_sequences": n, "sim": sim.to_dict()}
    (out / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    log.info("wrote %d sequences to %s", n, out)
    return 0


def cmd_label(args) -> int:
    cfg = _config(args)
    root = Path(args.data)
    names = _sequence_names(root)
    docs = {}
    for name in names:
        dets, gts = _load_pair(root, name)
        docs[name] = [label_frame(k, g, d, cfg.selector) for k, (d, g) in enumerate(zip(dets, gts))]
    _prepare_out(root / "oracle")
    for name, labeled in docs.items():
        kitti.write_sidecar(root / "oracle" / f"{name}.json", labeled, {"sequence": name})
    log.info("labeled %d sequences", len(names))
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    tc = cfg.train
    over = {k: v for k, v in (("epochs", args.epochs), ("learning_rate", args.lr), ("optimizer", args.optimizer), ("seed", args.seed)) if v is not None}
    try:
        tc = replace(tc, **over)
    except ValueError as e:
        raise InputError(str(e)) from None
    if not tc.learning_rate > 0:
        raise InputError("learning rate must be > 0")
    root = Path(args.data)
    labeled = [_load_labeled(root, n) for n in _sequence_names(root)]
    samples = build_samples(labeled, cfg.tracker)
    res = train_selector(samples, args.mode, tc, cfg.selector, history=cfg.tracker.history, with_edge=args.edge)
    _prepare_out(Path(args.out), force_dir=False)
    res.model.save(args.out)
    if args.loss_csv:
        _prepare_out(Path(args.loss_csv), force_dir=False)
        res.write_loss_csv(args.loss_csv)
    log.info("trained %s selector on %d frames; final loss %.6f", args.mode, len(samples), res.losses[-1] if res.losses else float("nan"))
    return 0


def cmd_track(args) -> int:
    cfg = _config(args)
    tcfg = cfg.tracker
    over = {k: v for k, v in (("selector", args.selector), ("association", args.association), ("global_threshold", args.threshold)) if v is not None}
    try:
        tcfg = replace(tcfg, **over)
    except ValueError as e:
        raise InputError(str(e)) from None
    model = None
    if tcfg.selector in ("frame", "instance") or tcfg.association == "feature":
        if not args.model:
            raise InputError(f"--model is required for selector {tcfg.selector!r} / association {tcfg.association!r}")
        try:
            model = SelectorModel.load(args.model)
        except (OSError, ValueError, KeyError, TypeError) as e:
            raise InputError(f"cannot load model {args.model}: {e}") from None
        if tcfg.selector in ("frame", "instance") and model.mode != tcfg.selector:
            raise InputError(f"model is {model.mode}-mode but selector is {tcfg.selector!r}")
        if tcfg.association == "feature" and model.edge is None:
            raise InputError("feature association needs a model trained with --edge")
        tcfg = replace(tcfg, history=model.encoder.history)
    root = Path(args.data)
    names = _sequence_names(root)
    oracle = tcfg.selector.startswith("oracle")
    inputs = {}
    for name in names:
        if oracle:
            lab = _load_labeled(root, name)
            inputs[name] = ([lf.dets for lf in lab], lab)
        else:
            recs = kitti.parse_kitti(root / "det" / f"{name}.txt")
            meta = root / "meta.json"
            n = int(json.loads(meta.read_text())["n_frames"]) if meta.is_file() else None
            inputs[name] = (kitti.to_detections(recs, n), None)
    results = {name: run_sequence(frames, model, tcfg, lab) for name, (frames, lab) in inputs.items()}
    out = _prepare_out(Path(args.out))
    rows = []
    for name, res in results.items():
        kitti.emit_kitti(kitti.tracks_to_lines(res.frames, res.frame_ids), out / f"{name}.txt")
        rows += [(name, f) for f in res.filtered]
    with open(out / "filtered.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sequence", "frame", "detection", "score", "kind", "value"])
        for name, f in rows:
            w.writerow([name, f.frame, f.index, f"{f.score:.6f}", f.kind, f"{f.value:.6f}"])
    log.info("tracked %d sequences; %d detections filtered", len(names), len(rows))
    return 0


def cmd_eval(args) -> int:
    cfg = _config(args)
    crit = _criteria(args, cfg)
    gt_root, hyp_root = Path(args.gt), Path(args.hyp)
    gt_files = _seq_files(gt_root, "gt") if (gt_root / "gt").is_dir() else {p.stem: p for p in sorted(gt_root.glob("*.txt"))}
    hyp_files = {p.stem: p for p in sorted(hyp_root.glob("*.txt"))}
    if not gt_files:
        raise InputError(f"no ground-truth files under {gt_root}")
    missing = sorted(set(gt_files) - set(hyp_files))
    if missing:
        raise InputError(f"no hypothesis file for sequences {missing}")
    pairs = []
    for name, gp in gt_files.items():
        g, h = kitti.parse_kitti(gp), kitti.parse_kitti(hyp_files[name])
        n = max([r.frame for r in g + h], default=-1) + 1
        pairs.append((kitti.to_objects(h, n), [[(t, b) for t, b, _ in f] for f in kitti.to_objects(g, n)]))
    reports = [evaluate(pairs, c) for c in crit]
    text = reports_csv(reports)
    if args.out:
        _prepare_out(Path(args.out), force_dir=False)
        Path(args.out).write_text(text)
    print(format_table(reports))
    return 0


def cmd_sweep(args) -> int:
    cfg = _config(args)
    crit = _criteria(args, cfg)[0]
    if args.thresholds:
        try:
            grid = [float(t) for t in args.thresholds.split(",")]
        except ValueError:
            raise InputError(f"--thresholds must be comma-separated numbers, got {args.thresholds!r}") from None
    else:
        if not args.step > 0 or args.hi < args.lo:
            raise InputError("need --step > 0 and --hi >= --lo")
        grid = list(np.round(np.arange(args.lo, args.hi + 0.5 * args.step, args.step), 10))
    root = Path(args.data)
    labeled = [_load_labeled(root, n) for n in _sequence_names(root)]
    rows = []
    for t in grid:
        tcfg = replace(cfg.tracker, selector="global", global_threshold=float(t))
        res = [run_sequence([lf.dets for lf in seq], None, tcfg) for seq in labeled]
        st = selection_stats(res, labeled)
        rep = evaluate([(r.frames, [list(zip(lf.gt_ids, lf.gt_boxes)) for lf in seq]) for r, seq in zip(res, labeled)], crit)
        rows.append([f"{t:.6f}", f"{st.fp_removal:.6f}", f"{st.tp_retention:.6f}", rep.FP, rep.FN, f"{rep.recall:.6f}", f"{rep.MOTA:.6f}"])
    _prepare_out(Path(args.out), force_dir=False)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", "fp_removal", "tp_retention", "FP", "FN", "recall", "MOTA"])
        w.writerows(rows)
    best = max(rows, key=lambda r: float(r[6]))
    print(f"best MOTA {best[6]} at threshold {best[0]}")
    return 0


# -- argument parsing ----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="seltrack", description="Detection selection for 3D multi-object tracking.")
    p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="run configuration JSON")
        sp.add_argument("--seed", type=int)
        sp.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    s = sub.add_parser("simulate", help="generate a synthetic benchmark")
    common(s)
    s.add_argument("--out", required=True)
    s.add_argument("--preset", choices=sorted(PRESETS))
    s.add_argument("--sequences", type=int)
    s.add_argument("--frames", type=int)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("label", help="write oracle threshold and TP/FP sidecars")
    common(s)
    s.add_argument("--data", required=True)
    s.set_defaults(func=cmd_label)

    s = sub.add_parser("train", help="train a frame- or instance-level selector")
    common(s)
    s.add_argument("--data", required=True)
    s.add_argument("--mode", choices=("frame", "instance"), required=True)
    s.add_argument("--edge", action="store_true", help="also train the association edge head")
    s.add_argument("--epochs", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--optimizer", choices=("sgd", "adam"))
    s.add_argument("--out", required=True)
    s.add_argument("--loss-csv")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("track", help="run the tracker and write KITTI results")
    common(s)
    s.add_argument("--data", required=True)
    s.add_argument("--selector", choices=SELECTOR_MODES)
    s.add_argument("--association", choices=ASSOCIATION_MODES)
    s.add_argument("--threshold", type=float, help="score cutoff for --selector global")
    s.add_argument("--model")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_track)

    s = sub.add_parser("eval", help="CLEAR and recall-averaged metrics")
    common(s)
    s.add_argument("--gt", required=True, help="dataset directory or folder of KITTI ground-truth files")
    s.add_argument("--hyp", required=True)
    s.add_argument("--criterion", action="append", help="KIND:THRESHOLD, e.g. iou3d:0.25 or distance:2")
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="grid search over a global score threshold")
    common(s)
    s.add_argument("--data", required=True)
    s.add_argument("--lo", type=float, default=-5.0)
    s.add_argument("--hi", type=float, default=10.0)
    s.add_argument("--step", type=float, default=0.5)
    s.add_argument("--thresholds")
    s.add_argument("--criterion", action="append")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    logging.basicConfig(format="%(levelname)s: %(message)s", level=logging.WARNING)
    try:
        args = build_parser().parse_args(argv)
    except InputError as e:
        print(f"seltrack: error: {e}", file=sys.stderr)
        return 1
    if getattr(args, "verbose", False):
        log.setLevel(logging.INFO)
        log.info("kernel backend: %s", BACKEND)
    try:
        return args.func(args)
    except (InputError, ConfigError, kitti.ParseError, EmptyGroundTruth, FileNotFoundError, IsADirectoryError, PermissionError) as e:
        print(f"seltrack: error: {e}", file=sys.stderr)
        return 1
    except DivergenceDetected as e:
        print(f"seltrack: training diverged: {e}", file=sys.stderr)
        return 1
    except ValueError as e:
        print(f"seltrack: error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001
        print(f"seltrack: internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
