"""Time the compiled kernels against the pure-Python fallback.

Usage: python3 benchmarks/bench_kernels.py [--pairs N] [--repeat R]
"""

import argparse
import timeit

import numpy as np

from seltrack import _backend, _pykernels


def random_boxes(rng, n):
    out = np.empty((n, 7))
    out[:, :2] = rng.uniform(-5, 5, (n, 2))
    out[:, 2] = rng.uniform(-0.5, 0.5, n)
    out[:, 3:6] = rng.uniform(0.5, 5, (n, 3))
    out[:, 6] = rng.uniform(-np.pi, np.pi, n)
    return out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--pairs", type=int, default=40, help="boxes per side of the IoU matrix")
    ap.add_argument("--lsap", type=int, default=60, help="size of the square assignment problem")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not _backend.compiled:
        print("compiled extension not available; only the Python fallback can be timed")
    rng = np.random.default_rng(0)
    a, b = random_boxes(rng, args.pairs), random_boxes(rng, args.pairs)
    cost = rng.uniform(0, 1, (args.lsap, args.lsap))
    impls = {"python": _pykernels}
    if _backend.compiled:
        impls["cython"] = _backend.kernels
    rows = []
    for label, fn in (
        (f"iou_matrix 3d {args.pairs}x{args.pairs}", lambda k: k.iou_matrix(a, b, False)),
        (f"iou_matrix bev {args.pairs}x{args.pairs}", lambda k: k.iou_matrix(a, b, True)),
        (f"lsap {args.lsap}x{args.lsap}", lambda k: k.lsap(cost)),
    ):
        res = {}
        for name, k in impls.items():
            res[name] = min(timeit.repeat(lambda: fn(k), number=1, repeat=args.repeat))
        if "cython" in res:
            same = np.allclose(fn(impls["python"]), fn(impls["cython"]), atol=1e-12)
            rows.append((label, res["python"], res["cython"], res["python"] / res["cython"], same))
        else:
            rows.append((label, res["python"], float("nan"), float("nan"), True))
    print(f"{'kernel':28s} {'python [ms]':>12s} {'cython [ms]':>12s} {'speedup':>8s}  agree")
    for label, py, cy, sp, same in rows:
        print(f"{label:28s} {py * 1e3:12.3f} {cy * 1e3:12.3f} {sp:8.1f}  {same}")


if __name__ == "__main__":
    main()
