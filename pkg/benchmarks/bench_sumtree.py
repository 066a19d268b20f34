"""Compare the compiled and pure-Python sum-tree kernels.

    python benchmarks/bench_sumtree.py [--capacity N] [--ops N]
"""

import argparse
import time

import numpy as np

from saber.replay import CySumTree, PySumTree


def bench(cls, capacity, ops, seed=0):
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, capacity, size=ops)
    val = rng.random(ops)
    tree = cls(capacity)
    t0 = time.perf_counter()
    for i, v in zip(idx.tolist(), val.tolist()):
        tree.set(i, v)
    t_set = time.perf_counter() - t0

    t0 = time.perf_counter()
    tree.set_many(idx, val)
    t_set_many = time.perf_counter() - t0

    us = rng.random(ops) * tree.total
    t0 = time.perf_counter()
    tree.find_many(us)
    t_find = time.perf_counter() - t0
    return {"set": t_set, "set_many": t_set_many, "find_many": t_find}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--capacity", type=int, default=1 << 20)
    ap.add_argument("--ops", type=int, default=200_000)
    args = ap.parse_args()

    rows = [("python", bench(PySumTree, args.capacity, args.ops))]
    if CySumTree is not None:
        rows.append(("cython", bench(CySumTree, args.capacity, args.ops)))
    else:
        print("compiled extension not available; reporting the fallback only")

    print(f"capacity={args.capacity} ops={args.ops}")
    print(f"{'backend':8s} {'set us/op':>10s} {'set_many us/op':>15s} {'find us/op':>11s}")
    for name, r in rows:
        print(f"{name:8s} {1e6 * r['set'] / args.ops:10.3f} "
              f"{1e6 * r['set_many'] / args.ops:15.3f} {1e6 * r['find_many'] / args.ops:11.3f}")
    if len(rows) == 2:
        py, cy = rows[0][1], rows[1][1]
        print("speedup: " + ", ".join(f"{k} {py[k] / cy[k]:.1f}x" for k in py))


if __name__ == "__main__":
    main()
