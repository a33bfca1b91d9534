"""NDA vs TWPDA wall time and thread speedup on synthetic tensors.

    python3 scripts/run_benchmark.py --sizes 200,400,800 --threads 1,2,4,8 --out bench.csv
"""
import argparse
import os

from cdtinfer.evaluation import run_benchmark, write_benchmark_csv
from cdtinfer.nda import HyperParams


def ints(s):
    return [int(v) for v in s.split(",")]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=ints, default=[200, 400, 800])
    ap.add_argument("--threads", type=ints, default=[1, 2, 4, 8])
    ap.add_argument("--m", type=int, default=2)
    ap.add_argument("--q", type=int, default=35)
    ap.add_argument("--density", type=float, default=1e-3)
    ap.add_argument("--epochs", type=int, default=5)
    ap.add_argument("--alpha1", type=int, default=2)
    ap.add_argument("--beta", type=float, default=None)
    ap.add_argument("--out", default="bench.csv")
    args = ap.parse_args()

    print(f"{os.cpu_count()} cores visible")
    rows = run_benchmark(args.sizes, args.threads, HyperParams(), args.m, args.q, args.density,
                         args.epochs, args.alpha1, args.beta)
    write_benchmark_csv(rows, args.out)
    for r in rows:
        print(f"N={r['n']:5d} nnz={r['nnz']:7d} windows={r['windows']:3d} threads={r['threads']:2d} "
              f"nda={r['nda_time']:.3f}s twpda={r['twpda_time']:.3f}s speedup={r['speedup']:+.2f}")


if __name__ == "__main__":
    main()
