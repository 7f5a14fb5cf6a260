#!/usr/bin/env python3
"""Latency and throughput versus validator count at a fixed 1.09 KB payload."""
import argparse
import logging

from decltx.bench import run_experiment_cluster


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--nodes", default="4,8")
    ap.add_argument("--payload", type=int, default=1090)
    ap.add_argument("--factor", type=float, default=0.01)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--compute", choices=("none", "measured"), default="measured")
    ap.add_argument("--out", default="results")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    counts = [int(n) for n in args.nodes.split(",")]
    rows = run_experiment_cluster(counts, payload=args.payload, factor=args.factor,
                                  seed=args.seed, compute=args.compute, out_dir=args.out)
    for r in rows:
        print(f"n={r.value:<3} {r.op:>10} mean {r.mean_latency:.3f}s  p95 {r.p95_latency:.3f}s  "
              f"{r.throughput:.0f} tx/s")


if __name__ == "__main__":
    main()
