#!/usr/bin/env python3
"""Latency and throughput versus serialized transaction size.

Writes results/size.csv and results/size.dat (gnuplot columns: size, mean
latency per op, throughput) and prints the latency ratio of the largest to
the smallest size for each operation.
"""
import argparse
import logging

from decltx.bench import DEFAULT_SIZES, WORKLOAD_OPS, run_experiment_size


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default=",".join(map(str, DEFAULT_SIZES)))
    ap.add_argument("--factor", type=float, default=0.01)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--nodes", type=int, default=4)
    ap.add_argument("--compute", choices=("none", "measured"), default="measured")
    ap.add_argument("--out", default="results")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    sizes = [int(s) for s in args.sizes.split(",")]
    rows = run_experiment_size(sizes, factor=args.factor, seed=args.seed, nodes=args.nodes,
                               compute=args.compute, out_dir=args.out)
    mean = {(r.value, r.op): r.mean_latency for r in rows}
    for op in WORKLOAD_OPS:
        print(f"{op:>10}: " + "  ".join(f"{s}B {mean[(s, op)]:.3f}s" for s in sizes)
              + f"  ratio {mean[(sizes[-1], op)] / mean[(sizes[0], op)]:.2f}")
    tput = {r.value: r.throughput for r in rows}
    print("throughput: " + "  ".join(f"{s}B {tput[s]:.0f} tx/s" for s in sizes))


if __name__ == "__main__":
    main()
