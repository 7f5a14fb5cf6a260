#!/usr/bin/env python3
"""Run every (crash point, bid count, winner position, follower crash) cell
and print one line per cell: settled, converged, retriggered."""
import argparse
import itertools
import time

from decltx.consensus import CRASH_POINTS
from decltx.scenarios import run_crash_scenario


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--bids", default="2,3,4")
    ap.add_argument("--nodes", type=int, default=4)
    ap.add_argument("--outage", type=float, default=3.0)
    args = ap.parse_args()

    green = total = 0
    t0 = time.perf_counter()
    bids = [int(b) for b in args.bids.split(",")]
    for point, n, last, follower in itertools.product(CRASH_POINTS, bids, (False, True),
                                                      (False, True)):
        out = run_crash_scenario(point, n, n - 1 if last else 0, follower, seed=n,
                                 nodes=args.nodes, outage=args.outage)
        c = out.cluster
        st = c.settlement_status(out.accept.id) or {}
        ok = bool(st.get("settled")) and c.converged() and not c.alerts and bool(out.crashed)
        total += 1
        green += ok
        print(f"{'ok ' if ok else 'BAD'} {point:<22} bids={n} winner={'last ' if last else 'first'}"
              f" follower={'y' if follower else 'n'} crashed={out.crashed} "
              f"t={c.now:6.2f}s {'; '.join(out.notes)}")
        c.close()
    print(f"{green}/{total} cells green in {time.perf_counter() - t0:.1f}s")


if __name__ == "__main__":
    main()
