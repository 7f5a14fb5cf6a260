"""Command-line entry point (``decltx``)."""
from __future__ import annotations

import argparse
import json
import logging
import socketserver
import sys
from pathlib import Path

from .bench import run_experiment_cluster, run_experiment_size
from .consensus import Cluster, ClusterConfig
from .driver import Driver
from .errors import ConfigError, DeclTxError
from .ledger import Ledger
from .model import Transaction

MAX_DEFAULT_NODES = 8


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _load_config(args) -> ClusterConfig:
    cfg = ClusterConfig.from_file(args.config) if getattr(args, "config", None) else None
    data_dir = getattr(args, "data_dir", None)
    if cfg is None:
        cfg = ClusterConfig(data_dir=data_dir or "decltx-data")
    elif data_dir:
        cfg.data_dir = data_dir
    if cfg.data_dir is None:
        raise ConfigError("a data directory is required (config data_dir or --data-dir)")
    return cfg


def _print_rows(rows) -> None:
    print(f"{'config':>7} {'value':>6} {'op':>10} {'n':>5} {'mean_s':>9} {'p95_s':>9} "
          f"{'tx/s':>9}")
    for r in rows:
        print(f"{r.config:>7} {r.value:>6} {r.op:>10} {r.n:>5} {r.mean_latency:9.4f} "
              f"{r.p95_latency:9.4f} {r.throughput:9.1f}")


def cmd_bench_size(args) -> int:
    rows = run_experiment_size(args.sizes, factor=args.factor, seed=args.seed,
                               nodes=args.nodes[0] if args.nodes else 4,
                               compute=args.compute, out_dir=args.out)
    _print_rows(rows)
    return 0


def cmd_bench_cluster(args) -> int:
    too_big = [n for n in args.nodes if n > MAX_DEFAULT_NODES]
    if too_big and not args.allow_large:
        print(f"node counts {too_big} exceed {MAX_DEFAULT_NODES}; pass --allow-large",
              file=sys.stderr)
        return 2
    rows = run_experiment_cluster(args.nodes, payload=args.payload, factor=args.factor,
                                  seed=args.seed, compute=args.compute, out_dir=args.out)
    _print_rows(rows)
    return 0


class _Handler(socketserver.StreamRequestHandler):
    """One JSON request per line: {"cmd": "submit"|"status", ...}."""

    def handle(self):
        cluster: Cluster = self.server.cluster
        for raw in self.rfile:
            try:
                req = json.loads(raw)
                if req.get("cmd") == "submit":
                    tx = Transaction.from_dict(req["tx"])
                    h = cluster.submit(tx, mode="sync")
                    resp = {"id": tx.id, "accepted": h.error is None, "error": h.error}
                elif req.get("cmd") == "status":
                    resp = {"id": req["id"], "status": cluster.tx_status(req["id"])}
                else:
                    resp = {"error": f"unknown cmd {req.get('cmd')!r}"}
            except (ValueError, KeyError, DeclTxError) as exc:
                resp = {"error": f"{type(exc).__name__}: {exc}"}
            self.wfile.write((json.dumps(resp) + "\n").encode())


def cmd_node_run(args) -> int:
    cfg = _load_config(args)
    cluster = Cluster(cfg)
    print(f"cluster of {cfg.nodes} nodes at height {cluster.nodes[0].height} "
          f"(data in {cfg.data_dir})")
    if args.serve is None:
        cluster.run_for(args.duration)
    else:
        host, _, port = args.serve.rpartition(":")
        with socketserver.TCPServer((host or "127.0.0.1", int(port)), _Handler) as server:
            server.cluster = cluster
            server.timeout = 0.1
            print(f"listening on {server.server_address[0]}:{server.server_address[1]}")
            try:
                while args.duration <= 0 or cluster.now < args.duration:
                    server.handle_request()
                    cluster.run_for(0.1)
            except KeyboardInterrupt:
                pass
    print(json.dumps({str(k): v for k, v in cluster.state_digests().items()}))
    cluster.close()
    return 0


def cmd_tx_submit(args) -> int:
    cfg = _load_config(args)
    tx = Transaction.from_dict(json.loads(Path(args.file).read_text()))
    cluster = Cluster(cfg)
    handle = Driver(cluster, timeout=args.timeout).submit_async(tx)
    cluster.run_until(lambda: handle.done, args.wait)
    cluster.run_for(cfg.block_interval * 3)  # let followers settle children
    print(json.dumps({"id": tx.id, "status": handle.status, "error": handle.error,
                      "message": handle.error_message}))
    cluster.close()
    return 0 if handle.status == "committed" else 1


def cmd_tx_status(args) -> int:
    cfg = _load_config(args)
    ledger = Ledger(str(Path(cfg.data_dir) / f"node{args.node}.sqlite"))
    height = ledger.tx_height(args.id)
    out = {"id": args.id, "status": "committed" if height is not None else "unknown",
           "height": height}
    rec = ledger.get_recovery(args.id)
    if rec is not None:
        out["settlement"] = {"children": rec.statuses, "settled": rec.settled}
    print(json.dumps(out))
    ledger.close()
    return 0 if height is not None else 1


def cmd_ledger_export(args) -> int:
    cfg = _load_config(args)
    ledger = Ledger(str(Path(cfg.data_dir) / f"node{args.node}.sqlite"))
    if args.output:
        with open(args.output, "w") as fh:
            n = ledger.export(fh)
    else:
        n = ledger.export(sys.stdout)
    ledger.close()
    print(f"exported {n} blocks", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="decltx", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="group", required=True)

    bench = sub.add_parser("bench", help="run the benchmark experiments")
    bsub = bench.add_subparsers(dest="cmd", required=True)
    for name in ("size", "cluster"):
        b = bsub.add_parser(name)
        b.add_argument("--factor", type=float, default=0.01)
        b.add_argument("--seed", type=int, default=0)
        b.add_argument("--compute", choices=("none", "measured"), default="measured")
        b.add_argument("--out", default=None, help="directory for CSV and .dat output")
    bsize = bsub.choices["size"]
    bsize.add_argument("--sizes", type=_int_list, default=[256, 1090, 1740])
    bsize.add_argument("--nodes", type=_int_list, default=[4])
    bsize.set_defaults(fn=cmd_bench_size)
    bcl = bsub.choices["cluster"]
    bcl.add_argument("--nodes", type=_int_list, default=[4, 8])
    bcl.add_argument("--payload", type=int, default=1090)
    bcl.add_argument("--allow-large", action="store_true", help="permit more than 8 nodes")
    bcl.set_defaults(fn=cmd_bench_cluster)

    def with_store(sp):
        sp.add_argument("--config", default=None)
        sp.add_argument("--data-dir", default=None)
        return sp

    node = sub.add_parser("node", help="run a file-backed cluster")
    nsub = node.add_subparsers(dest="cmd", required=True)
    nrun = with_store(nsub.add_parser("run"))
    nrun.add_argument("--duration", type=float, default=1.0, help="simulated seconds")
    nrun.add_argument("--serve", default=None, metavar="HOST:PORT")
    nrun.set_defaults(fn=cmd_node_run)

    tx = sub.add_parser("tx", help="submit or inspect transactions")
    tsub = tx.add_subparsers(dest="cmd", required=True)
    tsubmit = with_store(tsub.add_parser("submit"))
    tsubmit.add_argument("file")
    tsubmit.add_argument("--timeout", type=float, default=2.0)
    tsubmit.add_argument("--wait", type=float, default=30.0)
    tsubmit.set_defaults(fn=cmd_tx_submit)
    tstatus = with_store(tsub.add_parser("status"))
    tstatus.add_argument("id")
    tstatus.add_argument("--node", type=int, default=0)
    tstatus.set_defaults(fn=cmd_tx_status)

    led = sub.add_parser("ledger", help="ledger utilities")
    lsub = led.add_subparsers(dest="cmd", required=True)
    lexp = with_store(lsub.add_parser("export"))
    lexp.add_argument("--node", type=int, default=0)
    lexp.add_argument("-o", "--output", default=None)
    lexp.set_defaults(fn=cmd_ledger_export)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except DeclTxError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
