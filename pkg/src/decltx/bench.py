"""Synthetic auction workload, latency/throughput metrics, and the two
desk-scale experiments (payload-size sweep and cluster-size sweep)."""
from __future__ import annotations

import csv
import logging
import math
import random
import statistics
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .consensus import Cluster, ClusterConfig
from .crypto import KeyPair, generate_keypair
from .driver import Driver, DriverHandle, sign_tx
from .errors import ConfigError
from .model import Asset, Input, Output, OutputRef, Transaction, canonical_serialize, with_id
from .nested import derive_children

log = logging.getLogger(__name__)

WORKLOAD_OPS = ("CREATE", "REQUEST", "BID", "ACCEPT_BID")
DEFAULT_SIZES = (256, 1090, 1740)


@dataclass
class WorkloadConfig:
    """Operation counts before scaling; the defaults are the full mix."""

    creates: int = 50000
    bids: int = 50000
    requests: int = 5000
    accepts: int = 5000
    factor: float = 0.01
    payload_size: int | None = None  # target serialized size in bytes
    caps_per_request: int = 2
    capability_pool: int = 64
    seed: int = 0

    def counts(self) -> dict[str, int]:
        scale = lambda n: int(round(n * self.factor))  # noqa: E731
        return {"CREATE": scale(self.creates), "REQUEST": scale(self.requests),
                "BID": scale(self.bids), "ACCEPT_BID": scale(self.accepts)}

    def check(self) -> dict[str, int]:
        c = self.counts()
        if c["ACCEPT_BID"] > c["REQUEST"]:
            raise ConfigError(f"{c['ACCEPT_BID']} accepts exceed {c['REQUEST']} requests")
        if c["BID"] > c["CREATE"]:
            raise ConfigError("every BID needs its own CREATE; bids exceed creates")
        if c["BID"] < c["ACCEPT_BID"]:
            raise ConfigError("each accepted request needs at least one bid")
        if c["REQUEST"] and self.caps_per_request > self.capability_pool:
            raise ConfigError("caps_per_request exceeds the capability pool")
        if self.payload_size is not None and self.payload_size <= 0:
            raise ConfigError("payload_size must be positive")
        return c


@dataclass(frozen=True)
class WorkItem:
    tx: Transaction
    deps: tuple[str, ...] = ()

    @property
    def op(self) -> str:
        return self.tx.op


@dataclass(frozen=True)
class MetricSample:
    tx_id: str
    op: str
    received_at: float | None
    committed_at: float | None
    error: str | None = None

    @property
    def committed(self) -> bool:
        return self.committed_at is not None

    @property
    def latency(self) -> float:
        return self.committed_at - self.received_at


# -- generation -------------------------------------------------------------------

def _pad(build, keys: Sequence[KeyPair], target: int | None) -> Transaction:
    """Sign ``build(filler)`` with a filler string sized so the serialized
    transaction hits ``target`` bytes; transactions already larger stay as is."""
    tx = sign_tx(build(None), keys)
    if target is None:
        return tx
    size = len(canonical_serialize(tx))
    if size >= target:
        return tx
    filler = max(0, target - size - 12)
    for _ in range(3):
        tx = sign_tx(build("x" * filler), keys)
        size = len(canonical_serialize(tx))
        if size == target or filler + target - size < 0:
            break
        filler += target - size
    return tx


def _meta(filler: str | None, extra: dict | None = None) -> dict | None:
    meta = dict(extra or {})
    if filler is not None:
        meta["filler"] = filler
    return meta or None


def generate_workload(cfg: WorkloadConfig, escrow_public_key: str) -> list[WorkItem]:
    """Signed, dependency-annotated stream: CREATEs, REQUESTs, BIDs, ACCEPT_BIDs.

    Requests get one bid each round-robin first, the remaining bids go to
    uniformly random requests. The first ``accepts`` requests are settled,
    each with a uniformly chosen winner.
    """
    counts = cfg.check()
    rng = random.Random(f"workload:{cfg.seed}")
    pool = [f"cap-{i:03d}" for i in range(cfg.capability_pool)]
    n_req, n_bid = counts["REQUEST"], counts["BID"]

    requesters = [generate_keypair(("requester", cfg.seed, i)) for i in range(n_req)]
    req_caps = [sorted(rng.sample(pool, cfg.caps_per_request)) for _ in range(n_req)]
    target = [i % n_req if i < n_req else rng.randrange(n_req) for i in range(n_bid)] \
        if n_req else []

    items: list[WorkItem] = []
    creates: list[Transaction] = []
    bidders: list[KeyPair] = []
    for i in range(counts["CREATE"]):
        kp = generate_keypair(("bidder", cfg.seed, i))
        caps = set(req_caps[target[i]]) if i < len(target) else set()
        caps.add(rng.choice(pool))
        data = {"capabilities": sorted(caps), "serial": i}

        def build(filler, kp=kp, data=data):
            return with_id(Transaction("CREATE", (Asset(data=data, amount=1),),
                                       (Input(None, (kp.public_key,)),),
                                       (Output((kp.public_key,), 1),),
                                       metadata=_meta(filler)))

        tx = _pad(build, [kp], cfg.payload_size)
        creates.append(tx)
        bidders.append(kp)
        items.append(WorkItem(tx))

    requests: list[Transaction] = []
    for i, kp in enumerate(requesters):
        def build(filler, kp=kp, i=i):
            return with_id(Transaction("REQUEST", (Asset(data={"rfq": i}),),
                                       (Input(None, (kp.public_key,)),),
                                       (Output((kp.public_key,), 1),),
                                       metadata=_meta(filler, {"capabilities": req_caps[i]})))

        tx = _pad(build, [kp], cfg.payload_size)
        requests.append(tx)
        items.append(WorkItem(tx))

    bids_by_req: dict[int, list[Transaction]] = defaultdict(list)
    lookup: dict[str, Transaction] = {t.id: t for t in creates + requests}
    for j in range(n_bid):
        kp, create, rfq = bidders[j], creates[j], requests[target[j]]

        def build(filler, kp=kp, create=create, rfq=rfq):
            return with_id(Transaction(
                "BID", (Asset(id=create.id),),
                (Input(OutputRef(create.id, 0), (kp.public_key,)),),
                (Output((escrow_public_key,), 1, (kp.public_key,)),),
                refs=(rfq.id,), metadata=_meta(filler)))

        tx = _pad(build, [kp], cfg.payload_size)
        bids_by_req[target[j]].append(tx)
        lookup[tx.id] = tx
        items.append(WorkItem(tx, (create.id, rfq.id)))

    for r in range(counts["ACCEPT_BID"]):
        kp, rfq = requesters[r], requests[r]
        bids = sorted(bids_by_req[r], key=lambda b: b.id)
        win = rng.choice(bids)

        def build(filler, kp=kp, rfq=rfq, bids=bids, win=win):
            me = kp.public_key
            tx = with_id(Transaction(
                "ACCEPT_BID", (Asset(id=win.id),),
                tuple(Input(OutputRef(b.id, 0), (me,)) for b in bids),
                tuple(Output((me,) if b.id == win.id else b.outputs[0].prev_owners,
                             b.outputs[0].amount, (escrow_public_key,)) for b in bids),
                refs=(rfq.id,), metadata=_meta(filler)))
            kids = derive_children(tx, lookup.get, escrow_public_key)
            return tx.replace(children=tuple(k.id for k in kids))

        tx = _pad(build, [kp], cfg.payload_size)
        items.append(WorkItem(tx, tuple(b.id for b in bids)))
    return items


# -- execution ----------------------------------------------------------------------

@dataclass
class WorkloadResult:
    samples: list[MetricSample]
    duration: float
    pending_recovery: int
    alerts: int = 0

    @property
    def committed(self) -> int:
        return sum(s.committed for s in self.samples)

    @property
    def rejected(self) -> int:
        return sum(s.error is not None for s in self.samples)

    def rejected_by_error(self) -> dict[str, int]:
        out: dict[str, int] = defaultdict(int)
        for s in self.samples:
            if s.error is not None:
                out[s.error] += 1
        return dict(out)


def run_workload(cluster: Cluster, items: Sequence[WorkItem], drivers: int = 4,
                 timeout: float = 600.0, settle_timeout: float = 120.0) -> WorkloadResult:
    """Submit ``items`` through ``drivers`` concurrent drivers, releasing each
    one only after its dependencies commit; returns one sample per item."""
    pool = [Driver(cluster) for _ in range(max(1, drivers))]
    by_id = {it.tx.id: it for it in items}
    waiting: dict[str, set[str]] = {}
    dependents: dict[str, list[str]] = defaultdict(list)
    handles: dict[str, DriverHandle] = {}
    failed: dict[str, str] = {}
    done = [0]
    start = cluster.now

    def release(tx_id: str) -> None:
        if tx_id in failed:
            return
        drv = pool[len(handles) % len(pool)]
        token = max((handles[d].committed_height or 0 for d in by_id[tx_id].deps), default=0)
        handles[tx_id] = drv.submit_async(by_id[tx_id].tx, callback=finished, min_height=token)

    def finished(h: DriverHandle) -> None:
        done[0] += 1
        for dep_id in dependents.pop(h.tx_id, ()):
            if h.status == "committed":
                waiting[dep_id].discard(h.tx_id)
                if not waiting[dep_id]:
                    release(dep_id)
            else:
                fail(dep_id, "UncommittedDependency")

    def fail(tx_id: str, err: str) -> None:
        if tx_id in failed or tx_id in handles:
            return
        failed[tx_id] = err
        done[0] += 1
        for dep_id in dependents.pop(tx_id, ()):
            fail(dep_id, err)

    for it in items:
        waiting[it.tx.id] = set(it.deps)
        for d in it.deps:
            if d not in by_id:
                raise ConfigError(f"dependency {d} is not part of the workload")
            dependents[d].append(it.tx.id)
    for it in items:
        if not it.deps:
            release(it.tx.id)

    cluster.run_until(lambda: done[0] >= len(items), timeout)
    end = cluster.now

    def settled() -> bool:
        return all(not n.ledger.load_pending_recovery() for n in cluster.nodes if n.alive)

    waited = 0.0
    while not settled() and waited < settle_timeout:
        cluster.run_for(0.5)
        waited += 0.5
    pending = sum(len(n.ledger.load_pending_recovery()) for n in cluster.nodes if n.alive)

    samples = []
    for it in items:
        h = handles.get(it.tx.id)
        if h is None:
            samples.append(MetricSample(it.tx.id, it.op, None, None,
                                        failed.get(it.tx.id, "Unsubmitted")))
        elif h.status == "committed":
            samples.append(MetricSample(it.tx.id, it.op, h.first_received_at, h.committed_at))
        else:
            samples.append(MetricSample(it.tx.id, it.op, h.first_received_at, None,
                                        h.error or "Pending"))
    return WorkloadResult(samples, end - start, pending, len(cluster.alerts))


# -- metrics -------------------------------------------------------------------------

@dataclass(frozen=True)
class LatencyStats:
    n: int
    mean: float
    p50: float
    p95: float
    max: float


def _committed(samples: Iterable[MetricSample]) -> list[MetricSample]:
    out = [s for s in samples if s.committed and s.received_at is not None]
    if not out:
        raise ValueError("no committed samples")
    return out


def _percentile(sorted_vals: list[float], q: float) -> float:
    if len(sorted_vals) == 1:
        return sorted_vals[0]
    pos = q * (len(sorted_vals) - 1)
    lo, hi = math.floor(pos), math.ceil(pos)
    return sorted_vals[lo] + (sorted_vals[hi] - sorted_vals[lo]) * (pos - lo)


def measure_latency(samples: Iterable[MetricSample]) -> dict[str, LatencyStats]:
    """Per-operation receive-to-commit latency statistics (seconds)."""
    by_op: dict[str, list[float]] = defaultdict(list)
    for s in _committed(samples):
        by_op[s.op].append(s.latency)
    out = {}
    for op, vals in by_op.items():
        vals.sort()
        out[op] = LatencyStats(len(vals), statistics.fmean(vals), _percentile(vals, 0.5),
                               _percentile(vals, 0.95), vals[-1])
    return out


def measure_throughput(samples: Iterable[MetricSample]) -> float:
    """Committed transactions per second between the first reception and
    the last commitment."""
    done = _committed(samples)
    span = max(s.committed_at for s in done) - min(s.received_at for s in done)
    if span <= 0:
        raise ValueError("zero-length measurement window")
    return len(done) / span


# -- experiments ---------------------------------------------------------------------

@dataclass
class ReportRow:
    config: str
    value: int
    op: str
    n: int
    mean_latency: float
    p95_latency: float
    throughput: float


def _run_one(cluster_cfg: ClusterConfig, wl_cfg: WorkloadConfig, drivers: int
             ) -> tuple[WorkloadResult, Cluster]:
    cluster = Cluster(cluster_cfg)
    items = generate_workload(wl_cfg, cluster.escrow.public_key)
    return run_workload(cluster, items, drivers=drivers), cluster


def _rows(config: str, value: int, result: WorkloadResult) -> list[ReportRow]:
    lat = measure_latency(result.samples)
    tput = measure_throughput(result.samples)
    return [ReportRow(config, value, op, lat[op].n, lat[op].mean, lat[op].p95, tput)
            for op in WORKLOAD_OPS if op in lat]


def run_experiment_size(sizes: Sequence[int] = DEFAULT_SIZES, *, factor: float = 0.01,
                        seed: int = 0, nodes: int = 4, compute: str = "measured",
                        drivers: int = 4, out_dir: str | Path | None = None,
                        cluster_overrides: dict | None = None) -> list[ReportRow]:
    """Latency and throughput against serialized transaction size."""
    rows: list[ReportRow] = []
    for size in sizes:
        ccfg = ClusterConfig(nodes=nodes, seed=seed, compute=compute,
                             **(cluster_overrides or {}))
        result, cluster = _run_one(ccfg, WorkloadConfig(factor=factor, payload_size=size,
                                                        seed=seed), drivers)
        cluster.close()
        rows += _rows("size", size, result)
        log.info("size %d: committed %d/%d in %.2fs sim", size, result.committed,
                 len(result.samples), result.duration)
    if out_dir is not None:
        write_report(rows, Path(out_dir), "size")
    return rows


def run_experiment_cluster(node_counts: Sequence[int] = (4, 8), *, payload: int = 1090,
                           factor: float = 0.01, seed: int = 0, compute: str = "measured",
                           drivers: int = 4, out_dir: str | Path | None = None,
                           cluster_overrides: dict | None = None) -> list[ReportRow]:
    """Latency and throughput against validator count at a fixed payload size."""
    rows: list[ReportRow] = []
    for n in node_counts:
        ccfg = ClusterConfig(nodes=n, seed=seed, compute=compute, **(cluster_overrides or {}))
        result, cluster = _run_one(ccfg, WorkloadConfig(factor=factor, payload_size=payload,
                                                        seed=seed), drivers)
        cluster.close()
        rows += _rows("nodes", n, result)
    if out_dir is not None:
        write_report(rows, Path(out_dir), "cluster")
    return rows


def write_report(rows: Sequence[ReportRow], out_dir: Path, name: str) -> tuple[Path, Path]:
    """CSV of every row plus a gnuplot data file: one line per x value with
    the mean latency of each op followed by throughput."""
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{name}.csv"
    with open(csv_path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(asdict(rows[0]).keys()) if rows else ["config"])
        w.writeheader()
        for r in rows:
            w.writerow(asdict(r))
    dat_path = out_dir / f"{name}.dat"
    xs = sorted({r.value for r in rows})
    with open(dat_path, "w") as fh:
        fh.write("# x " + " ".join(WORKLOAD_OPS) + " throughput\n")
        for x in xs:
            at = {r.op: r for r in rows if r.value == x}
            lat = " ".join(f"{at[op].mean_latency:.6f}" if op in at else "nan"
                           for op in WORKLOAD_OPS)
            tput = next(iter(at.values())).throughput
            fh.write(f"{x} {lat} {tput:.3f}\n")
    return csv_path, dat_path
