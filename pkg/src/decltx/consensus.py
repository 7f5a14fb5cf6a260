"""Simulated BFT replication: CheckTx, block proposal, voting, DeliverTx.

Every node owns a private ledger and talks to its peers only through the
simulated :class:`~decltx.sim.Network`. A block commits at a node once it
holds the proposal plus votes from ``floor(2n/3) + 1`` nodes. Proposers
rotate by ``(height + round) mod n`` and a round advances when the round
timer expires, so a crashed proposer only stalls progress for one timeout.
"""
from __future__ import annotations

import json
import logging
import random
import time
from collections import OrderedDict, defaultdict, deque
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Iterable

import yaml

from .crypto import KeyPair, generate_keypair
from .errors import (
    ConfigError,
    InputDoesNotExistError,
    IntegrityError,
    SubmitRefused,
    TransportError,
    ValidationError,
)
from .ledger import Block, Ledger
from .model import OutputRef, Transaction, canonical_serialize, sha3_hex
from .nested import NestedExecutor
from .sim import Interrupt, Network, Simulator
from .validation import ValidationContext, validate_transaction

log = logging.getLogger(__name__)

CRASH_POINTS = ("accept.pre_log", "accept.post_log", "accept.mid_consensus", "returns.mid")


def quorum(n: int) -> int:
    return (2 * n) // 3 + 1


@dataclass
class ClusterConfig:
    nodes: int = 4
    block_max_txs: int = 512
    block_interval: float = 0.1
    round_timeout: float = 1.0
    seed: int = 0
    pipelining_enabled: bool = False
    net_delay: tuple[float, float] = (0.001, 0.010)
    bandwidth: float | None = None  # bytes per simulated second
    compute: str = "none"  # "none" | "measured"
    compute_scale: float = 1.0
    worker_count: int = 4
    child_timeout: float = 2.0
    data_dir: str | None = None

    def __post_init__(self):
        if self.nodes < 1:
            raise ConfigError("nodes must be >= 1")
        if self.block_max_txs < 1:
            raise ConfigError("block_max_txs must be >= 1")
        if self.compute not in ("none", "measured"):
            raise ConfigError(f"unknown compute mode {self.compute!r}")
        if self.pipelining_enabled:
            log.warning("pipelining_enabled is accepted but ignored; blocks execute sequentially")
        self.net_delay = tuple(self.net_delay)

    @classmethod
    def from_mapping(cls, data: dict) -> "ClusterConfig":
        data = dict(data)
        if "block_interval_ms" in data:
            data["block_interval"] = data.pop("block_interval_ms") / 1000.0
        if "round_timeout_ms" in data:
            data["round_timeout"] = data.pop("round_timeout_ms") / 1000.0
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_file(cls, path: str | Path) -> "ClusterConfig":
        text = Path(path).read_text()
        data = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
        return cls.from_mapping(data or {})

    def to_dict(self) -> dict:
        d = asdict(self)
        d["net_delay"] = list(self.net_delay)
        return d


class NodeCrash(Interrupt):
    pass


class SubmitHandle:
    """Client-side view of one submission attempt."""

    def __init__(self, sim: Simulator, tx_id: str, mode: str):
        self._sim = sim
        self.tx_id = tx_id
        self.mode = mode
        self.submitted_at = sim.now
        self.received_at: float | None = None
        self.accepted_at: float | None = None
        self.committed_at: float | None = None
        self.committed_height: int | None = None
        self.receiver: int | None = None
        self.status = "pending"
        self.error: str | None = None
        self.error_message = ""
        self._callbacks: list[Callable] = []

    @property
    def done(self) -> bool:
        return self.status != "pending"

    def add_done_callback(self, fn: Callable[["SubmitHandle"], Any]) -> None:
        if self.done:
            self._sim.schedule(0, fn, self)
        else:
            self._callbacks.append(fn)

    def _resolve(self, status: str, error: BaseException | str | None = None) -> None:
        if self.done:
            return
        self.status = status
        if status == "committed":
            self.committed_at = self._sim.now
        if error is not None:
            self.error = error if isinstance(error, str) else getattr(
                error, "name", type(error).__name__)
            self.error_message = str(error)
        for fn in self._callbacks:
            self._sim.schedule(0, fn, self)
        self._callbacks.clear()

    def __repr__(self) -> str:
        return f"SubmitHandle({self.tx_id[:12]}, {self.status}, error={self.error})"


@dataclass(frozen=True)
class Deferred:
    tx: Transaction
    handle: SubmitHandle | None
    min_height: int
    deadline: float
    reason: Exception


@dataclass(frozen=True)
class Proposal:
    height: int
    round: int
    prev_digest: str
    txs: tuple[Transaction, ...]
    proposer: int

    @property
    def digest(self) -> str:
        head = {"h": self.height, "r": self.round, "prev": self.prev_digest,
                "txs": [t.id for t in self.txs], "p": self.proposer}
        return sha3_hex(canonical_serialize(head))


class Node:
    def __init__(self, node_id: int, cluster: "Cluster"):
        self.id = node_id
        self.cluster = cluster
        self.escrow: KeyPair = cluster.escrow
        self.ledger = cluster._open_ledger(node_id)
        self.alive = True
        self.alerts: list[Exception] = []
        self.busy_until = 0.0
        self.epoch = 0
        self._t0: float | None = None
        self._last_cost = 0.0
        self._reset_volatile()

    def _reset_volatile(self) -> None:
        self.inbox: deque[tuple[Callable, tuple]] = deque()
        self._drain_scheduled = False
        self.mempool: OrderedDict[str, Transaction] = OrderedDict()
        self.handles: dict[str, list[SubmitHandle]] = defaultdict(list)
        self.proposals: dict[tuple[int, int, str], Proposal] = {}
        self.votes: dict[tuple[int, int, str], set[int]] = defaultdict(set)
        self.voted: set[tuple[int, int]] = set()
        self.max_voted_round: dict[int, int] = {}
        self.proposed: set[tuple[int, int]] = set()
        self.round = 0
        self.round_start = self.cluster.sim.now
        self.syncing = False
        # txs waiting for this node to catch up with their inputs
        self.orphans: dict[str, Deferred] = {}
        self.executor = NestedExecutor(self, self.cluster.config.worker_count,
                                       self.cluster.config.child_timeout)

    # -- plumbing ------------------------------------------------------------

    @property
    def height(self) -> int:
        return self.ledger.height

    def ctx(self) -> ValidationContext:
        return ValidationContext(self.ledger, self.escrow.public_key)

    def dispatch(self, fn: Callable, *args) -> None:
        """Deliver a message; with measured compute, messages queue behind
        the handler currently occupying this node."""
        if not self.alive:
            return
        if self.cluster.config.compute != "measured":
            self._run(fn, args)
            return
        self.inbox.append((fn, args))
        if not self._drain_scheduled:
            self._drain_scheduled = True
            self.cluster.sim.at(max(self.busy_until, self.cluster.sim.now), self._drain,
                                self.epoch)

    def _drain(self, epoch: int) -> None:
        if epoch != self.epoch or not self.alive:
            return
        self._drain_scheduled = False
        if not self.inbox:
            return
        fn, args = self.inbox.popleft()
        self._run(fn, args)
        if self.alive and epoch == self.epoch:
            self.busy_until = self.cluster.sim.now + self._last_cost
            if self.inbox:
                self._drain_scheduled = True
                self.cluster.sim.at(self.busy_until, self._drain, epoch)

    def _run(self, fn: Callable, args: tuple) -> None:
        self._t0 = time.perf_counter()
        try:
            fn(*args)
        except Interrupt:
            pass  # this node crashed mid-handler
        finally:
            self._last_cost = self.elapsed()
            self._t0 = None

    def elapsed(self) -> float:
        if self._t0 is None or self.cluster.config.compute != "measured":
            return 0.0
        return (time.perf_counter() - self._t0) * self.cluster.config.compute_scale

    def send(self, dst: int, method: str, *args, size: int = 0) -> None:
        node = self.cluster.nodes[dst]
        self.cluster.network.send(node.dispatch, getattr(node, method), *args,
                                  size=size, extra=self.elapsed())

    def broadcast(self, method: str, *args, size: int = 0, include_self: bool = True) -> None:
        for n in self.cluster.nodes:
            if n.id == self.id:
                if include_self:
                    getattr(self, method)(*args)
            else:
                self.send(n.id, method, *args, size=size)

    def maybe_crash(self, point: str) -> None:
        if self.cluster._take_crash_point(self.id, point):
            log.info("node %d crashes at %s (t=%.3f)", self.id, point, self.cluster.sim.now)
            self.crash()
            raise NodeCrash(point)

    def alert(self, exc: Exception) -> None:
        log.error("node %d alert: %s", self.id, exc)
        self.alerts.append(exc)
        self.cluster.alerts.append((self.id, exc))

    # -- client submissions ---------------------------------------------------

    def on_submit(self, tx: Transaction, handle: SubmitHandle, min_height: int = 0) -> None:
        handle.received_at = self.cluster.sim.now
        self.cluster.receive_log.append((self.cluster.sim.now, self.id, tx.id))
        if self.syncing:
            handle._resolve("error", SubmitRefused("node is syncing"))
            return
        self._admit(tx, handle, min_height)

    def _defer(self, tx: Transaction, handle: SubmitHandle | None, min_height: int,
               deadline: float | None, exc: Exception) -> bool:
        """Park ``tx`` until a later local commit; False once the deadline passed."""
        now = self.cluster.sim.now
        if deadline is None:
            deadline = now + self.cluster.config.round_timeout
        if now >= deadline:
            return False
        prev = self.orphans.get(tx.id)
        if prev is not None and prev.handle is not None and handle is None:
            return True
        self.orphans[tx.id] = Deferred(tx, handle, min_height, deadline, exc)
        return True

    def _admit(self, tx: Transaction, handle: SubmitHandle, min_height: int = 0,
               deadline: float | None = None) -> None:
        if self.ledger.is_committed(tx.id):
            handle.committed_height = self.ledger.tx_height(tx.id)
            handle._resolve("committed")
            return
        if tx.id in self.mempool:
            self.handles[tx.id].append(handle)
            handle.accepted_at = self.cluster.sim.now
            return
        if self.height < min_height:
            behind = SubmitRefused(f"node at height {self.height}, client saw {min_height}")
            if not self._defer(tx, handle, min_height, deadline, behind):
                handle._resolve("error", behind)
            return
        is_accept = tx.op == "ACCEPT_BID"
        if is_accept:
            self.maybe_crash("accept.pre_log")
        try:
            validate_transaction(tx, self.ctx())
        except InputDoesNotExistError as exc:
            # a peer may have committed the input a moment before this node
            if not self._defer(tx, handle, min_height, deadline, exc):
                handle._resolve("error", exc)
            return
        except ValidationError as exc:
            handle._resolve("error", exc)
            return
        if is_accept:
            self.ledger.log_received(tx)
        handle.accepted_at = self.cluster.sim.now
        self.handles[tx.id].append(handle)
        if self.cluster.tamper is not None:
            tx = self.cluster.tamper(self.id, tx) or tx
        size = self.cluster.tx_size(tx)
        for n in self.cluster.nodes:
            if n.id != self.id:
                self.send(n.id, "check_tx", tx, min_height, size=size)
        err = self.check_tx(tx)
        if err is not None:
            self._fail(tx.id, err)
        if is_accept:
            self.maybe_crash("accept.mid_consensus")

    def check_tx(self, tx: Transaction, min_height: int = 0, deadline: float | None = None
                 ) -> ValidationError | None:
        """Mempool admission; returns the rejection instead of raising."""
        if tx.id in self.mempool or self.ledger.is_committed(tx.id):
            return None
        if self.height < min_height:
            self._defer(tx, None, min_height, deadline, SubmitRefused("behind"))
            return None
        try:
            validate_transaction(tx, self.ctx())
        except InputDoesNotExistError as exc:
            return None if self._defer(tx, None, min_height, deadline, exc) else exc
        except ValidationError as exc:
            return exc
        self.mempool[tx.id] = tx
        if len(self.mempool) == 1:
            self.round_start = self.cluster.sim.now
        return None

    def _fail(self, tx_id: str, err) -> None:
        for h in self.handles.pop(tx_id, ()):
            h._resolve("error", err)

    # -- consensus -------------------------------------------------------------

    def on_tick(self) -> None:
        if self.syncing:
            return
        if self.orphans:
            self._expire_orphans()
        now = self.cluster.sim.now
        if not self.mempool:
            self.round_start = now
            return
        timeout = self.cluster.config.round_timeout
        while now - self.round_start >= timeout:
            self.round += 1
            self.round_start += timeout
        h = self.height + 1
        if self.cluster.proposer(h, self.round) == self.id and (h, self.round) not in self.proposed:
            self.proposed.add((h, self.round))
            txs = tuple(list(self.mempool.values())[: self.cluster.config.block_max_txs])
            prop = Proposal(h, self.round, self.ledger.last_digest, txs, self.id)
            size = sum(self.cluster.tx_size(t) for t in txs)
            self.broadcast("on_proposal", prop, size=size)

    def on_proposal(self, prop: Proposal) -> None:
        if self.syncing or prop.height <= self.height:
            return
        if prop.height > self.height + 1:
            self.request_sync(prop.proposer)
            return
        if prop.prev_digest != self.ledger.last_digest:
            return
        if prop.proposer != self.cluster.proposer(prop.height, prop.round):
            return
        key = (prop.height, prop.round, prop.digest)
        self.proposals[key] = prop
        if (prop.height, prop.round) in self.voted:
            return
        if prop.round < self.max_voted_round.get(prop.height, -1):
            return
        self.voted.add((prop.height, prop.round))
        self.max_voted_round[prop.height] = prop.round
        if prop.round > self.round:
            self.round = prop.round
            self.round_start = self.cluster.sim.now
        self.broadcast("on_vote", prop.height, prop.round, prop.digest, self.id)

    def on_vote(self, height: int, rnd: int, digest: str, voter: int) -> None:
        if self.syncing or height <= self.height:
            return
        key = (height, rnd, digest)
        self.votes[key].add(voter)
        if len(self.votes[key]) < self.cluster.quorum:
            return
        prop = self.proposals.get(key)
        if prop is not None and height == self.height + 1:
            self.finalize(prop)
        elif prop is None:
            # the proposal may still be in flight; fall back to a sync
            self.cluster.sim.schedule(self.cluster.config.round_timeout / 2,
                                      self.dispatch, self._sync_if_behind, height, voter)

    def _sync_if_behind(self, height: int, peer: int) -> None:
        if self.height < height:
            self.request_sync(peer)

    def deliver(self, txs: Iterable[Transaction]) -> tuple[list[Transaction], list[tuple[str, str]]]:
        """DeliverTx: re-validate every transaction against the block so far."""
        accepted: list[Transaction] = []
        rejected: list[tuple[str, str]] = []
        base = self.ctx()
        for tx in txs:
            try:
                validate_transaction(tx, base.with_block(accepted))
                accepted.append(tx)
            except ValidationError as exc:
                rejected.append((tx.id, exc.name))
        return accepted, rejected

    def finalize(self, prop: Proposal) -> None:
        accepted, rejected = self.deliver(prop.txs)
        block = Block(prop.height, prop.prev_digest, tuple(accepted), tuple(rejected),
                      vote_count=self.cluster.quorum)
        self.ledger.commit_block(block)
        self.cluster._on_commit(self, block)
        self._after_commit(block)

    def _after_commit(self, block: Block) -> None:
        now = self.cluster.sim.now
        for tx in block.txs:
            self.mempool.pop(tx.id, None)
            self.orphans.pop(tx.id, None)
            for h in self.handles.pop(tx.id, ()):
                h.committed_height = block.height
                h._resolve("committed")
        for tx_id, err in block.rejected:
            self.mempool.pop(tx_id, None)
            self._fail(tx_id, err)
        self._recheck(block)
        for key in [k for k in self.proposals if k[0] <= block.height]:
            del self.proposals[key]
        for key in [k for k in self.votes if k[0] <= block.height]:
            del self.votes[key]
        self.round = 0
        self.round_start = now
        self._retry_orphans()
        self.executor.on_block_commit(block.txs)

    def _retry_orphans(self) -> None:
        pending, self.orphans = self.orphans, {}
        for d in pending.values():
            if d.handle is not None:
                self._admit(d.tx, d.handle, d.min_height, d.deadline)
            else:
                self.check_tx(d.tx, d.min_height, d.deadline)

    def _expire_orphans(self) -> None:
        now = self.cluster.sim.now
        for tx_id, d in list(self.orphans.items()):
            if now >= d.deadline:
                del self.orphans[tx_id]
                if d.handle is not None:
                    d.handle._resolve("error", d.reason)

    def _recheck(self, block: Block) -> None:
        """Drop mempool entries the new block invalidated.

        Validity only shrinks when an output gets spent or an auction's bid
        set changes, so only transactions touching those are re-validated.
        """
        spent: set[OutputRef] = set()
        rfqs: set[str] = set()
        for tx in block.txs:
            if tx.op == "ACCEPT_BID":
                rfqs.add(tx.refs[0])
                spent.update(tx.spends)
            else:
                spent.update(tx.spends)
            if tx.op == "BID":
                rfqs.update(tx.refs)
        ctx = self.ctx()
        for tx in list(self.mempool.values()):
            touched = any(r in spent for r in tx.spends) or (
                tx.op in ("BID", "ACCEPT_BID") and any(r in rfqs for r in tx.refs))
            if not touched:
                continue
            try:
                validate_transaction(tx, ctx)
            except ValidationError as exc:
                del self.mempool[tx.id]
                self._fail(tx.id, exc)

    # -- sync / crash -----------------------------------------------------------

    def request_sync(self, peer: int) -> None:
        self.send(peer, "on_sync_request", self.id, self.height + 1)

    def on_sync_request(self, requester: int, from_height: int) -> None:
        if self.syncing:
            return
        blocks = list(self.ledger.iter_blocks(from_height))
        size = sum(self.cluster.tx_size(t) for b in blocks for t in b.txs)
        self.send(requester, "on_sync_response", blocks, tuple(self.mempool.values()),
                  size=size)

    def on_sync_response(self, blocks: list[Block], mempool: tuple[Transaction, ...]) -> None:
        for block in blocks:
            if block.height == self.height + 1:
                self.replay(block)
        if self.syncing:
            self.syncing = False
            self.round_start = self.cluster.sim.now
            self.executor.recover()
        for tx in mempool:
            if not self.ledger.is_committed(tx.id):
                self.check_tx(tx)

    def replay(self, block: Block) -> None:
        accepted, rejected = self.deliver(block.txs)
        if [t.id for t in accepted] != list(block.tx_ids):
            err = IntegrityError(f"replayed block {block.height} does not re-validate")
            self.alert(err)
            raise err
        self.ledger.commit_block(block)
        self._after_commit(block)

    def crash(self) -> None:
        if not self.alive:
            return
        self.alive = False
        self.epoch += 1
        self._reset_volatile()
        self.cluster._close_ledger(self)

    def restore(self) -> None:
        if self.alive:
            return
        self.alive = True
        self.busy_until = self.cluster.sim.now
        self._reset_volatile()
        peers = [n.id for n in self.cluster.nodes if n.id != self.id and n.alive]
        if not peers:
            self.executor.recover()
            return
        self.syncing = True
        for p in peers:
            self.request_sync(p)


class Cluster:
    """N simulated validators plus the client-facing submission API."""

    def __init__(self, config: ClusterConfig | None = None, **overrides):
        if config is None:
            config = ClusterConfig(**overrides)
        elif overrides:
            config = ClusterConfig(**{**asdict(config), **overrides})
        self.config = config
        self.sim = Simulator()
        self.network = Network(self.sim, config.seed, config.net_delay, config.bandwidth)
        self.rng = random.Random(f"cluster:{config.seed}")
        self.escrow = generate_keypair(("escrow", config.seed))
        self.quorum = quorum(config.nodes)
        self.tamper: Callable[[int, Transaction], Transaction | None] | None = None
        self.alerts: list[tuple[int, Exception]] = []
        self.commit_log: list[tuple[float, int, int, str]] = []  # (time, node, height, digest)
        self.receive_log: list[tuple[float, int, str]] = []  # (time, node, tx id)
        self._crash_points: dict[tuple[int | None, str], int] = {}
        self._sizes: dict[str, int] = {}
        self._observers: list[Callable[[Node, Block], Any]] = []
        self.nodes = [Node(i, self) for i in range(config.nodes)]
        self._tick()

    # -- ledger storage ------------------------------------------------------------

    def _ledger_path(self, node_id: int) -> str | None:
        if self.config.data_dir is None:
            return None
        Path(self.config.data_dir).mkdir(parents=True, exist_ok=True)
        return str(Path(self.config.data_dir) / f"node{node_id}.sqlite")

    def _open_ledger(self, node_id: int) -> Ledger:
        return Ledger(self._ledger_path(node_id))

    def _close_ledger(self, node: Node) -> None:
        # drop every in-process cache; only what reached disk comes back
        if self.config.data_dir is not None:
            node.ledger.close()
            node.ledger = Ledger(self._ledger_path(node.id))

    def close(self) -> None:
        for n in self.nodes:
            n.ledger.close()

    # -- timing ----------------------------------------------------------------

    def _tick(self) -> None:
        for n in self.nodes:
            n.dispatch(n.on_tick)
        self.sim.schedule(self.config.block_interval, self._tick)

    def proposer(self, height: int, rnd: int) -> int:
        return (height + rnd) % self.config.nodes

    def run_for(self, seconds: float) -> None:
        self.sim.run_for(seconds)

    def run_until(self, predicate: Callable[[], bool], timeout: float = 60.0) -> bool:
        return self.sim.run_until(predicate, timeout)

    @property
    def now(self) -> float:
        return self.sim.now

    def tx_size(self, tx: Transaction) -> int:
        if self.config.bandwidth is None:
            return 0
        size = self._sizes.get(tx.id)
        if size is None:
            size = self._sizes[tx.id] = len(canonical_serialize(tx))
        return size

    # -- submission ----------------------------------------------------------------

    @property
    def alive_count(self) -> int:
        return sum(n.alive for n in self.nodes)

    def submit(self, tx: Transaction | dict, mode: str = "async", node_id: int | None = None,
               origin: int | None = None, min_height: int = 0) -> SubmitHandle:
        """Hand ``tx`` to a uniformly chosen node (or ``node_id``).

        ``mode="sync"`` runs the simulation until the receiver has accepted or
        rejected the transaction; ``SubmitRefused`` is raised below quorum.
        ``min_height`` is a read-your-writes token: the receiver validates
        only once it has committed that many blocks.
        """
        if mode not in ("async", "sync"):
            raise ValueError(f"mode must be 'async' or 'sync', not {mode!r}")
        if not isinstance(tx, Transaction):
            tx = Transaction.from_dict(tx)
        handle = SubmitHandle(self.sim, tx.id, mode)
        if self.alive_count < self.quorum:
            err = SubmitRefused(f"only {self.alive_count} of {len(self.nodes)} nodes alive")
            if mode == "sync":
                raise err
            handle._resolve("error", err)
            return handle
        receiver = node_id if node_id is not None else self.rng.randrange(len(self.nodes))
        handle.receiver = receiver
        node = self.nodes[receiver]
        if not node.alive:
            handle._resolve("error", TransportError(f"node {receiver} unreachable"))
        else:
            extra = self.nodes[origin].elapsed() if origin is not None else 0.0
            self.network.send(node.dispatch, node.on_submit, tx, handle, min_height,
                              size=self.tx_size(tx), extra=extra)
        if mode == "sync":
            self.sim.run_until(lambda: handle.done or handle.accepted_at is not None, 30.0)
        return handle

    # -- observation ---------------------------------------------------------------

    def add_commit_observer(self, fn: Callable[[Node, Block], Any]) -> None:
        self._observers.append(fn)

    def _on_commit(self, node: Node, block: Block) -> None:
        self.commit_log.append((self.sim.now, node.id, block.height, block.digest))
        for fn in self._observers:
            fn(node, block)

    def any_ledger(self) -> Ledger:
        """Ledger of the most advanced live node (read handle for clients)."""
        live = [n for n in self.nodes if n.alive] or self.nodes
        return max(live, key=lambda n: n.height).ledger

    def is_committed(self, tx_id: str) -> bool:
        return any(n.alive and n.ledger.is_committed(tx_id) for n in self.nodes)

    def committed_everywhere(self, tx_ids: Iterable[str]) -> bool:
        ids = list(tx_ids)
        return all(n.ledger.is_committed(t) for n in self.nodes if n.alive for t in ids)

    def commit_time(self, tx_id: str) -> float | None:
        """Simulated time at which the first node committed ``tx_id``."""
        height = None
        for n in self.nodes:
            if n.alive and (height := n.ledger.tx_height(tx_id)) is not None:
                break
        if height is None:
            return None
        return min((t for t, _, h, _ in self.commit_log if h == height), default=None)

    def tx_status(self, tx_id: str) -> str:
        if self.is_committed(tx_id):
            return "committed"
        if any(n.alive and tx_id in n.mempool for n in self.nodes):
            return "pending"
        return "unknown"

    def settlement_status(self, accept_id: str) -> dict | None:
        for n in self.nodes:
            if n.alive:
                status = n.executor.settlement_status(accept_id)
                if status is not None:
                    return status
        return None

    def state_digests(self) -> dict[int, tuple[int, str]]:
        return {n.id: (n.height, n.ledger.last_digest) for n in self.nodes}

    def histories_agree(self) -> bool:
        """Every pair of nodes agrees on all heights both have committed."""
        digests: dict[int, str] = {}
        for n in self.nodes:
            for b in n.ledger.iter_blocks():
                if digests.setdefault(b.height, b.digest) != b.digest:
                    return False
        return True

    def converged(self) -> bool:
        live = [n for n in self.nodes if n.alive]
        return len({(n.height, n.ledger.last_digest) for n in live}) == 1

    # -- faults --------------------------------------------------------------------

    def arm_crash(self, point: str, node_id: int | None = None, count: int = 1) -> None:
        """Crash ``node_id`` (any node if ``None``) the next time it reaches ``point``."""
        if point not in CRASH_POINTS:
            raise ValueError(f"unknown crash point {point!r}")
        self._crash_points[(node_id, point)] = count

    def _take_crash_point(self, node_id: int, point: str) -> bool:
        for key in ((node_id, point), (None, point)):
            left = self._crash_points.get(key, 0)
            if left > 0:
                self._crash_points[key] = left - 1
                return True
        return False

    def crash_node(self, node_id: int) -> None:
        self.nodes[node_id].crash()

    def restore_node(self, node_id: int) -> None:
        self.nodes[node_id].restore()

    def schedule_fault(self, at: float, action: str, node_id: int) -> None:
        if action not in ("crash", "restore"):
            raise ConfigError(f"unknown fault action {action!r}")
        fn = self.crash_node if action == "crash" else self.restore_node
        self.sim.at(at, fn, node_id)

    def load_fault_script(self, script: str | Path | list[dict]) -> None:
        """Entries ``{time_ms, action: crash|restore, node}``."""
        if not isinstance(script, list):
            text = Path(script).read_text()
            script = json.loads(text) if str(script).endswith(".json") else yaml.safe_load(text)
        for entry in script:
            self.schedule_fault(entry["time_ms"] / 1000.0, entry["action"], int(entry["node"]))
