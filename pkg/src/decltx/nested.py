"""Non-locking nested execution of ACCEPT_BID.

The parent commits first. Its receiver node then derives the children (one
TRANSFER of the winning bid to the requester, one RETURN per losing bid),
writes a recovery entry, and hands the children to a small pool of workers
that submit them until each one is committed. Queue contents can always be
rebuilt from the recovery entries, so a crash anywhere in this sequence is
repaired by :meth:`NestedExecutor.recover`.
"""
from __future__ import annotations

import logging
from collections import deque
from typing import Callable, Iterable

from .errors import TRANSIENT_ERRORS, RecoveryInconsistency
from .ledger import RecoveryLogEntry
from .model import Asset, Input, Transaction, with_id

log = logging.getLogger(__name__)


def derive_children(accept_tx: Transaction, get_tx: Callable[[str], Transaction | None],
                    escrow_public_key: str) -> list[Transaction]:
    """Unsigned children of an ACCEPT_BID, aligned with its inputs.

    Child ``k`` spends the escrow output claimed by input ``k`` and pays
    exactly parent output ``k``, so every child output is a parent output.
    """
    win_id = accept_tx.asset[0].id if accept_tx.asset else None
    children = []
    for inp, out in zip(accept_tx.inputs, accept_tx.outputs):
        if inp.fulfills is None:
            raise RecoveryInconsistency(f"{accept_tx.id}: input without escrow claim")
        bid = get_tx(inp.fulfills.transaction_id)
        if bid is None:
            raise RecoveryInconsistency(f"bid {inp.fulfills.transaction_id} not found")
        child = Transaction(
            operation="TRANSFER" if bid.id == win_id else "RETURN",
            asset=(Asset(id=bid.asset_id()),),
            inputs=(Input(inp.fulfills, (escrow_public_key,)),),
            outputs=(out,),
            refs=(accept_tx.id,),
            version=accept_tx.version,
        )
        children.append(with_id(child))
    return children


def deter_children(accept_tx: Transaction, ledger, escrow_public_key: str) -> list[Transaction]:
    """Children of a committed ACCEPT_BID, checked against the ledger.

    Each escrow output must still be unspent, or spent by the matching child.
    """
    children = derive_children(accept_tx, ledger.get_tx, escrow_public_key)
    for child in children:
        ref = child.inputs[0].fulfills
        src = ledger.get_tx(ref.transaction_id)
        if src is None or ref.output_index >= len(src.outputs):
            raise RecoveryInconsistency(f"escrow output {ref} missing")
        spender = ledger.spender_of(ref)
        if spender is not None and spender != child.id:
            raise RecoveryInconsistency(f"escrow output {ref} spent by foreign tx {spender}")
    return children


class NestedExecutor:
    """Per-node settlement driver; volatile state is rebuilt on restore."""

    def __init__(self, node, worker_count: int = 4, child_timeout: float = 2.0,
                 max_attempts: int = 8):
        self.node = node
        self.worker_count = worker_count
        self.child_timeout = child_timeout
        self.max_attempts = max_attempts
        self.queue: deque[str] = deque()
        self.inflight: dict[str, int] = {}  # child id -> attempt token
        self.children: dict[str, tuple[str, Transaction]] = {}
        self.attempts: dict[str, int] = {}
        self._token = 0

    @property
    def ledger(self):
        return self.node.ledger

    def _active(self) -> bool:
        return self.node.alive and self.node.executor is self

    # -- commit hook -----------------------------------------------------------

    def on_block_commit(self, txs: Iterable[Transaction]) -> None:
        """Settle every ACCEPT_BID this node received; track child commits."""
        for tx in txs:
            if tx.op == "ACCEPT_BID" and self.ledger.is_received(tx.id):
                self.settle(tx)
            elif tx.refs and tx.id in self.children:
                self.mark_committed(tx)
        self.pump()

    def settle(self, accept_tx: Transaction) -> None:
        if self.ledger.get_recovery(accept_tx.id) is not None:
            return
        try:
            children = deter_children(accept_tx, self.ledger, self.node.escrow.public_key)
        except RecoveryInconsistency as exc:
            self.node.alert(exc)
            return
        entry = RecoveryLogEntry(
            accept_tx_id=accept_tx.id,
            rfq_id=accept_tx.refs[0],
            return_tx_ids=tuple(c.id for c in children),
            statuses={c.id: "pending" for c in children},
            children=tuple(children),
        )
        self.ledger.log_accept_recovery(entry)
        self.node.maybe_crash("accept.post_log")
        for child in children:
            self.enqueue(accept_tx.id, child)

    def enqueue(self, accept_id: str, child: Transaction) -> None:
        self.children[child.id] = (accept_id, child)
        if self.ledger.is_committed(child.id):
            self.ledger.update_return_status(accept_id, child.id, "committed")
            return
        if child.id in self.inflight or child.id in self.queue:
            return
        self.ledger.update_return_status(accept_id, child.id, "enqueued")
        self.queue.append(child.id)

    def mark_committed(self, tx: Transaction) -> None:
        accept_id, _ = self.children.get(tx.id, (tx.refs[0], None))
        entry = self.ledger.get_recovery(accept_id)
        if entry is None or tx.id not in entry.statuses:
            return
        self.ledger.update_return_status(accept_id, tx.id, "committed")
        self.inflight.pop(tx.id, None)
        if tx.id in self.queue:
            self.queue.remove(tx.id)
        self.node.maybe_crash("returns.mid")

    # -- workers ---------------------------------------------------------------

    def pump(self) -> None:
        while self._active() and self.queue and len(self.inflight) < self.worker_count:
            self._start(self.queue.popleft())

    def _start(self, child_id: str) -> None:
        from .driver import sign_tx

        accept_id, child = self.children[child_id]
        if self.ledger.is_committed(child_id):
            self.ledger.update_return_status(accept_id, child_id, "committed")
            return
        self._token += 1
        token = self._token
        self.inflight[child_id] = token
        signed = sign_tx(child, [self.node.escrow])
        cluster = self.node.cluster
        handle = cluster.submit(signed, mode="async", origin=self.node.id,
                                min_height=self.node.height)
        handle.add_done_callback(lambda h: self._on_result(child_id, token, h))
        cluster.sim.schedule(self.child_timeout, self._on_timeout, child_id, token)

    def _on_timeout(self, child_id: str, token: int) -> None:
        if self._active() and self.inflight.get(child_id) == token:
            self._retry(child_id)

    def _on_result(self, child_id: str, token: int, handle) -> None:
        if not self._active() or self.inflight.get(child_id) != token:
            return
        accept_id, child = self.children[child_id]
        if handle.status == "committed" or self.ledger.is_committed(child_id):
            self.inflight.pop(child_id, None)
            if self.ledger.is_committed(child_id):
                self.mark_committed(child)
            else:
                # committed elsewhere; this node learns it on its own commit
                self.queue.append(child_id)
                self.node.cluster.sim.schedule(self.node.cluster.config.block_interval,
                                               self.pump)
                return
        elif handle.error in TRANSIENT_ERRORS:
            self._retry(child_id, backoff=0.05)
            return
        else:
            n = self.attempts.get(child_id, 0) + 1
            self.attempts[child_id] = n
            if n >= self.max_attempts:
                self.inflight.pop(child_id, None)
                self.node.alert(RecoveryInconsistency(
                    f"child {child_id} of {accept_id} rejected {n} times: {handle.error}"))
                return
            self._retry(child_id, backoff=self.node.cluster.config.block_interval * n)
            return
        self.pump()

    def _retry(self, child_id: str, backoff: float = 0.0) -> None:
        self.inflight.pop(child_id, None)
        self.queue.append(child_id)
        if backoff:
            self.node.cluster.sim.schedule(backoff, self.pump)
        else:
            self.pump()

    # -- recovery ----------------------------------------------------------------

    def recover(self) -> None:
        """Rebuild the queue from the recovery collection (idempotent)."""
        for accept_id in self.ledger.received_ids("ACCEPT_BID"):
            tx = self.ledger.get_tx(accept_id)
            if tx is not None and self.ledger.get_recovery(accept_id) is None:
                self.settle(tx)
        for entry in self.ledger.load_pending_recovery():
            children = {c.id: c for c in entry.children}
            if len(children) != len(entry.return_tx_ids):
                accept = self.ledger.get_tx(entry.accept_tx_id)
                children = {c.id: c for c in deter_children(
                    accept, self.ledger, self.node.escrow.public_key)}
            for cid in entry.return_tx_ids:
                self.enqueue(entry.accept_tx_id, children[cid])
        self.pump()

    def settlement_status(self, accept_id: str) -> dict | None:
        entry = self.ledger.get_recovery(accept_id)
        if entry is None:
            return None
        return {"parent_status": entry.parent_status, "children": dict(entry.statuses),
                "settled": entry.settled}
