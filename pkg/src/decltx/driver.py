"""Client driver: build transactions from templates, sign, submit, retry.

Templates (``templates/<op>.yaml``) declare which payload keys an operation
needs and the defaults for the optional ones; :func:`prepare` fills in the
structural parts (inputs, outputs, escrow routing, ACCEPT_BID children)
from the ledger.
"""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

import yaml

from . import crypto
from .crypto import KeyPair
from .errors import TRANSIENT_ERRORS, PrepareError, SignError, SubmitRefused, Unresolved
from .model import (
    OPERATIONS,
    Asset,
    Input,
    Output,
    OutputRef,
    Transaction,
    signing_message,
    with_id,
)
from .nested import derive_children

log = logging.getLogger(__name__)

TEMPLATE_DIR = Path(__file__).with_name("templates")
TEMPLATE_DIR_ENV = "DECLTX_TEMPLATE_DIR"


@dataclass(frozen=True)
class Template:
    operation: str
    required: tuple[str, ...]
    optional: Mapping[str, Any]
    description: str = ""


@lru_cache(maxsize=None)
def _load_template(op: str, directory: str) -> Template:
    path = Path(directory) / f"{op.lower()}.yaml"
    if not path.exists():
        raise PrepareError(f"no template for {op}")
    doc = yaml.safe_load(path.read_text())
    payload = doc.get("payload") or {}
    return Template(doc["operation"], tuple(payload.get("required") or ()),
                    dict(payload.get("optional") or {}), doc.get("description", ""))


def load_template(op: str) -> Template:
    return _load_template(op, os.environ.get(TEMPLATE_DIR_ENV, str(TEMPLATE_DIR)))


def sign_tx(unsigned: Transaction, keypairs: Iterable[KeyPair]) -> Transaction:
    """Fill every input fulfillment; each input is signed by all its owners."""
    by_pub = {kp.public_key: kp for kp in keypairs}
    tx = with_id(unsigned.replace(inputs=tuple(Input(i.fulfills, i.owners_before)
                                               for i in unsigned.inputs)))
    if unsigned.id is not None and unsigned.id != tx.id:
        raise SignError("transaction body changed after its id was computed")
    msg = signing_message(tx)
    inputs = []
    for n, inp in enumerate(tx.inputs):
        missing = [k for k in inp.owners_before if k not in by_pub]
        if missing or not inp.owners_before:
            raise SignError(f"input {n}: no key for owner(s) {missing or '<none>'}")
        sig = crypto.multi_sign([by_pub[k].private_key for k in inp.owners_before], msg)
        inputs.append(Input(inp.fulfills, inp.owners_before, tuple(sig.to_wire())))
    return tx.replace(inputs=tuple(inputs))


def find_unspent(reader, owner: str, asset_id: str) -> list[OutputRef]:
    """Unspent outputs of ``asset_id`` held solely by ``owner`` (ledger scan)."""
    out = []
    for tx in reader.iter_txs():
        if tx.asset_id() != asset_id or tx.op not in ("CREATE", "TRANSFER", "BID", "RETURN"):
            continue
        for idx, o in enumerate(tx.outputs):
            ref = OutputRef(tx.id, idx)
            if tuple(o.owners) == (owner,) and reader.spender_of(ref) is None:
                out.append(ref)
    return out


def prepare(op: str, payload: Mapping[str, Any], keypair: KeyPair, *, reader=None,
            escrow_public_key: str | None = None,
            spend_refs: Sequence[OutputRef] | None = None) -> Transaction:
    """Build an unsigned transaction with its id (and children) filled in."""
    if op not in OPERATIONS:
        raise PrepareError(f"unknown operation {op!r}")
    if op == "RETURN":
        raise PrepareError("RETURN transactions are generated by ACCEPT_BID settlement")
    tpl = load_template(op)
    missing = [k for k in tpl.required if k not in payload]
    if missing:
        raise PrepareError(f"{op} payload is missing {missing}")
    unknown = set(payload) - set(tpl.required) - set(tpl.optional)
    if unknown:
        raise PrepareError(f"{op} payload has unknown keys {sorted(unknown)}")
    p = {**tpl.optional, **payload}
    me = keypair.public_key
    if op == "CREATE":
        return _prepare_create(p, me)
    if op == "REQUEST":
        caps = p["capabilities"]
        if not isinstance(caps, list) or not caps:
            raise PrepareError("capabilities must be a non-empty list")
        meta = dict(p["metadata"] or {}, capabilities=list(caps))
        return with_id(Transaction("REQUEST", (Asset(data=dict(p["data"] or {})),),
                                   (Input(None, (me,)),), (Output((me,), 1),), metadata=meta))
    if reader is None:
        raise PrepareError(f"{op} needs a ledger reader")
    if op == "TRANSFER":
        return _prepare_transfer(p, me, reader, spend_refs)
    if escrow_public_key is None:
        raise PrepareError(f"{op} needs the escrow public key")
    if op == "BID":
        return _prepare_bid(p, me, reader, escrow_public_key, spend_refs)
    return _prepare_accept(p, me, reader, escrow_public_key)


def _prepare_create(p: dict, me: str) -> Transaction:
    amount = p["amount"]
    if not isinstance(amount, int) or amount < 1:
        raise PrepareError("amount must be a positive integer")
    data = dict(p["data"] or {})
    if p["capabilities"] is not None:
        data["capabilities"] = list(p["capabilities"])
    owners = tuple(p["owners"] or (me,))
    return with_id(Transaction("CREATE", (Asset(data=data, amount=amount),),
                               (Input(None, (me,)),), (Output(owners, amount),),
                               metadata=p["metadata"]))


def _spend(reader, me: str, asset_id: str, spend_refs) -> tuple[list[Input], int, tuple]:
    refs = list(spend_refs) if spend_refs is not None else find_unspent(reader, me, asset_id)
    if not refs:
        raise PrepareError(f"no unspent shares of {asset_id} held by the signer")
    inputs, total, owners = [], 0, {}
    for ref in refs:
        src = reader.get_tx(ref.transaction_id)
        if src is None or ref.output_index >= len(src.outputs):
            raise PrepareError(f"output {ref} does not exist")
        out = src.outputs[ref.output_index]
        inputs.append(Input(ref, tuple(out.owners)))
        total += out.amount
        for k in out.owners:
            owners.setdefault(k, None)
    return inputs, total, tuple(owners)


def _prepare_transfer(p: dict, me: str, reader, spend_refs) -> Transaction:
    inputs, total, prev = _spend(reader, me, p["asset"], spend_refs)
    outputs = [Output(tuple(r["owners"]), int(r["amount"]), prev) for r in p["recipients"]]
    change = total - sum(o.amount for o in outputs)
    if change < 0:
        raise PrepareError(f"recipients receive more than the {total} shares spent")
    if change:
        outputs.append(Output((me,), change, prev))
    return with_id(Transaction("TRANSFER", (Asset(id=p["asset"]),), tuple(inputs),
                               tuple(outputs), metadata=p["metadata"]))


def _prepare_bid(p: dict, me: str, reader, escrow: str, spend_refs) -> Transaction:
    inputs, total, prev = _spend(reader, me, p["asset"], spend_refs)
    return with_id(Transaction("BID", (Asset(id=p["asset"]),), tuple(inputs),
                               (Output((escrow,), total, prev),), refs=(p["rfq"],),
                               metadata=p["metadata"]))


def _prepare_accept(p: dict, me: str, reader, escrow: str) -> Transaction:
    rfq = reader.get_tx(p["rfq"])
    if rfq is None or rfq.op != "REQUEST":
        raise PrepareError(f"{p['rfq']} is not a committed REQUEST")
    locked = reader.get_locked_bids(rfq.id)
    if p["win_bid"] not in {b.id for b in locked}:
        raise PrepareError(f"{p['win_bid']} is not an escrow-held bid on {rfq.id}")
    inputs, outputs = [], []
    for bid in locked:
        out = bid.outputs[0]
        inputs.append(Input(OutputRef(bid.id, 0), (me,)))
        owners = (me,) if bid.id == p["win_bid"] else tuple(out.prev_owners)
        outputs.append(Output(owners, out.amount, (escrow,)))
    tx = with_id(Transaction("ACCEPT_BID", (Asset(id=p["win_bid"]),), tuple(inputs),
                             tuple(outputs), refs=(rfq.id,), metadata=p["metadata"]))
    children = derive_children(tx, reader.get_tx, escrow)
    return tx.replace(children=tuple(c.id for c in children))


# -- submission ------------------------------------------------------------------

@dataclass
class Receipt:
    tx_id: str
    receiver: int | None
    accepted: bool
    error: str | None = None


class DriverHandle:
    """One logical submission across retries; the callback fires once."""

    def __init__(self, tx: Transaction, callback: Callable | None):
        self.tx = tx
        self.tx_id = tx.id
        self.callback = callback
        self.attempts: list = []
        self.status = "pending"
        self.error: str | None = None
        self.error_message = ""
        self.first_received_at: float | None = None
        self.committed_at: float | None = None
        self.committed_height: int | None = None
        self.min_height = 0
        self._waiters: list[Callable] = []

    @property
    def done(self) -> bool:
        return self.status != "pending"

    def add_done_callback(self, fn: Callable[["DriverHandle"], Any]) -> None:
        if self.done:
            fn(self)
        else:
            self._waiters.append(fn)

    def _finish(self, status: str, error: str | None = None, message: str = "",
                committed_at: float | None = None, committed_height: int | None = None
                ) -> None:
        if self.done:
            return
        self.status, self.error, self.error_message = status, error, message
        self.committed_at = committed_at
        self.committed_height = committed_height
        for fn in ([self.callback] if self.callback else []) + self._waiters:
            fn(self)


class Driver:
    def __init__(self, cluster, keypair: KeyPair | None = None, *, timeout: float = 2.0,
                 retries: int = 5, backoff: float = 0.05):
        self.cluster = cluster
        self.keypair = keypair
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff

    @property
    def reader(self):
        return self.cluster.any_ledger()

    def prepare(self, op: str, payload: Mapping[str, Any], keypair: KeyPair | None = None,
                spend_refs: Sequence[OutputRef] | None = None) -> Transaction:
        kp = keypair or self.keypair
        if kp is None:
            raise PrepareError("no keypair given")
        return prepare(op, payload, kp, reader=self.reader,
                       escrow_public_key=self.cluster.escrow.public_key, spend_refs=spend_refs)

    def sign_tx(self, unsigned: Transaction, keypairs: Iterable[KeyPair] | None = None
                ) -> Transaction:
        keys = list(keypairs) if keypairs is not None else [self.keypair]
        return sign_tx(unsigned, [k for k in keys if k is not None])

    def submit_sync(self, tx: Transaction) -> Receipt:
        """Return once the receiving node has accepted or rejected ``tx``."""
        for _ in range(self.retries + 1):
            try:
                h = self.cluster.submit(tx, mode="sync")
            except SubmitRefused as exc:
                return Receipt(tx.id, None, False, exc.__class__.__name__)
            if h.error in TRANSIENT_ERRORS:
                continue
            ok = h.status == "committed" or (h.error is None and h.accepted_at is not None)
            return Receipt(tx.id, h.receiver, ok, h.error)
        return Receipt(tx.id, None, False, Unresolved.__name__)

    def submit_async(self, tx: Transaction, callback: Callable[[DriverHandle], Any] | None = None,
                     timeout: float | None = None, min_height: int = 0) -> DriverHandle:
        """Submit and keep resubmitting on timeout or transient errors.

        The callback fires exactly once: committed, a permanent validation
        error, or ``Unresolved`` after the retry budget is spent. Pass the
        ``committed_height`` of the handles ``tx`` depends on as
        ``min_height`` so a lagging receiver waits instead of rejecting.
        """
        handle = DriverHandle(tx, callback)
        handle.min_height = min_height
        self._attempt(handle, timeout or self.timeout)
        return handle

    def retrigger(self, handle_or_tx, timeout: float | None = None) -> DriverHandle:
        """Resubmit the same signed transaction under a fresh handle."""
        if isinstance(handle_or_tx, DriverHandle):
            return self.submit_async(handle_or_tx.tx, timeout=timeout,
                                     min_height=handle_or_tx.min_height)
        return self.submit_async(handle_or_tx, timeout=timeout)

    def _attempt(self, handle: DriverHandle, timeout: float) -> None:
        if handle.done:
            return
        n = len(handle.attempts)
        inner = self.cluster.submit(handle.tx, mode="async", min_height=handle.min_height)
        handle.attempts.append(inner)
        inner.add_done_callback(lambda h: self._on_inner(handle, h, timeout))
        self.cluster.sim.schedule(timeout, self._on_timeout, handle, n, timeout)

    def _record_receipt(self, handle: DriverHandle, inner) -> None:
        if inner.received_at is not None and (handle.first_received_at is None
                                              or inner.received_at < handle.first_received_at):
            handle.first_received_at = inner.received_at

    def _on_inner(self, handle: DriverHandle, inner, timeout: float) -> None:
        self._record_receipt(handle, inner)
        if handle.done:
            return
        if inner.status == "committed":
            handle._finish("committed", committed_at=inner.committed_at,
                           committed_height=inner.committed_height)
        elif inner.error in TRANSIENT_ERRORS:
            if inner is handle.attempts[-1]:
                self._retry(handle, timeout)
        else:
            handle._finish("error", inner.error, inner.error_message)

    def _on_timeout(self, handle: DriverHandle, n: int, timeout: float) -> None:
        if handle.done or len(handle.attempts) != n + 1:
            return
        if self.cluster.is_committed(handle.tx_id):
            # the commit notice was lost with its receiver
            handle._finish("committed", committed_at=self.cluster.commit_time(handle.tx_id),
                           committed_height=self.cluster.any_ledger().tx_height(handle.tx_id))
            return
        self._retry(handle, timeout)

    def _retry(self, handle: DriverHandle, timeout: float) -> None:
        if len(handle.attempts) > self.retries:
            handle._finish("error", Unresolved.__name__,
                           f"{handle.tx_id} unresolved after {len(handle.attempts)} attempts")
            return
        delay = self.backoff * len(handle.attempts)
        self.cluster.sim.schedule(delay, self._attempt, handle, timeout)
