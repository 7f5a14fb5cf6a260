"""Ledger-aware semantic validation for the six operations.

Every validator takes a transaction and a :class:`ValidationContext` and
either returns ``None`` or raises a :class:`~decltx.errors.ValidationError`
subclass whose ``rule`` attribute names the violated condition. BID and
ACCEPT_BID rules use the condition numbering ``C_BID.k`` / ``C_ACCEPT_BID.k``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

from . import crypto
from .errors import (
    AmountMismatch,
    DoubleSpendError,
    DuplicateTransactionError,
    InputDoesNotExistError,
    InsufficientCapabilitiesError,
    InvalidOpSequence,
    InvalidSignature,
    InvalidWorkflowHead,
    MissingCapabilities,
    UncommittedDependency,
    ValidationError,
)
from .model import (
    SPENDABLE_OPS,
    Output,
    OutputRef,
    Transaction,
    compute_tx_id,
    signing_message,
)
from .schema import check_schema

VALID_WORKFLOWS = (
    ("CREATE",),
    ("CREATE", "TRANSFER"),
    ("CREATE", "REQUEST", "BID", "ACCEPT_BID", "TRANSFER"),
)


@dataclass(frozen=True)
class ValidationContext:
    """Read-only view: committed ledger plus the transactions already
    accepted into the block being delivered."""

    ledger: object
    escrow_public_key: str
    current_block_txs: tuple[Transaction, ...] = ()

    def with_block(self, txs: Sequence[Transaction]) -> "ValidationContext":
        return ValidationContext(self.ledger, self.escrow_public_key, tuple(txs))

    def get_tx(self, tx_id: str) -> Transaction | None:
        return self.ledger.get_tx(tx_id)

    def block_spender(self, ref: OutputRef) -> str | None:
        for t in self.current_block_txs:
            if t.op != "ACCEPT_BID" and ref in t.spends:
                return t.id
        return None

    def block_accept_for(self, rfq_id: str) -> Transaction | None:
        for t in self.current_block_txs:
            if t.op == "ACCEPT_BID" and t.refs and t.refs[0] == rfq_id:
                return t
        return None


# -- capability extraction ------------------------------------------------------

def _caps(value) -> frozenset[str]:
    if isinstance(value, list):
        return frozenset(v for v in value if isinstance(v, str))
    return frozenset()


def get_caps_from_rfq(request_tx: Transaction) -> frozenset[str]:
    meta = request_tx.metadata if isinstance(request_tx.metadata, Mapping) else {}
    return _caps(meta.get("capabilities"))


def get_caps_from_asset(asset_tx: Transaction) -> frozenset[str]:
    if not asset_tx.asset:
        return frozenset()
    data = asset_tx.asset[0].data
    return _caps(data.get("capabilities")) if isinstance(data, Mapping) else frozenset()


# -- shared helpers ---------------------------------------------------------------

def _verify_inputs(tx: Transaction, rule: str) -> None:
    msg = signing_message(tx)
    for n, inp in enumerate(tx.inputs):
        if not crypto.verify(inp.fulfillment, inp.owners_before, msg):
            raise InvalidSignature(f"input {n} signature does not verify", rule)


def _resolve(ctx: ValidationContext, ref: OutputRef, rule: str) -> tuple[Transaction, Output]:
    src = ctx.get_tx(ref.transaction_id)
    if src is None:
        raise InputDoesNotExistError(f"{ref.transaction_id} is not committed", rule)
    if src.op not in SPENDABLE_OPS or not 0 <= ref.output_index < len(src.outputs):
        raise InputDoesNotExistError(
            f"{ref.transaction_id}:{ref.output_index} is not a spendable output", rule)
    return src, src.outputs[ref.output_index]


def _check_unspent(ctx: ValidationContext, ref: OutputRef, rule: str) -> None:
    if ctx.ledger.spender_of(ref) is not None or ctx.block_spender(ref) is not None:
        raise DoubleSpendError(f"{ref.transaction_id}:{ref.output_index} already spent", rule)


def _no_spends(tx: Transaction, rule: str) -> None:
    if any(i.fulfills is not None for i in tx.inputs):
        raise ValidationError(f"{tx.op} inputs must not spend outputs", rule)


def _settlement_parent(tx: Transaction, ctx: ValidationContext) -> Transaction | None:
    """The committed ACCEPT_BID that lists ``tx`` as one of its children."""
    if not tx.refs:
        return None
    parent = ctx.get_tx(tx.refs[0])
    if parent is None or parent.op != "ACCEPT_BID" or tx.id not in parent.children:
        return None
    return parent


def validate_transfer_inputs(tx: Transaction, ctx: ValidationContext,
                             rule: str = "TRANSFER.inputs") -> None:
    """Spend checks shared by TRANSFER, BID and RETURN."""
    if not tx.inputs or any(i.fulfills is None for i in tx.inputs):
        raise ValidationError("every input must spend an output", rule)
    refs = tx.spends
    if len(set(refs)) != len(refs):
        raise DoubleSpendError("transaction spends the same output twice", rule)

    msg = signing_message(tx)
    asset_id = tx.asset_id()
    total_in = 0
    spent_owners: dict[str, None] = {}
    touches_escrow = False
    for inp in tx.inputs:
        src, out = _resolve(ctx, inp.fulfills, rule)
        _check_unspent(ctx, inp.fulfills, rule)
        if tuple(inp.owners_before) != tuple(out.owners):
            raise InvalidSignature("input signers are not the output owners", rule)
        if not crypto.verify(inp.fulfillment, out.owners, msg):
            raise InvalidSignature("owner signature does not verify", rule)
        if src.asset_id() != asset_id:
            raise AmountMismatch(f"input holds asset {src.asset_id()}, tx declares {asset_id}",
                                 rule)
        total_in += out.amount
        for k in out.owners:
            spent_owners.setdefault(k, None)
        touches_escrow |= tuple(out.owners) == (ctx.escrow_public_key,)

    total_out = sum(o.amount for o in tx.outputs)
    if total_in != total_out:
        raise AmountMismatch(f"inputs carry {total_in} shares, outputs {total_out}", rule)
    for o in tx.outputs:
        if tuple(o.prev_owners) != tuple(spent_owners):
            raise ValidationError("output prev_owners must list the spent outputs' owners",
                                  rule)
    if touches_escrow and _settlement_parent(tx, ctx) is None:
        raise ValidationError("escrow-held shares move only as children of a committed "
                              "ACCEPT_BID", rule)


# -- per operation ------------------------------------------------------------

def validate_create(tx: Transaction, ctx: ValidationContext) -> None:
    _no_spends(tx, "CREATE.genesis")
    _verify_inputs(tx, "CREATE.signature")
    amount = tx.asset[0].amount if tx.asset else None
    if amount is None or amount < 1:
        raise AmountMismatch("CREATE must mint at least one share", "CREATE.amount")
    if sum(o.amount for o in tx.outputs) != amount:
        raise AmountMismatch("outputs must distribute exactly the minted shares",
                             "CREATE.amount")
    if any(o.prev_owners for o in tx.outputs):
        raise ValidationError("CREATE outputs have no previous owners", "CREATE.genesis")


def validate_transfer(tx: Transaction, ctx: ValidationContext) -> None:
    validate_transfer_inputs(tx, ctx, "TRANSFER.inputs")


def validate_request(tx: Transaction, ctx: ValidationContext) -> None:
    _no_spends(tx, "REQUEST.no_spend")
    if not get_caps_from_rfq(tx):
        raise MissingCapabilities("metadata.capabilities must be a non-empty list",
                                  "REQUEST.capabilities")
    requester = tx.signers
    if len(tx.outputs) != 1 or tuple(tx.outputs[0].owners) != requester:
        raise ValidationError("REQUEST output must name the requester", "REQUEST.output")
    _verify_inputs(tx, "REQUEST.signature")


def validate_bid(tx: Transaction, ctx: ValidationContext) -> None:
    if len(tx.inputs) < 1:
        raise ValidationError("BID needs at least one input", "C_BID.1")
    if len(tx.refs) < 1:
        raise ValidationError("BID needs at least one reference", "C_BID.2")
    referenced = []
    for ref in tx.refs:
        t = ctx.get_tx(ref)
        if t is None:
            raise InputDoesNotExistError(f"referenced {ref} is not committed", "C_BID.3")
        referenced.append(t)
    requests = [t for t in referenced if t.op == "REQUEST"]
    if len(requests) != 1:
        raise ValidationError("BID must reference exactly one REQUEST", "C_BID.3")
    rfq = requests[0]
    if ctx.ledger.get_accept_tx_for_rfq(rfq.id) or ctx.block_accept_for(rfq.id):
        raise ValidationError(f"REQUEST {rfq.id} is already settled", "BID.closed")
    if not any(i.fulfills is not None for i in tx.inputs):
        raise ValidationError("no input carries asset shares", "C_BID.4")
    _verify_inputs(tx, "C_BID.5")
    for o in tx.outputs:
        if tuple(o.owners) != (ctx.escrow_public_key,):
            raise ValidationError("BID outputs must be owned by the escrow account",
                                  "C_BID.6")
    asset_id = tx.asset_id()
    asset_tx = ctx.get_tx(asset_id) if asset_id else None
    if asset_tx is None:
        raise InputDoesNotExistError(f"asset {asset_id} is not committed", "C_BID.7")
    if asset_tx.op != "CREATE":
        raise ValidationError("BID asset must reference its CREATE", "C_BID.7")
    missing = get_caps_from_rfq(rfq) - get_caps_from_asset(asset_tx)
    if missing:
        raise InsufficientCapabilitiesError(
            f"asset lacks requested capabilities {sorted(missing)}", "C_BID.7")
    validate_transfer_inputs(tx, ctx, "C_BID.8")


def validate_accept_bid(tx: Transaction, ctx: ValidationContext) -> None:
    from .nested import derive_children

    R = "C_ACCEPT_BID."
    if len(tx.refs) != 1:
        raise ValidationError("ACCEPT_BID references exactly one transaction", R + "2")
    rfq = ctx.get_tx(tx.refs[0])
    if rfq is None:
        raise ValidationError(f"REQUEST {tx.refs[0]} is not committed", "ACCEPT_BID.committed")
    if rfq.op != "REQUEST":
        raise ValidationError("the referenced transaction is not a REQUEST", R + "3")
    win_id = tx.asset[0].id if tx.asset else None
    win = ctx.get_tx(win_id) if win_id else None
    if win is None or win.op != "BID" or rfq.id not in win.refs:
        raise ValidationError(f"winning bid {win_id} is not a committed BID on this REQUEST",
                              "ACCEPT_BID.committed")
    if tx.signers != rfq.signers:
        raise ValidationError("ACCEPT_BID must be signed by the requester", "ACCEPT_BID.signer")
    if ctx.ledger.get_accept_tx_for_rfq(rfq.id) or ctx.block_accept_for(rfq.id):
        raise DuplicateTransactionError(f"REQUEST {rfq.id} already has an ACCEPT_BID",
                                        "ACCEPT_BID.duplicate")
    locked = ctx.ledger.get_locked_bids(rfq.id)
    locked_ids = {b.id for b in locked}
    if win.id not in locked_ids:
        raise ValidationError("winning bid is not held in escrow for this REQUEST",
                              "ACCEPT_BID.escrow_held")
    if len(tx.inputs) != len(locked):
        raise ValidationError(f"{len(tx.inputs)} inputs for {len(locked)} escrow-held bids",
                              R + "1")

    spent: list[tuple[Transaction, Output]] = []
    for inp in tx.inputs:
        if inp.fulfills is None:
            raise ValidationError("every input must claim an escrow output", R + "7")
        src, out = _resolve(ctx, inp.fulfills, R + "7")
        if tuple(out.owners) != (ctx.escrow_public_key,) or src.id not in locked_ids:
            raise ValidationError("input does not spend an escrow-held bid output", R + "7")
        spent.append((src, out))
    if len({i.fulfills for i in tx.inputs}) != len(tx.inputs):
        raise DoubleSpendError("the same escrow output is claimed twice", R + "7")

    _verify_inputs(tx, R + "5")

    if len(tx.children) != len(tx.inputs):
        raise ValidationError(f"{len(tx.children)} children for {len(tx.inputs)} inputs",
                              R + "4")

    requester = tuple(rfq.outputs[0].owners)
    if len(tx.outputs) != len(tx.inputs):
        raise ValidationError("one output per claimed bid", R + "9")
    payouts = [i for i, o in enumerate(tx.outputs) if tuple(o.owners) == requester]
    win_pos = [i for i, (src, _) in enumerate(spent) if src.id == win.id]
    if len(payouts) != 1 or payouts != win_pos:
        raise ValidationError("exactly one output, the winning bid's, pays the requester",
                              R + "9")
    for i, ((src, out), o) in enumerate(zip(spent, tx.outputs)):
        if o.amount != out.amount or tuple(o.prev_owners) != (ctx.escrow_public_key,):
            raise AmountMismatch(f"output {i} does not carry the escrowed shares", R + "8")
        if src.id != win.id and tuple(o.owners) != tuple(out.prev_owners):
            raise ValidationError(f"losing bid {src.id} is not returned to its bidder",
                                  R + "8")

    derived = derive_children(tx, ctx.get_tx, ctx.escrow_public_key)
    if tuple(c.id for c in derived) != tuple(tx.children):
        raise ValidationError("children do not match the outputs they must settle", R + "6")
    parent_outputs = list(tx.outputs)
    for c in derived:
        if any(o not in parent_outputs for o in c.outputs):
            raise ValidationError("child output not covered by the parent", R + "6")

    # the winning pair itself must still be spendable
    _check_unspent(ctx, tx.inputs[win_pos[0]].fulfills, R + "8")


def validate_return(tx: Transaction, ctx: ValidationContext) -> None:
    parent = ctx.get_tx(tx.refs[0]) if tx.refs else None
    if parent is None or parent.op != "ACCEPT_BID":
        raise ValidationError("RETURN must reference a committed ACCEPT_BID", "RETURN.parent")
    if tx.id not in parent.children:
        raise ValidationError("RETURN is not a child of the referenced ACCEPT_BID",
                              "RETURN.parent")
    if len(tx.inputs) != 1 or tx.inputs[0].fulfills is None:
        raise ValidationError("RETURN spends exactly one escrow output", "RETURN.input")
    src, out = _resolve(ctx, tx.inputs[0].fulfills, "RETURN.input")
    if src.op != "BID" or tuple(out.owners) != (ctx.escrow_public_key,):
        raise ValidationError("RETURN must spend an escrow-held BID output", "RETURN.input")
    if parent.asset and src.id == parent.asset[0].id:
        raise ValidationError("the winning bid goes to the requester, not back",
                              "RETURN.winner")
    if any(tuple(o.owners) != tuple(out.prev_owners) for o in tx.outputs):
        raise ValidationError("RETURN must pay the original bidder", "RETURN.payee")
    validate_transfer_inputs(tx, ctx, "RETURN.inputs")


SEMANTIC_VALIDATORS = {
    "CREATE": validate_create,
    "TRANSFER": validate_transfer,
    "REQUEST": validate_request,
    "BID": validate_bid,
    "ACCEPT_BID": validate_accept_bid,
    "RETURN": validate_return,
}


def validate_transaction(tx: Transaction | Mapping, ctx: ValidationContext) -> Transaction:
    """Full pipeline: schema, id integrity, duplicate check, then semantics."""
    check_schema(tx)
    if not isinstance(tx, Transaction):
        tx = Transaction.from_dict(tx)
    if compute_tx_id(tx) != tx.id:
        raise ValidationError("id does not match the transaction body", "id")
    if ctx.ledger.is_committed(tx.id) or any(t.id == tx.id for t in ctx.current_block_txs):
        raise DuplicateTransactionError(f"{tx.id} already committed", "duplicate")
    SEMANTIC_VALIDATORS[tx.op](tx, ctx)
    return tx


def validate_workflow(seq: Sequence[Transaction]) -> None:
    """Check a workflow: null-input head, spends resolving to earlier members,
    and an operation sequence from :data:`VALID_WORKFLOWS`."""
    if not seq:
        raise InvalidWorkflowHead("empty workflow")
    if seq[0].spends:
        raise InvalidWorkflowHead("the workflow head must not spend outputs")
    ops = tuple(t.op for t in seq)
    if ops not in VALID_WORKFLOWS:
        raise InvalidOpSequence(f"{'-'.join(ops)} is not a recognised workflow")
    seen: set[str] = set()
    for t in seq:
        for ref in t.spends:
            if ref.transaction_id not in seen:
                raise UncommittedDependency(
                    f"{t.op} spends {ref.transaction_id}, which does not precede it")
        seen.add(t.id)
