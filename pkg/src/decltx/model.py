"""Transaction domain types, canonical serialization and id derivation."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Iterable, Mapping

from .errors import SerializationError

VERSION = "1.0+ed25519.sha3-256"


class Operation(str, Enum):
    CREATE = "CREATE"
    TRANSFER = "TRANSFER"
    REQUEST = "REQUEST"
    BID = "BID"
    ACCEPT_BID = "ACCEPT_BID"
    RETURN = "RETURN"

    def __str__(self) -> str:
        return self.value


OPERATIONS = tuple(op.value for op in Operation)

# Keys that may not appear inside asset data or metadata maps.
RESERVED_KEYWORDS = frozenset({
    "id", "operation", "asset", "inputs", "outputs", "children", "refs",
    "version", "fulfills", "fulfillment", "owners_before", "owners",
    "prev_owners", "transaction_id", "output_index",
})

# Outputs of these operations carry spendable shares.
SPENDABLE_OPS = frozenset({"CREATE", "TRANSFER", "BID", "RETURN"})


@dataclass(frozen=True)
class AccountId:
    public_key: str
    reserved: bool = False


@dataclass(frozen=True, order=True)
class OutputRef:
    transaction_id: str
    output_index: int

    def to_dict(self) -> dict:
        return {"transaction_id": self.transaction_id, "output_index": self.output_index}


@dataclass(frozen=True)
class Asset:
    data: dict | None = None
    amount: int | None = None
    id: str | None = None

    def to_dict(self) -> dict:
        out: dict[str, Any] = {}
        if self.id is not None:
            out["id"] = self.id
        if self.data is not None:
            out["data"] = copy.deepcopy(self.data)
        if self.amount is not None:
            out["amount"] = self.amount
        return out

    @classmethod
    def from_dict(cls, d: Mapping) -> "Asset":
        return cls(data=copy.deepcopy(d.get("data")), amount=d.get("amount"), id=d.get("id"))


@dataclass(frozen=True)
class Output:
    owners: tuple[str, ...]
    amount: int
    prev_owners: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {"owners": list(self.owners), "amount": self.amount,
                "prev_owners": list(self.prev_owners)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Output":
        return cls(tuple(d["owners"]), d["amount"], tuple(d.get("prev_owners") or ()))


@dataclass(frozen=True)
class Input:
    fulfills: OutputRef | None
    owners_before: tuple[str, ...]
    fulfillment: tuple[str, ...] | None = None

    def to_dict(self) -> dict:
        return {
            "fulfills": self.fulfills.to_dict() if self.fulfills else None,
            "owners_before": list(self.owners_before),
            "fulfillment": list(self.fulfillment) if self.fulfillment is not None else None,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Input":
        f = d.get("fulfills")
        ref = OutputRef(f["transaction_id"], f["output_index"]) if f else None
        ful = d.get("fulfillment")
        return cls(ref, tuple(d.get("owners_before") or ()), tuple(ful) if ful is not None else None)


@dataclass(frozen=True)
class Transaction:
    operation: str
    asset: tuple[Asset, ...]
    inputs: tuple[Input, ...]
    outputs: tuple[Output, ...]
    children: tuple[str, ...] = ()
    refs: tuple[str, ...] = ()
    metadata: dict | None = None
    version: str = VERSION
    id: str | None = field(default=None)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "operation": str(self.operation),
            "asset": [a.to_dict() for a in self.asset],
            "inputs": [i.to_dict() for i in self.inputs],
            "outputs": [o.to_dict() for o in self.outputs],
            "children": list(self.children),
            "refs": list(self.refs),
            "metadata": copy.deepcopy(self.metadata),
            "version": self.version,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Transaction":
        return cls(
            operation=d["operation"],
            asset=tuple(Asset.from_dict(a) for a in d.get("asset") or ()),
            inputs=tuple(Input.from_dict(i) for i in d.get("inputs") or ()),
            outputs=tuple(Output.from_dict(o) for o in d.get("outputs") or ()),
            children=tuple(d.get("children") or ()),
            refs=tuple(d.get("refs") or ()),
            metadata=copy.deepcopy(d.get("metadata")),
            version=d.get("version", VERSION),
            id=d.get("id"),
        )

    # convenience views -------------------------------------------------

    @property
    def op(self) -> str:
        return str(self.operation)

    @property
    def spends(self) -> list[OutputRef]:
        return [i.fulfills for i in self.inputs if i.fulfills is not None]

    @property
    def signers(self) -> tuple[str, ...]:
        """Ordered, de-duplicated union of all input signers."""
        seen: dict[str, None] = {}
        for i in self.inputs:
            for k in i.owners_before:
                seen.setdefault(k, None)
        return tuple(seen)

    def asset_id(self) -> str | None:
        """Id of the share-bearing asset this transaction's outputs hold."""
        if self.op == "CREATE":
            return self.id
        if self.asset and self.asset[0].id is not None:
            return self.asset[0].id
        return None

    def replace(self, **changes) -> "Transaction":
        return replace(self, **changes)


# --------------------------------------------------------------------------
# canonical form

def _check_canonical(value: Any, path: str = "$") -> None:
    if value is None or isinstance(value, (str, bool, int)):
        return
    if isinstance(value, float):
        raise SerializationError(f"float at {path}; amounts and values must be integers")
    if isinstance(value, Mapping):
        for k, v in value.items():
            if not isinstance(k, str):
                raise SerializationError(f"non-string key {k!r} at {path}")
            _check_canonical(v, f"{path}.{k}")
        return
    if isinstance(value, (list, tuple)):
        for i, v in enumerate(value):
            _check_canonical(v, f"{path}[{i}]")
        return
    raise SerializationError(f"unserializable {type(value).__name__} at {path}")


def canonical_serialize(tx: Transaction | Mapping) -> bytes:
    """Key-sorted, whitespace-free UTF-8 JSON; floats are rejected."""
    body = tx.to_dict() if isinstance(tx, Transaction) else tx
    _check_canonical(body)
    return json.dumps(body, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode()


def id_preimage(tx: Transaction | Mapping) -> dict:
    body = tx.to_dict() if isinstance(tx, Transaction) else copy.deepcopy(dict(tx))
    body["id"] = None
    # children are derived from the id, so they cannot be part of it
    body["children"] = []
    for inp in body.get("inputs") or ():
        inp["fulfillment"] = None
    return body


def compute_tx_id(tx: Transaction | Mapping) -> str:
    return hashlib.sha3_256(canonical_serialize(id_preimage(tx))).hexdigest()


def signing_message(tx: Transaction | Mapping) -> bytes:
    """Bytes every input signs: the full body with fulfillments blanked."""
    body = tx.to_dict() if isinstance(tx, Transaction) else copy.deepcopy(dict(tx))
    for inp in body.get("inputs") or ():
        inp["fulfillment"] = None
    return canonical_serialize(body)


def with_id(tx: Transaction) -> Transaction:
    return replace(tx, id=compute_tx_id(tx))


def sha3_hex(data: bytes) -> str:
    return hashlib.sha3_256(data).hexdigest()


def iter_keys(value: Any, prefix: str = "") -> Iterable[tuple[str, str]]:
    """Yield (dotted_path, key) for every mapping key in a nested value."""
    if isinstance(value, Mapping):
        for k, v in value.items():
            path = f"{prefix}.{k}" if prefix else str(k)
            yield path, k
            yield from iter_keys(v, path)
    elif isinstance(value, (list, tuple)):
        for i, v in enumerate(value):
            yield from iter_keys(v, f"{prefix}[{i}]")
