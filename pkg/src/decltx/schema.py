"""Structural validation against the bundled per-operation YAML schemas.

This pass never touches the ledger: it checks field presence, types,
patterns, the closed operation set, and reserved-keyword collisions inside
``asset.data`` and ``metadata``.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Any, Mapping

import fastjsonschema
import yaml
from jsonschema import Draft7Validator
from referencing import Registry, Resource
from referencing.jsonschema import DRAFT7

from .errors import SchemaNotFound, SchemaValidationError
from .model import OPERATIONS, RESERVED_KEYWORDS, Transaction

DEFAULT_SCHEMA_DIR = Path(__file__).with_name("schemas")
SCHEMA_DIR_ENV = "DECLTX_SCHEMA_DIR"
_BASE_URI = "https://decltx.invalid/schemas/"


@dataclass(frozen=True)
class SchemaViolation:
    field: str
    rule: str
    message: str = ""


@dataclass(frozen=True)
class TransactionSchema:
    operation: str
    required_fields: frozenset[str]
    field_constraints: Mapping[str, Any]
    validator: Draft7Validator = field(repr=False, compare=False)
    # compiled yes/no check; the full validator runs only to explain failures
    fast_check: Any = field(default=None, repr=False, compare=False)


def _schema_dir(schema_dir: str | os.PathLike | None) -> Path:
    if schema_dir is not None:
        return Path(schema_dir)
    return Path(os.environ.get(SCHEMA_DIR_ENV, DEFAULT_SCHEMA_DIR))


@lru_cache(maxsize=None)
def _registry(schema_dir: Path) -> tuple[Registry, dict[str, dict]]:
    docs = {}
    for path in sorted(schema_dir.glob("*.yaml")):
        with open(path) as fh:
            docs[path.stem] = yaml.safe_load(fh)
    registry = Registry().with_resources(
        (_BASE_URI + f"{name}.yaml", Resource.from_contents(doc, default_specification=DRAFT7))
        for name, doc in docs.items()
    )
    return registry, docs


def _inline_refs(node: Any, docs: dict[str, dict], current: str) -> Any:
    """Replace every ``$ref`` with the definition it points to."""
    if isinstance(node, list):
        return [_inline_refs(v, docs, current) for v in node]
    if not isinstance(node, dict):
        return node
    if "$ref" in node:
        doc_name, _, pointer = node["$ref"].partition("#")
        doc_name = doc_name[: -len(".yaml")] if doc_name else current
        target: Any = docs[doc_name]
        for part in filter(None, pointer.split("/")):
            target = target[part]
        return _inline_refs(target, docs, doc_name)
    return {k: _inline_refs(v, docs, current) for k, v in node.items() if k != "definitions"}


@lru_cache(maxsize=None)
def _load(op: str, schema_dir: Path) -> TransactionSchema:
    if op not in OPERATIONS:
        raise SchemaNotFound(op)
    registry, docs = _registry(schema_dir)
    name = op.lower()
    if name not in docs:
        raise SchemaNotFound(op)
    doc = dict(docs[name], **{"$id": _BASE_URI + f"{name}.yaml"})
    common = docs["common"]["definitions"]["transaction"]
    constraints: dict[str, Any] = {k: dict(v) for k, v in common["properties"].items()}
    for part in doc.get("allOf", []):
        for key, extra in part.get("properties", {}).items():
            constraints.setdefault(key, {}).update(extra)
    return TransactionSchema(
        operation=op,
        required_fields=frozenset(common["required"]),
        field_constraints=constraints,
        validator=Draft7Validator(doc, registry=registry),
        fast_check=fastjsonschema.compile(_inline_refs(docs[name], docs, name)),
    )


def load_schema(op: str, schema_dir: str | os.PathLike | None = None) -> TransactionSchema:
    return _load(str(op), _schema_dir(schema_dir).resolve())


def _path(parts) -> str:
    return ".".join(str(p) for p in parts)


def _reserved_key_violations(value: Any, where: str) -> list[SchemaViolation]:
    out = []

    def walk(v, prefix):
        if isinstance(v, Mapping):
            for k, sub in v.items():
                p = f"{prefix}.{k}"
                if k in RESERVED_KEYWORDS or "." in k or k.startswith("$"):
                    out.append(SchemaViolation(p, "reserved_key", f"key {k!r} is reserved"))
                walk(sub, p)
        elif isinstance(v, list):
            for i, sub in enumerate(v):
                walk(sub, f"{prefix}.{i}")

    walk(value, where)
    return out


def _keyword_violations(body: Mapping) -> list[SchemaViolation]:
    """Reserved-keyword collisions in asset data and metadata."""
    out = []
    for i, asset in enumerate(body.get("asset") or []):
        if isinstance(asset, Mapping) and isinstance(asset.get("data"), Mapping):
            out += _reserved_key_violations(asset["data"], f"asset.{i}.data")
    if isinstance(body.get("metadata"), Mapping):
        out += _reserved_key_violations(body["metadata"], "metadata")
    return sorted(out, key=lambda v: (v.field, v.rule))


def validate_schema(schema: TransactionSchema | None,
                    tx: Transaction | Mapping) -> list[SchemaViolation]:
    """Return every structural violation (empty list means valid).

    ``schema=None`` picks the schema matching the transaction's operation.
    """
    body = tx.to_dict() if isinstance(tx, Transaction) else tx
    if not isinstance(body, Mapping):
        return [SchemaViolation("$", "type", "transaction must be an object")]
    if schema is None:
        op = body.get("operation")
        if op not in OPERATIONS:
            return [SchemaViolation("operation", "enum", f"unknown operation {op!r}")]
        schema = load_schema(op)

    violations = []
    if schema.fast_check is not None:
        try:
            schema.fast_check(body)
        except fastjsonschema.JsonSchemaException:
            pass
        else:
            return _keyword_violations(body)
    for err in schema.validator.iter_errors(body):
        base = _path(err.absolute_path)
        if err.validator == "required":
            missing = [k for k in err.validator_value if k not in err.instance]
            for k in missing:
                violations.append(SchemaViolation(f"{base}.{k}" if base else k, "required",
                                                  f"{k!r} is a required property"))
        elif err.validator == "additionalProperties":
            extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
            for k in extra:
                violations.append(SchemaViolation(f"{base}.{k}" if base else k,
                                                  "additionalProperties", err.message))
        else:
            violations.append(SchemaViolation(base or "$", str(err.validator), err.message))

    violations += _keyword_violations(body)
    uniq = {(v.field, v.rule): v for v in violations}
    return sorted(uniq.values(), key=lambda v: (v.field, v.rule))


def check_schema(tx: Transaction | Mapping) -> None:
    violations = validate_schema(None, tx)
    if violations:
        raise SchemaValidationError(violations)
