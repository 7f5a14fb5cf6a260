"""Ed25519 keys and detached (multi-)signatures.

Public keys travel as base58 text, signatures as lowercase hex. A
multi-signature is an ordered list of per-key signatures; it verifies only
if every part verifies against the public key at the same position.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Sequence

import base58
from cryptography.exceptions import InvalidSignature as _BadSig
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.serialization import (
    Encoding,
    NoEncryption,
    PrivateFormat,
    PublicFormat,
)


@dataclass(frozen=True)
class KeyPair:
    public_key: str
    private_key: str  # base58 of the 32-byte seed

    def __repr__(self) -> str:
        return f"KeyPair(public_key={self.public_key!r})"


@dataclass(frozen=True)
class Signature:
    parts: tuple[bytes, ...]

    @property
    def signer_count(self) -> int:
        return len(self.parts)

    def to_wire(self) -> list[str]:
        return [p.hex() for p in self.parts]

    @classmethod
    def from_wire(cls, parts: Sequence[str]) -> "Signature":
        return cls(tuple(bytes.fromhex(p) for p in parts))


def _private_from_text(private_key: str) -> Ed25519PrivateKey:
    return Ed25519PrivateKey.from_private_bytes(base58.b58decode(private_key))


def _keypair_from_seed_bytes(seed: bytes) -> KeyPair:
    sk = Ed25519PrivateKey.from_private_bytes(seed)
    pub = sk.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
    return KeyPair(base58.b58encode(pub).decode(), base58.b58encode(seed).decode())


def generate_keypair(seed: object | None = None) -> KeyPair:
    """Fresh key pair; ``seed`` (any repr-stable value) makes it deterministic."""
    if seed is None:
        sk = Ed25519PrivateKey.generate()
        raw = sk.private_bytes(Encoding.Raw, PrivateFormat.Raw, NoEncryption())
        return _keypair_from_seed_bytes(raw)
    raw = hashlib.sha256(b"decltx-keypair:" + repr(seed).encode()).digest()
    return _keypair_from_seed_bytes(raw)


def sign(private_key: str, message: bytes) -> Signature:
    if not message:
        raise ValueError("refusing to sign an empty message")
    return Signature((_private_from_text(private_key).sign(message),))


def multi_sign(private_keys: Sequence[str], message: bytes) -> Signature:
    if not private_keys:
        raise ValueError("multi_sign needs at least one key")
    return Signature(tuple(sign(k, message).parts[0] for k in private_keys))


def verify(signature: Signature | Sequence[str] | None, public_key: str | Sequence[str],
           message: bytes) -> bool:
    """True iff every signature part verifies for the key at its position.

    Malformed signatures or keys give False, never an exception.
    """
    if signature is None:
        return False
    try:
        if not isinstance(signature, Signature):
            signature = Signature.from_wire(signature)
        keys = [public_key] if isinstance(public_key, str) else list(public_key)
        if not keys or len(keys) != signature.signer_count:
            return False
        for part, key in zip(signature.parts, keys):
            Ed25519PublicKey.from_public_bytes(base58.b58decode(key)).verify(part, message)
    except (_BadSig, ValueError, TypeError):
        return False
    return True
