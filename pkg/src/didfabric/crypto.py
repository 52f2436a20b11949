"""Keys, canonical JSON bytes, and detached EdDSA JWS signatures.

Signing input for a detached signature is
``base64url(header) + "." + base64url(payload)``; the compact form leaves the
payload segment empty (``header..signature``).
"""

from __future__ import annotations

import base64
import binascii
import json
import math
from dataclasses import dataclass, field
from typing import Any

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

from .errors import EmptyPayload, NonCanonicalizable, SeedLength
from .verdict import Verdict

ALGORITHM = "EdDSA"
UNDERSTOOD_CRIT = frozenset({"b64"})
PROTECTED_HEADER = {"alg": ALGORITHM, "b64": True, "crit": ["b64"]}


def b64url_encode(data: bytes) -> str:
    return base64.urlsafe_b64encode(data).rstrip(b"=").decode("ascii")


def b64url_decode(text: str) -> bytes:
    """Strict unpadded base64url decoding; non-canonical encodings are refused."""
    if not isinstance(text, str) or "=" in text:
        raise ValueError("invalid base64url")
    try:
        raw = base64.urlsafe_b64decode(text + "=" * (-len(text) % 4))
    except (binascii.Error, ValueError) as exc:
        raise ValueError("invalid base64url") from exc
    if b64url_encode(raw) != text:
        raise ValueError("non-canonical base64url")
    return raw


@dataclass(frozen=True)
class KeyPair:
    seed: bytes = field(repr=False)
    public_key: bytes
    key_id: str = "key-1"

    def private_key(self) -> Ed25519PrivateKey:
        return Ed25519PrivateKey.from_private_bytes(self.seed)


def generate_keypair(seed: bytes, key_id: str = "key-1") -> KeyPair:
    if len(seed) != 32:
        raise SeedLength(f"seed must be 32 octets, got {len(seed)}")
    if not key_id:
        raise ValueError("key_id must be non-empty")
    sk = Ed25519PrivateKey.from_private_bytes(bytes(seed))
    pk = sk.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
    return KeyPair(bytes(seed), pk, key_id)


def ed25519_sign(seed: bytes, message: bytes) -> bytes:
    return Ed25519PrivateKey.from_private_bytes(seed).sign(message)


def ed25519_verify(public_key: bytes, message: bytes, signature: bytes) -> bool:
    try:
        Ed25519PublicKey.from_public_bytes(public_key).verify(signature, message)
    except (InvalidSignature, ValueError):
        return False
    return True


def _check_json(value: Any, path: str = "$") -> None:
    if value is None or isinstance(value, (bool, str)):
        return
    if isinstance(value, int):
        return
    if isinstance(value, float):
        if not math.isfinite(value):
            raise NonCanonicalizable(f"non-finite number at {path}")
        return
    if isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            _check_json(item, f"{path}[{i}]")
        return
    if isinstance(value, dict):
        for k, item in value.items():
            if not isinstance(k, str):
                raise NonCanonicalizable(f"non-string key {k!r} at {path}")
            _check_json(item, f"{path}.{k}")
        return
    raise NonCanonicalizable(f"{type(value).__name__} is not a JSON value (at {path})")


def canonical_dumps(document: Any) -> str:
    _check_json(document)
    return json.dumps(
        document, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False
    )


def canonicalize(document: Any) -> bytes:
    """Deterministic UTF-8 bytes: code-point-sorted keys, no whitespace, minimal escapes."""
    try:
        return canonical_dumps(document).encode("utf-8")
    except UnicodeEncodeError as exc:
        raise NonCanonicalizable("string is not valid Unicode") from exc


@dataclass(frozen=True)
class DetachedSignature:
    protected_header: dict[str, Any]
    signature: bytes

    @property
    def compact_form(self) -> str:
        return f"{b64url_encode(canonicalize(self.protected_header))}..{b64url_encode(self.signature)}"

    @classmethod
    def from_compact(cls, compact: str) -> DetachedSignature:
        header_b64, signature_b64 = _split_compact(compact)
        header = json.loads(b64url_decode(header_b64))
        if not isinstance(header, dict):
            raise ValueError("protected header is not an object")
        return cls(header, b64url_decode(signature_b64))

    def __str__(self) -> str:
        return self.compact_form


def _split_compact(compact: str) -> tuple[str, str]:
    if not isinstance(compact, str):
        raise ValueError("compact form must be a string")
    parts = compact.split(".")
    if len(parts) != 3 or parts[1] != "" or not parts[0] or not parts[2]:
        raise ValueError("not a detached compact JWS")
    return parts[0], parts[2]


def signing_input(header_b64: str, payload: bytes) -> bytes:
    return f"{header_b64}.{b64url_encode(payload)}".encode("ascii")


def sign_detached(payload: bytes, key: KeyPair) -> DetachedSignature:
    if not payload:
        raise EmptyPayload("cannot sign an empty payload")
    header = dict(PROTECTED_HEADER)
    header_b64 = b64url_encode(canonicalize(header))
    sig = ed25519_sign(key.seed, signing_input(header_b64, payload))
    return DetachedSignature(header, sig)


def verify_detached(
    payload: bytes, sig: DetachedSignature | str, public_key: bytes
) -> Verdict:
    """Check a detached JWS; reasons are malformed, bad-header or bad-signature."""
    compact = sig if isinstance(sig, str) else sig.compact_form
    try:
        header_b64, signature_b64 = _split_compact(compact)
        header = json.loads(b64url_decode(header_b64))
        signature = b64url_decode(signature_b64)
    except (ValueError, UnicodeDecodeError):
        return Verdict.reject("malformed")
    if not isinstance(header, dict):
        return Verdict.reject("malformed")
    if header.get("alg") != ALGORITHM:
        return Verdict.reject("bad-header", f"alg={header.get('alg')!r}")
    crit = header.get("crit", [])
    if not isinstance(crit, list) or not set(crit) <= UNDERSTOOD_CRIT:
        return Verdict.reject("bad-header", "unsupported crit")
    if header.get("b64", True) is not True:
        return Verdict.reject("bad-header", "unencoded payloads unsupported")
    if len(signature) != 64 or len(public_key) != 32:
        return Verdict.reject("malformed")
    if not ed25519_verify(public_key, signing_input(header_b64, payload), signature):
        return Verdict.reject("bad-signature")
    return Verdict.accept()
