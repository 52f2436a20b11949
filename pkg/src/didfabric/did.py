"""DID syntax, DID documents, and the resolver unifying ledger and off-ledger DIDs.

Ledger DIDs are self-certifying: the method-specific id is the base58 form of
the 16-octet truncated SHA-256 of the initial authentication key. Orchestrator
DIDs never touch the ledger and carry an ``org-`` prefix, so the two
namespaces cannot collide.
"""

from __future__ import annotations

import hashlib
import threading
from dataclasses import dataclass, field
from typing import Any, Protocol

import base58

from .crypto import KeyPair
from .errors import LedgerError, MalformedDid, MalformedDocument, Unresolvable, UnknownDid

METHOD = "agentsim"
ORG_PREFIX = "org-"
_ALPHABET = set(base58.alphabet.decode("ascii"))
_ED25519_MULTICODEC = b"\xed\x01"


@dataclass(frozen=True, order=True)
class Did:
    msid: str
    method: str = METHOD

    def __post_init__(self):
        body = self.msid[len(ORG_PREFIX):] if self.msid.startswith(ORG_PREFIX) else self.msid
        if self.method != METHOD:
            raise MalformedDid(f"unsupported DID method {self.method!r}")
        if not body or not set(body) <= _ALPHABET:
            raise MalformedDid(f"method-specific id {self.msid!r} is not base58")

    @property
    def is_local(self) -> bool:
        return self.msid.startswith(ORG_PREFIX)

    def url(self, key_id: str) -> str:
        return f"{self}#{key_id}"

    def __str__(self) -> str:
        return f"did:{self.method}:{self.msid}"


def parse_did(s: str) -> Did:
    if not isinstance(s, str):
        raise MalformedDid(f"expected a string, got {type(s).__name__}")
    parts = s.split(":")
    if len(parts) != 3 or parts[0] != "did":
        raise MalformedDid(f"not a DID: {s!r}")
    return Did(parts[2], parts[1])


def serialize_did(d: Did) -> str:
    return str(d)


def split_did_url(url: str) -> tuple[Did, str]:
    """'did:agentsim:x#key-1' -> (Did, 'key-1')."""
    did_part, sep, fragment = url.partition("#")
    if not sep or not fragment:
        raise MalformedDid(f"DID URL without fragment: {url!r}")
    return parse_did(did_part), fragment


def key_digest(public_key: bytes) -> str:
    return base58.b58encode(hashlib.sha256(public_key).digest()[:16]).decode("ascii")


def encode_multibase(public_key: bytes) -> str:
    return "z" + base58.b58encode(_ED25519_MULTICODEC + public_key).decode("ascii")


def decode_multibase(value: str) -> bytes:
    if not value.startswith("z"):
        raise MalformedDocument("public key must be base58btc multibase")
    try:
        raw = base58.b58decode(value[1:])
    except ValueError as exc:
        raise MalformedDocument("invalid base58 public key") from exc
    if raw[:2] != _ED25519_MULTICODEC or len(raw) != 34:
        raise MalformedDocument("not an Ed25519 multicodec key")
    return raw[2:]


@dataclass(frozen=True)
class VerificationMethod:
    key_id: str
    controller: Did
    public_key: str

    def raw_key(self) -> bytes:
        return decode_multibase(self.public_key)

    def to_json(self) -> dict[str, Any]:
        return {"key_id": self.key_id, "controller": str(self.controller), "public_key": self.public_key}


@dataclass(frozen=True)
class Service:
    service_id: str
    type: str
    endpoint: str

    def to_json(self) -> dict[str, Any]:
        return {"service_id": self.service_id, "type": self.type, "endpoint": self.endpoint}


@dataclass(frozen=True)
class DidDocument:
    id: Did
    verification_methods: tuple[VerificationMethod, ...]
    authentication: tuple[str, ...]
    services: tuple[Service, ...] = ()

    def __post_init__(self):
        ids = [vm.key_id for vm in self.verification_methods]
        if len(ids) != len(set(ids)) or not all(ids):
            raise MalformedDocument("key_ids must be non-empty and unique")
        if not self.authentication:
            raise MalformedDocument("at least one authentication key is required")
        missing = set(self.authentication) - set(ids)
        if missing:
            raise MalformedDocument(f"authentication references unknown keys {sorted(missing)}")

    def method(self, key_id: str) -> VerificationMethod | None:
        for vm in self.verification_methods:
            if vm.key_id == key_id:
                return vm
        return None

    def authentication_key(self, key_id: str) -> bytes | None:
        if key_id not in self.authentication:
            return None
        vm = self.method(key_id)
        return vm.raw_key() if vm else None

    def authentication_keys(self) -> list[bytes]:
        return [self.method(k).raw_key() for k in self.authentication]

    def to_json(self) -> dict[str, Any]:
        return {
            "id": str(self.id),
            "verification_methods": [vm.to_json() for vm in self.verification_methods],
            "authentication": list(self.authentication),
            "services": [s.to_json() for s in self.services],
        }

    @classmethod
    def from_json(cls, data: Any) -> DidDocument:
        try:
            return cls(
                id=parse_did(data["id"]),
                verification_methods=tuple(
                    VerificationMethod(vm["key_id"], parse_did(vm["controller"]), vm["public_key"])
                    for vm in data["verification_methods"]
                ),
                authentication=tuple(data["authentication"]),
                services=tuple(
                    Service(s["service_id"], s["type"], s["endpoint"]) for s in data.get("services", [])
                ),
            )
        except (KeyError, TypeError, AttributeError) as exc:
            raise MalformedDocument(f"invalid DID document: {exc}") from exc


def document_for_key(did: Did, keypair: KeyPair, services=()) -> DidDocument:
    vm = VerificationMethod(keypair.key_id, did, encode_multibase(keypair.public_key))
    return DidDocument(did, (vm,), (keypair.key_id,), tuple(services))


def new_self_certified_document(keypair: KeyPair, services=()) -> tuple[Did, DidDocument]:
    did = Did(key_digest(keypair.public_key))
    return did, document_for_key(did, keypair, services)


def new_orchestrator_document(keypair: KeyPair, services=()) -> tuple[Did, DidDocument]:
    """Off-ledger document for a domain orchestrator."""
    did = Did(ORG_PREFIX + key_digest(keypair.public_key))
    return did, document_for_key(did, keypair, services)


class LedgerReader(Protocol):
    def resolve(self, did: Did) -> DidDocument: ...


class ResolverConfig:
    """Resolution settings plus the lookup cache they govern.

    ``cache_ttl`` is measured in resolver ticks, advanced with :meth:`advance`;
    a ttl of 0 re-resolves on every lookup.
    """

    def __init__(
        self,
        ledger_endpoint: str | None = None,
        local_documents: dict[Did, DidDocument] | None = None,
        cache_ttl: int = 0,
        ledger: LedgerReader | None = None,
    ):
        self.ledger_endpoint = ledger_endpoint
        self.local_documents = dict(local_documents or {})
        for did, doc in self.local_documents.items():
            if not isinstance(doc, DidDocument) or doc.id != did:
                raise MalformedDocument(f"local document for {did} is invalid")
        self.cache_ttl = cache_ttl
        self._ledger = ledger
        self._cache: dict[Did, tuple[int, DidDocument]] = {}
        self._tick = 0
        self._lock = threading.Lock()

    @property
    def ledger(self) -> LedgerReader | None:
        if self._ledger is None and self.ledger_endpoint:
            from .ledger import RemoteLedger

            self._ledger = RemoteLedger(self.ledger_endpoint)
        return self._ledger

    def advance(self, ticks: int = 1) -> None:
        with self._lock:
            self._tick += ticks

    def with_local(self, documents: dict[Did, DidDocument]) -> ResolverConfig:
        return ResolverConfig(self.ledger_endpoint, documents, self.cache_ttl, self._ledger)

    def resolve(self, did: Did) -> DidDocument:
        if did in self.local_documents:
            return self.local_documents[did]
        if self.cache_ttl > 0:
            with self._lock:
                hit = self._cache.get(did)
                if hit and self._tick - hit[0] < self.cache_ttl:
                    return hit[1]
        ledger = self.ledger
        if ledger is None or did.is_local:
            raise Unresolvable(str(did))
        try:
            doc = ledger.resolve(did)
        except UnknownDid as exc:
            raise Unresolvable(str(did)) from exc
        except LedgerError as exc:
            raise Unresolvable(f"{did}: {exc}") from exc
        if self.cache_ttl > 0:
            with self._lock:
                self._cache[did] = (self._tick, doc)
        return doc


def resolve_any(did: Did, config: ResolverConfig) -> DidDocument:
    return config.resolve(did)
