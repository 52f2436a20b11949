"""Per-agent wallet persisted as a directory of canonical JSON files.

Layout::

    root/key.json                    agent DID, seed, key id (the only place the seed is written)
    root/credentials/<hash>.json     one file per credential
    root/trusted_docs/<hash>.json    locally distributed DID documents
    root/registry.json               {"intra": registry, "cross": registry}

Keys are stored in plaintext.
"""

from __future__ import annotations

import contextlib
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator

from .credentials import TrustRegistry, VerifiableCredential, verify_credential
from .crypto import KeyPair, canonicalize, generate_keypair
from .did import Did, DidDocument, ResolverConfig, parse_did
from .errors import (
    CorruptStore,
    FabricError,
    SubjectMismatch,
    UnverifiedCredential,
    Unwritable,
    WalletLocked,
)

LOCK_NAME = ".lock"


def _file_name(identifier: str) -> str:
    return hashlib.sha256(identifier.encode("utf-8")).hexdigest()[:32] + ".json"


@dataclass
class Wallet:
    agent_did: Did
    keypair: KeyPair
    credentials: list[VerifiableCredential] = field(default_factory=list)
    local_documents: dict[Did, DidDocument] = field(default_factory=dict)
    registry: TrustRegistry = field(default_factory=lambda: TrustRegistry(scope="intra"))
    cross_registry: TrustRegistry = field(default_factory=lambda: TrustRegistry(scope="cross"))
    root_path: Path | None = None

    def __post_init__(self):
        self.credentials.sort(key=_sort_key)

    def registry_for(self, scope: str) -> TrustRegistry:
        return self.cross_registry if scope == "cross" else self.registry

    def resolver(self, ledger=None, ledger_endpoint: str | None = None, cache_ttl: int = 0) -> ResolverConfig:
        return ResolverConfig(ledger_endpoint, self.local_documents, cache_ttl, ledger)

    def credential(self, cred_id: str) -> VerifiableCredential | None:
        for vc in self.credentials:
            if vc.cred_id == cred_id:
                return vc
        return None

    def remove_credentials(self, credential_type: str) -> None:
        doomed = [vc for vc in self.credentials if vc.credential_type == credential_type]
        self.credentials = [vc for vc in self.credentials if vc.credential_type != credential_type]
        if self.root_path:
            for vc in doomed:
                (self.root_path / "credentials" / _file_name(vc.cred_id)).unlink(missing_ok=True)

    # at-rest encryption would wrap these two; not implemented
    def _encode_secret(self, seed: bytes) -> str:
        return seed.hex()

    def _decode_secret(self, text: str) -> bytes:
        return bytes.fromhex(text)


def _write(path: Path, document: Any) -> None:
    path.write_bytes(canonicalize(document))


def save(wallet: Wallet, root_path: str | Path | None = None) -> None:
    if root_path is None and wallet.root_path is None:
        raise Unwritable("wallet has no root path")
    root = Path(root_path if root_path is not None else wallet.root_path)
    try:
        (root / "credentials").mkdir(parents=True, exist_ok=True)
        (root / "trusted_docs").mkdir(exist_ok=True)
        _write(
            root / "key.json",
            {
                "agent_did": str(wallet.agent_did),
                "seed": wallet._encode_secret(wallet.keypair.seed),
                "key_id": wallet.keypair.key_id,
            },
        )
        wanted = {_file_name(vc.cred_id): vc for vc in wallet.credentials}
        for stale in (root / "credentials").glob("*.json"):
            if stale.name not in wanted:
                stale.unlink()
        for name, vc in wanted.items():
            _write(root / "credentials" / name, vc.to_json())
        docs = {_file_name(str(did)): doc for did, doc in wallet.local_documents.items()}
        for stale in (root / "trusted_docs").glob("*.json"):
            if stale.name not in docs:
                stale.unlink()
        for name, doc in docs.items():
            _write(root / "trusted_docs" / name, doc.to_json())
        _write(root / "registry.json", {"intra": wallet.registry.to_json(), "cross": wallet.cross_registry.to_json()})
    except OSError as exc:
        raise Unwritable(str(exc)) from exc
    wallet.root_path = root


def load(root_path: str | Path) -> Wallet:
    root = Path(root_path)
    try:
        key = json.loads((root / "key.json").read_text(encoding="utf-8"))
        agent_did = parse_did(key["agent_did"])
        wallet = Wallet(agent_did, generate_keypair(bytes.fromhex(key["seed"]), key["key_id"]))
        creds = [
            VerifiableCredential.from_json(json.loads(p.read_text(encoding="utf-8")))
            for p in (root / "credentials").glob("*.json")
        ]
        creds.sort(key=lambda vc: (vc.issuance_date, vc.cred_id))
        docs = [
            DidDocument.from_json(json.loads(p.read_text(encoding="utf-8")))
            for p in (root / "trusted_docs").glob("*.json")
        ]
        registries = json.loads((root / "registry.json").read_text(encoding="utf-8"))
        wallet.credentials = creds
        wallet.local_documents = {doc.id: doc for doc in sorted(docs, key=lambda d: str(d.id))}
        wallet.registry = TrustRegistry.from_json(registries["intra"])
        wallet.cross_registry = TrustRegistry.from_json(registries["cross"])
    except (OSError, ValueError, KeyError, TypeError, FabricError) as exc:
        raise CorruptStore(f"{root}: {exc}") from exc
    for vc in wallet.credentials:
        if vc.subject != agent_did:
            raise CorruptStore(f"{root}: credential {vc.cred_id} belongs to {vc.subject}")
    wallet.root_path = root
    return wallet


def _sort_key(vc: VerifiableCredential) -> tuple[str, str]:
    return vc.issuance_date, vc.cred_id


def add_credential(wallet: Wallet, vc: VerifiableCredential, resolver: ResolverConfig) -> None:
    """Store ``vc`` after checking it is ours and verifies under the intra-domain registry."""
    if vc.subject != wallet.agent_did:
        raise SubjectMismatch(f"credential subject {vc.subject} is not {wallet.agent_did}")
    verdict = verify_credential(vc, resolver, wallet.registry)
    if not verdict:
        raise UnverifiedCredential(verdict.reason)
    if wallet.credential(vc.cred_id) is None:
        wallet.credentials.append(vc)
        wallet.credentials.sort(key=_sort_key)
    if wallet.root_path:
        (wallet.root_path / "credentials").mkdir(parents=True, exist_ok=True)
        _write(wallet.root_path / "credentials" / _file_name(vc.cred_id), vc.to_json())


def rotate_key(wallet: Wallet, new_seed: bytes, key_id: str) -> KeyPair:
    wallet.keypair = generate_keypair(new_seed, key_id)
    if wallet.root_path:
        save(wallet)
    return wallet.keypair


@contextlib.contextmanager
def open_wallet(root_path: str | Path) -> Iterator[Wallet]:
    """Load a wallet under an advisory lock file; saves on clean exit."""
    root = Path(root_path)
    lock = root / LOCK_NAME
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError as exc:
        raise WalletLocked(str(root)) from exc
    os.close(fd)
    try:
        wallet = load(root)
        yield wallet
        save(wallet)
    finally:
        lock.unlink(missing_ok=True)
