"""Simulated, append-only DID ledger with a newline-delimited JSON journal.

Registration is permissionless but self-certifying; updates must be signed by
an authentication key of the current head document. A single lock serializes
writes, and reads only ever observe committed entries.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Any
from urllib.parse import quote, unquote

from .crypto import DetachedSignature, canonicalize, verify_detached
from .did import Did, DidDocument, key_digest, parse_did
from .errors import (
    AlreadyRegistered,
    BadSignature,
    FabricError,
    LedgerError,
    LedgerUnavailable,
    MalformedDid,
    MalformedDocument,
    SelfCertificationMismatch,
    StaleVersion,
    TransportError,
    UnknownDid,
)
from .httpio import JsonServer, request_json


@dataclass(frozen=True)
class LedgerEntry:
    did: Did
    version: int
    document: DidDocument
    registered_by_signature: str
    timestamp: int

    def to_json(self) -> dict[str, Any]:
        return {
            "did": str(self.did),
            "version": self.version,
            "document": self.document.to_json(),
            "registered_by_signature": self.registered_by_signature,
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_json(cls, data: dict[str, Any]) -> LedgerEntry:
        return cls(
            parse_did(data["did"]),
            int(data["version"]),
            DidDocument.from_json(data["document"]),
            data["registered_by_signature"],
            int(data["timestamp"]),
        )


@dataclass(frozen=True)
class Receipt:
    did: Did
    version: int
    timestamp: int


def _compact(signature: DetachedSignature | str) -> str:
    return signature if isinstance(signature, str) else signature.compact_form


class Ledger:
    """In-process ledger state; optionally journaled to ``journal`` (one entry per line)."""

    def __init__(self, journal: str | Path | None = None):
        self.entries: list[LedgerEntry] = []
        self.head_index: dict[Did, int] = {}
        self._versions: dict[Did, list[int]] = {}
        self._lock = threading.Lock()
        self.reads = 0
        self.journal = Path(journal) if journal else None
        if self.journal and self.journal.exists():
            for line in self.journal.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    self._append(LedgerEntry.from_json(json.loads(line)), persist=False)

    def _append(self, entry: LedgerEntry, persist: bool = True) -> None:
        self.entries.append(entry)
        pos = len(self.entries) - 1
        self.head_index[entry.did] = pos
        self._versions.setdefault(entry.did, []).append(pos)
        if persist and self.journal:
            with self.journal.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(entry.to_json(), sort_keys=True, separators=(",", ":")) + "\n")

    def register_did(self, document: DidDocument, signature: DetachedSignature | str) -> Receipt:
        did = document.id
        first_key = document.authentication_key(document.authentication[0])
        if did.is_local or did.msid != key_digest(first_key):
            raise SelfCertificationMismatch(f"{did} is not derived from its first authentication key")
        sig = _compact(signature)
        if not verify_detached(canonicalize(document.to_json()), sig, first_key):
            raise BadSignature("registration signature does not verify")
        with self._lock:
            if did in self.head_index:
                raise AlreadyRegistered(str(did))
            entry = LedgerEntry(did, 1, document, sig, len(self.entries) + 1)
            self._append(entry)
        return Receipt(did, 1, entry.timestamp)

    def update_did_doc(
        self,
        did: Did,
        new_document: DidDocument,
        signature: DetachedSignature | str,
        expected_version: int | None = None,
    ) -> Receipt:
        if new_document.id != did:
            raise MalformedDocument("document id does not match the DID being updated")
        sig = _compact(signature)
        payload = canonicalize(new_document.to_json())
        with self._lock:
            if did not in self.head_index:
                raise UnknownDid(str(did))
            head = self.entries[self.head_index[did]]
            if expected_version is not None and expected_version != head.version:
                raise StaleVersion(f"head is v{head.version}, caller expected v{expected_version}")
            if not any(verify_detached(payload, sig, k) for k in head.document.authentication_keys()):
                raise BadSignature("update not signed by a current authentication key")
            entry = LedgerEntry(did, head.version + 1, new_document, sig, len(self.entries) + 1)
            self._append(entry)
        return Receipt(did, entry.version, entry.timestamp)

    def resolve(self, did: Did) -> DidDocument:
        with self._lock:
            self.reads += 1
            if did not in self.head_index:
                raise UnknownDid(str(did))
            return self.entries[self.head_index[did]].document

    def history(self, did: Did) -> list[LedgerEntry]:
        with self._lock:
            self.reads += 1
            if did not in self._versions:
                raise UnknownDid(str(did))
            return [self.entries[i] for i in self._versions[did]]

    def save(self, path: str | Path) -> None:
        lines = [json.dumps(e.to_json(), sort_keys=True, separators=(",", ":")) for e in self.entries]
        Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> Ledger:
        """Replay a journal into a fresh, detached ledger."""
        ledger = cls()
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if line.strip():
                ledger._append(LedgerEntry.from_json(json.loads(line)), persist=False)
        return ledger


_ERRORS = {
    cls.code: cls
    for cls in (UnknownDid, AlreadyRegistered, SelfCertificationMismatch, BadSignature, StaleVersion)
}
_STATUS = {"unknown-did": 404, "already-registered": 409, "stale-version": 409}


def _error(exc: FabricError) -> tuple[int, bytes]:
    code = getattr(exc, "code", "bad-request")
    body = {"error": code, "message": str(exc)}
    return _STATUS.get(code, 400), json.dumps(body).encode()


def _ok(payload: Any) -> tuple[int, bytes]:
    return 200, json.dumps(payload).encode()


class LedgerServer:
    """REST facade in the style of a universal resolver.

    GET /1.0/identifiers/{did}, GET /history/{did}, POST /register, POST /update.
    """

    def __init__(self, ledger: Ledger, host: str = "127.0.0.1", port: int = 0):
        self.ledger = ledger
        self._server = JsonServer(host, port, self._route)

    @property
    def url(self) -> str:
        return self._server.url

    def close(self) -> None:
        self._server.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _route(self, method: str, path: str, body: bytes) -> tuple[int, bytes]:
        try:
            if method == "GET" and path.startswith("/1.0/identifiers/"):
                did = parse_did(unquote(path[len("/1.0/identifiers/"):]))
                return _ok(self.ledger.resolve(did).to_json())
            if method == "GET" and path.startswith("/history/"):
                did = parse_did(unquote(path[len("/history/"):]))
                return _ok([e.to_json() for e in self.ledger.history(did)])
            if method == "POST" and path in ("/register", "/update"):
                req = json.loads(body)
                doc = DidDocument.from_json(req["document"])
                if path == "/register":
                    receipt = self.ledger.register_did(doc, req["signature"])
                else:
                    receipt = self.ledger.update_did_doc(
                        parse_did(req["did"]), doc, req["signature"], req.get("expected_version")
                    )
                return _ok({"did": str(receipt.did), "version": receipt.version, "timestamp": receipt.timestamp})
        except LedgerError as exc:
            return _error(exc)
        except (MalformedDid, MalformedDocument, ValueError, KeyError, TypeError) as exc:
            return 400, json.dumps({"error": "bad-request", "message": str(exc)}).encode()
        return 404, json.dumps({"error": "not-found", "message": path}).encode()


class RemoteLedger:
    """Client for :class:`LedgerServer` with the same method surface as :class:`Ledger`."""

    def __init__(self, endpoint: str, timeout: float = 10.0):
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout
        self.reads = 0

    def _call(self, method: str, path: str, body: Any = None) -> Any:
        try:
            status, payload, _ = request_json(method, self.endpoint + path, body, self.timeout)
        except TransportError as exc:
            raise LedgerUnavailable(str(exc)) from exc
        if status == 200:
            return payload
        code = payload.get("error") if isinstance(payload, dict) else None
        message = payload.get("message", "") if isinstance(payload, dict) else ""
        raise _ERRORS.get(code, LedgerError)(message)

    def register_did(self, document: DidDocument, signature) -> Receipt:
        r = self._call("POST", "/register", {"document": document.to_json(), "signature": _compact(signature)})
        return Receipt(parse_did(r["did"]), r["version"], r["timestamp"])

    def update_did_doc(self, did: Did, new_document: DidDocument, signature, expected_version=None) -> Receipt:
        body = {"did": str(did), "document": new_document.to_json(), "signature": _compact(signature)}
        if expected_version is not None:
            body["expected_version"] = expected_version
        r = self._call("POST", "/update", body)
        return Receipt(parse_did(r["did"]), r["version"], r["timestamp"])

    def resolve(self, did: Did) -> DidDocument:
        self.reads += 1
        return DidDocument.from_json(self._call("GET", "/1.0/identifiers/" + quote(str(did))))

    def history(self, did: Did) -> list[LedgerEntry]:
        self.reads += 1
        return [LedgerEntry.from_json(e) for e in self._call("GET", "/history/" + quote(str(did)))]
