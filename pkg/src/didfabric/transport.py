"""Message delivery: an in-process bus and an HTTP JSON-RPC binding.

Both bindings carry the same A2A-style envelope (``message/send`` with a
single data part), so byte counts and dispatch behaviour are identical.
"""

from __future__ import annotations

import itertools
import json
import threading
import time
import uuid
from dataclasses import dataclass, field
from typing import Any, Callable
from urllib.parse import urlsplit

from .did import Did, parse_did
from .errors import BindError, FabricError, TransportError, UnknownThread
from .httpio import JsonServer, request_json, split_endpoint
from .protocol.messages import ProtocolMessage

MALFORMED = -32600
METHOD_NOT_FOUND = -32601
UNKNOWN_THREAD = -32001
_MESSAGE_NS = uuid.UUID("0d5c8a2e-7f1b-4c1a-93a4-5b0e6c7d8e9f")

# handler(message, reply_to) raises UnknownThread for mid-protocol messages of unknown threads
Handler = Callable[[ProtocolMessage, "str | None"], None]


@dataclass(frozen=True)
class Envelope:
    id: int | str
    message: ProtocolMessage
    message_id: str
    reply_to: str | None = None
    parts: tuple[dict[str, Any], ...] | None = None

    @classmethod
    def wrap(cls, message: ProtocolMessage, request_id: int | str, reply_to: str | None = None) -> Envelope:
        mid = str(uuid.uuid5(_MESSAGE_NS, f"{message.thread_id}/{message.sequence}/{message.kind}"))
        return cls(request_id, message, mid, reply_to)

    def to_json(self) -> dict[str, Any]:
        parts = list(self.parts) if self.parts is not None else [{"kind": "data", "data": self.message.to_json()}]
        msg: dict[str, Any] = {
            "role": "agent",
            "message_id": self.message_id,
            "parts": parts,
            "context_id": self.message.thread_id,
        }
        if self.reply_to:
            msg["metadata"] = {"reply_to": self.reply_to}
        return {"jsonrpc": "2.0", "method": "message/send", "id": self.id, "params": {"message": msg}}

    def validate(self) -> None:
        if self.parts is not None and len(self.parts) != 1:
            raise TransportError("malformed", "an envelope carries exactly one data part")

    @classmethod
    def from_json(cls, data: Any) -> Envelope:
        if not isinstance(data, dict) or data.get("jsonrpc") != "2.0":
            raise ValueError("not a JSON-RPC 2.0 request")
        msg = data["params"]["message"]
        parts = msg["parts"]
        if msg.get("role") != "agent" or not isinstance(parts, list) or len(parts) != 1:
            raise ValueError("envelope must carry exactly one part")
        if parts[0].get("kind") != "data":
            raise ValueError("only data parts are supported")
        pm = ProtocolMessage.from_json(parts[0]["data"])
        if msg.get("context_id") != pm.thread_id:
            raise ValueError("context_id does not match the embedded thread")
        reply_to = (msg.get("metadata") or {}).get("reply_to")
        return cls(data["id"], pm, msg["message_id"], reply_to)


@dataclass(frozen=True)
class AgentCard:
    name: str
    did: Did
    endpoint: str
    supported_protocols: tuple[str, ...] = ("mutual-auth/1", "attestation/1")

    def __post_init__(self):
        parts = urlsplit(self.endpoint)
        if parts.scheme not in ("http", "inproc") or not parts.netloc:
            raise ValueError(f"malformed endpoint {self.endpoint!r}")

    def to_json(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "did": str(self.did),
            "endpoint": self.endpoint,
            "supported_protocols": list(self.supported_protocols),
        }

    @classmethod
    def from_json(cls, data: Any) -> AgentCard:
        return cls(data["name"], parse_did(data["did"]), data["endpoint"], tuple(data["supported_protocols"]))


@dataclass(frozen=True)
class Receipt:
    request_id: int | str
    endpoint: str
    bytes_sent: int
    latency_ms: float


@dataclass
class WireRecord:
    thread_id: str
    sequence: int
    kind: str
    endpoint: str
    bytes: int
    latency_ms: float


def _rpc_error(request_id, code: int, message: str) -> dict[str, Any]:
    return {"jsonrpc": "2.0", "id": request_id, "error": {"code": code, "message": message}}


def dispatch_rpc(raw: bytes, handler: Handler) -> dict[str, Any]:
    """Decode one JSON-RPC request and hand its protocol message to ``handler``."""
    try:
        data = json.loads(raw)
    except ValueError:
        return _rpc_error(None, MALFORMED, "malformed")
    request_id = data.get("id") if isinstance(data, dict) else None
    if isinstance(data, dict) and data.get("method") not in (None, "message/send"):
        return _rpc_error(request_id, METHOD_NOT_FOUND, "method not found")
    try:
        envelope = Envelope.from_json(data)
    except (KeyError, TypeError, ValueError, AttributeError, FabricError):
        return _rpc_error(request_id, MALFORMED, "malformed")
    try:
        handler(envelope.message, envelope.reply_to)
    except UnknownThread:
        return _rpc_error(request_id, UNKNOWN_THREAD, "unknown-thread")
    return {"jsonrpc": "2.0", "id": request_id, "result": {"status": "accepted"}}


def _check_response(resp: Any, request_id) -> None:
    if not isinstance(resp, dict) or resp.get("jsonrpc") != "2.0" or resp.get("id") != request_id:
        raise TransportError("malformed-response", "unexpected JSON-RPC response")
    if "error" in resp:
        err = resp["error"]
        raise TransportError("rejected", str(err.get("message")), code=err.get("code"))
    if resp.get("result", {}).get("status") != "accepted":
        raise TransportError("malformed-response", "missing accepted status")


class HttpListener:
    def __init__(self, server: JsonServer, handler: Handler, card: AgentCard | None):
        self._server = server
        self.handler = handler
        self.card = card

    @property
    def endpoint(self) -> str:
        return self._server.url

    def close(self) -> None:
        self._server.close()


class Bus:
    """In-process binding: endpoints look like ``inproc://name``."""

    def __init__(self):
        self._handlers: dict[str, Handler] = {}
        self._cards: dict[str, AgentCard] = {}
        self._lock = threading.Lock()

    def register(self, endpoint: str, handler: Handler, card: AgentCard | None = None) -> None:
        with self._lock:
            if endpoint in self._handlers:
                raise BindError(f"{endpoint} already bound")
            self._handlers[endpoint] = handler
            if card:
                self._cards[endpoint] = card

    def unregister(self, endpoint: str) -> None:
        with self._lock:
            self._handlers.pop(endpoint, None)
            self._cards.pop(endpoint, None)

    def handler(self, endpoint: str) -> Handler:
        with self._lock:
            if endpoint not in self._handlers:
                raise TransportError("connect", f"no inbox at {endpoint}")
            return self._handlers[endpoint]

    def card(self, endpoint: str) -> AgentCard:
        with self._lock:
            if endpoint not in self._cards:
                raise TransportError("connect", f"no agent card at {endpoint}")
            return self._cards[endpoint]


class Transport:
    """Sends envelopes over either binding and keeps a wire log.

    ``interceptor`` sees every outgoing protocol message and returns the
    (message, endpoint) pairs that actually go out; adversarial scenarios use
    it to drop, rewrite or inject traffic.
    """

    def __init__(self, bus: Bus | None = None, timeout: float = 10.0, interceptor=None):
        self.bus = bus or Bus()
        self.timeout = timeout
        self.interceptor = interceptor
        self.log: list[WireRecord] = []
        self._ids = itertools.count(1)
        self._lock = threading.Lock()

    def serve(self, endpoint: str, handler: Handler, card: AgentCard | None = None):
        if endpoint.startswith("inproc://"):
            self.bus.register(endpoint, handler, card)
            return endpoint
        host, port = split_endpoint(endpoint)
        listener: HttpListener | None = None

        def route(method: str, path: str, body: bytes) -> tuple[int, bytes]:
            if method == "POST" and path == "/rpc":
                return 200, json.dumps(dispatch_rpc(body, handler)).encode()
            if method == "GET" and path == "/.well-known/agent-card" and listener and listener.card:
                return 200, json.dumps(listener.card.to_json()).encode()
            return 404, json.dumps({"error": "not-found"}).encode()

        listener = HttpListener(JsonServer(host, port, route), handler, None)
        if card is not None:
            listener.card = AgentCard(card.name, card.did, listener.endpoint, card.supported_protocols)
        return listener

    def send_message(self, message: ProtocolMessage, endpoint: str, reply_to: str | None = None) -> list[Receipt]:
        outgoing = [(message, endpoint)]
        if self.interceptor is not None:
            outgoing = self.interceptor(message, endpoint)
        return [self.send(Envelope.wrap(m, next(self._ids), reply_to), ep) for m, ep in outgoing]

    def send(self, envelope: Envelope, endpoint: str) -> Receipt:
        envelope.validate()
        raw = json.dumps(envelope.to_json(), sort_keys=True, separators=(",", ":")).encode()
        started = time.perf_counter()
        if endpoint.startswith("inproc://"):
            resp = dispatch_rpc(raw, self.bus.handler(endpoint))
        else:
            status, resp, _ = request_json("POST", endpoint.rstrip("/") + "/rpc", raw, self.timeout)
            if status != 200:
                raise TransportError("malformed-response", f"HTTP {status}")
        latency = (time.perf_counter() - started) * 1000.0
        m = envelope.message
        with self._lock:
            self.log.append(WireRecord(m.thread_id, m.sequence, m.kind, endpoint, len(raw), latency))
        _check_response(resp, envelope.id)
        return Receipt(envelope.id, endpoint, len(raw), latency)

    def fetch_agent_card(self, endpoint: str) -> AgentCard:
        return fetch_agent_card(endpoint, self.bus, self.timeout)


_default_bus = Bus()


def send(envelope: Envelope, endpoint: str, bus: Bus | None = None) -> Receipt:
    return Transport(bus or _default_bus).send(envelope, endpoint)


def serve(endpoint: str, handler: Handler, card: AgentCard | None = None, bus: Bus | None = None):
    return Transport(bus or _default_bus).serve(endpoint, handler, card)


def fetch_agent_card(endpoint: str, bus: Bus | None = None, timeout: float = 10.0) -> AgentCard:
    if endpoint.startswith("inproc://"):
        return (bus or _default_bus).card(endpoint)
    status, data, _ = request_json("GET", endpoint.rstrip("/") + "/.well-known/agent-card", None, timeout)
    if status != 200:
        raise TransportError("malformed-response", f"HTTP {status}")
    try:
        return AgentCard.from_json(data)
    except (KeyError, TypeError, ValueError, FabricError) as exc:
        raise TransportError("malformed-response", f"invalid agent card: {exc}") from exc
