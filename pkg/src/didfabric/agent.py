"""Agent runtime: drives the pure state machines from a transport inbox.

Each agent owns one processing thread, so events for a protocol thread are
handled strictly in arrival order, while sessions stay independent.
"""

from __future__ import annotations

import hashlib
import hmac
import itertools
import logging
import os
import queue
import threading
import uuid
from dataclasses import dataclass, field, replace
from typing import Any

from .clock import LogicalClock
from .credentials import PERMISSIVE, ClaimPolicy
from .did import Did, ResolverConfig
from .errors import FabricError, TransportError, UnknownThread
from .presentation import PresentationDefinition
from .protocol.attestation import AttestationState, attestation_step
from .protocol.handshake import (
    AUTHENTICATED,
    HandshakeState,
    Incoming,
    SessionContext,
    Start,
    Timeout,
    handshake_step,
)
from .protocol.messages import ATTESTATION, AUTH_REQUEST, MUTUAL_AUTH, CredentialManifest, ProtocolMessage
from .transport import AgentCard, Transport
from .wallet import Wallet, add_credential

log = logging.getLogger(__name__)
_THREAD_NS = uuid.UUID("b7e3c1d2-5a4f-4e8b-9c0d-1e2f3a4b5c6d")
_STOP = object()

FINAL_PHASES = frozenset({AUTHENTICATED, "FAILED", "DONE"})


def scope_of(protocol: str) -> str:
    return "intra" if protocol == ATTESTATION else "cross"


@dataclass
class TraceRecord:
    agent: str
    thread_id: str | None
    event: dict[str, Any]
    state: dict[str, Any]
    outgoing: list[dict[str, Any]]

    def to_json(self) -> dict[str, Any]:
        return {
            "agent": self.agent,
            "thread_id": self.thread_id,
            "event": self.event,
            "state": self.state,
            "outgoing": self.outgoing,
        }


@dataclass
class SessionResult:
    thread_id: str
    phase: str
    reason: str | None = None
    peer: Did | None = None
    peer_claims: dict[str, Any] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.phase in (AUTHENTICATED, "DONE")


class Agent:
    def __init__(
        self,
        name: str,
        wallet: Wallet,
        resolver: ResolverConfig,
        transport: Transport,
        endpoint: str,
        *,
        definitions: dict[str, PresentationDefinition],
        policies: dict[str, ClaimPolicy] | None = None,
        manifest: CredentialManifest | None = None,
        issuance_policy: ClaimPolicy = PERMISSIVE,
        clock: LogicalClock | None = None,
        session_seed: bytes | None = None,
    ):
        self.name = name
        self.wallet = wallet
        self.resolver = resolver
        self.transport = transport
        self.requested_endpoint = endpoint
        self.definitions = definitions
        self.policies = policies or {}
        self.manifest = manifest
        self.issuance_policy = issuance_policy
        self.clock = clock or LogicalClock()
        # thread ids and challenge nonces derive from this; random unless a reproducible run asks otherwise
        self.session_seed = session_seed if session_seed is not None else os.urandom(32)
        self._nonce_key = hmac.new(self.session_seed, b"challenge-nonces", hashlib.sha256).digest()
        self.sessions: dict[str, HandshakeState | AttestationState] = {}
        self.reply_to: dict[str, str] = {}
        self.trace: list[TraceRecord] = []
        self._inbox: queue.Queue = queue.Queue()
        self._cond = threading.Condition()
        self._counter = itertools.count(1)
        self._worker: threading.Thread | None = None
        self._listener = None

    @property
    def did(self) -> Did:
        return self.wallet.agent_did

    @property
    def endpoint(self) -> str:
        listener = self._listener
        if listener is None or isinstance(listener, str):
            return self.requested_endpoint
        return listener.endpoint

    def card(self) -> AgentCard:
        protocols = (MUTUAL_AUTH, ATTESTATION) if self.manifest else (MUTUAL_AUTH,)
        return AgentCard(self.name, self.did, self.endpoint, protocols)

    def start(self) -> Agent:
        self._listener = self.transport.serve(self.requested_endpoint, self.deliver, self.card())
        self._worker = threading.Thread(target=self._run, name=f"agent-{self.name}", daemon=True)
        self._worker.start()
        return self

    def stop(self) -> None:
        if self._worker:
            self._inbox.put(_STOP)
            self._worker.join()
            self._worker = None
        if self._listener is not None:
            if isinstance(self._listener, str):
                self.transport.bus.unregister(self._listener)
            else:
                self._listener.close()
            self._listener = None

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()

    # transport-facing
    def deliver(self, message: ProtocolMessage, reply_to: str | None) -> None:
        with self._cond:
            known = message.thread_id in self.sessions
        if not known and message.kind != AUTH_REQUEST:
            raise UnknownThread(message.thread_id)
        self._inbox.put(("message", message, reply_to))

    # caller-facing
    def new_thread_id(self) -> str:
        return str(uuid.uuid5(_THREAD_NS, f"{self.did}/{self.session_seed.hex()}/{next(self._counter)}"))

    def initiate(self, peer: Did, peer_endpoint: str, protocol: str = MUTUAL_AUTH, thread_id: str | None = None) -> str:
        thread_id = thread_id or self.new_thread_id()
        ctx = self.session_context(protocol)
        if protocol == ATTESTATION:
            state: Any = AttestationState.requester(ctx)
        else:
            state = HandshakeState.initiator(ctx)
        with self._cond:
            self.sessions[thread_id] = state
            self.reply_to[thread_id] = peer_endpoint
        self._inbox.put(("start", thread_id, peer, protocol))
        return thread_id

    def wait(self, thread_id: str, timeout: float = 10.0) -> SessionResult:
        with self._cond:
            done = self._cond.wait_for(lambda: self.sessions[thread_id].phase in FINAL_PHASES, timeout)
        if not done:
            self._inbox.put(("timeout", thread_id))
            with self._cond:
                self._cond.wait_for(lambda: self.sessions[thread_id].phase in FINAL_PHASES, 5.0)
        return self.result(thread_id)

    def result(self, thread_id: str) -> SessionResult:
        with self._cond:
            state = self.sessions[thread_id]
        hs = state.handshake if isinstance(state, AttestationState) else state
        return SessionResult(thread_id, state.phase, state.reason, hs.peer, hs.peer_claims)

    # internals
    def session_context(self, protocol: str) -> SessionContext:
        return SessionContext(
            did=self.did,
            keypair=self.wallet.keypair,
            credentials=tuple(self.wallet.credentials),
            resolver=self.resolver,
            registry=self.wallet.registry_for(scope_of(protocol)),
            pd_for_peer=self.definitions[protocol],
            claim_policy=self.policies.get(protocol, PERMISSIVE),
            nonce_key=self._nonce_key,
        )

    def _new_responder(self, message: ProtocolMessage):
        protocol = message.body.get("protocol", MUTUAL_AUTH)
        if protocol not in self.definitions or (protocol == ATTESTATION and self.manifest is None):
            protocol = MUTUAL_AUTH
        ctx = self.session_context(protocol)
        if protocol == ATTESTATION:
            return AttestationState.issuer(ctx, self.manifest, self.issuance_policy)
        return HandshakeState.responder(ctx)

    def _run(self) -> None:
        while True:
            item = self._inbox.get()
            if item is _STOP:
                return
            try:
                self._handle(item)
            except Exception:  # keep the actor alive; the session is marked failed below
                log.exception("agent %s failed while handling %s", self.name, item[0])

    def _handle(self, item) -> None:
        kind = item[0]
        now = self.clock.tick()
        if kind == "start":
            _, thread_id, peer, protocol = item
            event: Any = Start(thread_id, peer, now, protocol)
            described = {"type": "start", "peer": str(peer)}
        elif kind == "timeout":
            _, thread_id = item
            event = Timeout(now)
            described = {"type": "timeout"}
        else:
            _, message, reply_to = item
            thread_id = message.thread_id
            event = Incoming(message, now)
            described = {"type": "message", "kind": message.kind, "sequence": message.sequence}
            with self._cond:
                if thread_id not in self.sessions:
                    self.sessions[thread_id] = self._new_responder(message)
                if reply_to and thread_id not in self.reply_to:
                    self.reply_to[thread_id] = reply_to
        with self._cond:
            state = self.sessions[thread_id]
        step = attestation_step if isinstance(state, AttestationState) else handshake_step
        new_state, outgoing = step(state, event)
        self.trace.append(
            TraceRecord(self.name, thread_id, described, new_state.snapshot(), [m.to_json() for m in outgoing])
        )
        with self._cond:
            self.sessions[thread_id] = new_state
        self._finish(thread_id, state, new_state)
        for message in outgoing:
            try:
                self.transport.send_message(message, self.reply_to[thread_id], reply_to=self.endpoint)
            except (TransportError, KeyError) as exc:
                log.warning("agent %s could not deliver %s: %s", self.name, message.kind, exc)
                with self._cond:
                    current = self.sessions[thread_id]
                    if current.phase not in ("FAILED",):
                        self.sessions[thread_id] = replace(current, phase="FAILED", reason="transport")
                break
        with self._cond:
            self._cond.notify_all()

    def _finish(self, thread_id: str, before, after) -> None:
        if not isinstance(after, AttestationState) or after.role != "requester":
            return
        if after.phase == "DONE" and before.phase != "DONE":
            try:
                add_credential(self.wallet, after.credential, self.resolver)
            except FabricError as exc:
                log.warning("agent %s refused fulfilled credential: %s", self.name, exc)
                with self._cond:
                    self.sessions[thread_id] = replace(after, phase="FAILED", reason="bad-fulfillment")


def cross_domain_auth(initiator: Agent, responder_endpoint: str, timeout: float = 10.0) -> SessionResult:
    """Mutual authentication with an agent reachable at ``responder_endpoint``."""
    try:
        card = initiator.transport.fetch_agent_card(responder_endpoint)
    except TransportError as exc:
        return SessionResult("", "FAILED", "transport")
    thread_id = initiator.initiate(card.did, card.endpoint, MUTUAL_AUTH)
    return initiator.wait(thread_id, timeout)
