"""Four-message mutual authentication as a pure transition function.

    initiator                              responder
      AUTH_REQUEST {did, challenge_A, pd}  ->
                                        <- AUTH_RESPONSE {VP_B(challenge_A), challenge_B, pd}
      AUTH_COMPLETE {VP_A(challenge_B)}    ->
                                        <- AUTH_ACK {status, proof}

A side is AUTHENTICATED only once it has verified the peer's presentation
and seen its own acknowledged. Failures are terminal; there are no retries.
"""

from __future__ import annotations

import hashlib
import hmac
import os
from dataclasses import dataclass, field, replace
from typing import Any, Union

from ..credentials import (
    PERMISSIVE,
    ClaimPolicy,
    TrustRegistry,
    VerifiableCredential,
    evaluate_claims,
)
from ..crypto import KeyPair, b64url_encode, canonicalize, sign_detached, verify_detached
from ..did import Did, ResolverConfig, parse_did
from ..errors import ExpiredChallenge, FabricError, Unresolvable, Unsatisfiable
from ..presentation import (
    DEFAULT_TTL,
    Challenge,
    ChallengeStore,
    PresentationDefinition,
    VerifiablePresentation,
    create_presentation,
    select_credentials,
    verify_presentation,
)
from .messages import (
    ABORT,
    AUTH_ACK,
    AUTH_COMPLETE,
    AUTH_REQUEST,
    AUTH_RESPONSE,
    MUTUAL_AUTH,
    ProtocolMessage,
)

INITIATOR = "initiator"
RESPONDER = "responder"

START = "START"
AWAIT_RESPONSE = "AWAIT_RESPONSE"
AWAIT_COMPLETE = "AWAIT_COMPLETE"
AWAIT_ACK = "AWAIT_ACK"
AUTHENTICATED = "AUTHENTICATED"
FAILED = "FAILED"
AWAITING = frozenset({AWAIT_RESPONSE, AWAIT_COMPLETE, AWAIT_ACK})
TERMINAL = frozenset({AUTHENTICATED, FAILED})


@dataclass(frozen=True)
class SessionContext:
    """Everything a party brings to a session; never part of state equality."""

    did: Did
    keypair: KeyPair
    credentials: tuple[VerifiableCredential, ...]
    resolver: ResolverConfig
    registry: TrustRegistry
    pd_for_peer: PresentationDefinition
    claim_policy: ClaimPolicy = PERMISSIVE
    challenge_ttl: int = DEFAULT_TTL
    nonce_key: bytes | None = field(default=None, repr=False)

    def nonce(self, thread_id: str, role: str) -> bytes:
        if self.nonce_key is None:
            return os.urandom(16)
        # keyed PRF: reproducible for a given key, unpredictable without it
        return hmac.new(self.nonce_key, f"{thread_id}|{role}".encode(), hashlib.sha256).digest()[:16]

    def sign(self, document: Any) -> str:
        return sign_detached(canonicalize(document), self.keypair).compact_form


@dataclass(frozen=True)
class Start:
    thread_id: str
    peer: Did
    now: int = 0
    protocol: str = MUTUAL_AUTH


@dataclass(frozen=True)
class Incoming:
    message: ProtocolMessage
    now: int = 0


@dataclass(frozen=True)
class Timeout:
    now: int = 0


Event = Union[Start, Incoming, Timeout]


@dataclass(frozen=True)
class HandshakeState:
    role: str
    ctx: SessionContext = field(compare=False, repr=False)
    phase: str = START
    thread_id: str | None = None
    protocol: str = MUTUAL_AUTH
    peer_hint: Did | None = None
    issued_challenge: Challenge | None = None
    consumed: tuple[str, ...] = ()
    peer: Did | None = None
    peer_claims: dict[str, Any] = field(default_factory=dict)
    sent_vp_digest: str | None = None
    inbound_verified: bool = False
    outbound_acked: bool = False
    last_sequence: int = 0
    reason: str | None = None

    @classmethod
    def initiator(cls, ctx: SessionContext) -> HandshakeState:
        return cls(INITIATOR, ctx)

    @classmethod
    def responder(cls, ctx: SessionContext) -> HandshakeState:
        return cls(RESPONDER, ctx)

    @property
    def terminal(self) -> bool:
        return self.phase in TERMINAL

    def merged_claims(self) -> dict[str, Any]:
        merged: dict[str, Any] = {}
        for claims in self.peer_claims.values():
            merged.update(claims)
        return merged

    def snapshot(self) -> dict[str, Any]:
        return {
            "role": self.role,
            "phase": self.phase,
            "thread_id": self.thread_id,
            "protocol": self.protocol,
            "peer_hint": str(self.peer_hint) if self.peer_hint else None,
            "issued_challenge": self.issued_challenge.to_json() if self.issued_challenge else None,
            "consumed": list(self.consumed),
            "peer": str(self.peer) if self.peer else None,
            "peer_claims": self.peer_claims,
            "sent_vp_digest": self.sent_vp_digest,
            "inbound_verified": self.inbound_verified,
            "outbound_acked": self.outbound_acked,
            "last_sequence": self.last_sequence,
            "reason": self.reason,
        }


def vp_digest(vp: VerifiablePresentation) -> str:
    return b64url_encode(hashlib.sha256(canonicalize(vp.to_json())).digest())


def ack_payload(thread_id: str, status: str, digest: str) -> dict[str, Any]:
    return {"kind": AUTH_ACK, "thread_id": thread_id, "status": status, "vp_digest": digest}


def _send(state: HandshakeState, kind: str, body: dict[str, Any]) -> tuple[HandshakeState, ProtocolMessage]:
    seq = state.last_sequence + 1
    return replace(state, last_sequence=seq), ProtocolMessage(state.thread_id, seq, kind, body)


def fail(state, reason: str, thread_id: str | None = None, notify: bool = True):
    """Move to FAILED and, unless told otherwise, tell the peer why."""
    failed = replace(state, phase=FAILED, reason=reason, thread_id=state.thread_id or thread_id)
    if not notify or failed.thread_id is None:
        return failed, []
    failed, msg = _send(failed, ABORT, {"reason": reason})
    return failed, [msg]


def _challenge_for(state: HandshakeState, thread_id: str, audience: Did, now: int) -> Challenge:
    ctx = state.ctx
    return Challenge.from_bytes(ctx.nonce(thread_id, state.role), audience, now, ctx.challenge_ttl)


def _present(state: HandshakeState, pd_json: Any, challenge: Challenge, verifier: Did, now: int):
    """Build our presentation for the peer's definition, or return an abort reason."""
    ctx = state.ctx
    try:
        pd = PresentationDefinition.from_json(pd_json)
        selection = select_credentials(ctx.credentials, pd)
        return create_presentation(
            ctx.keypair, ctx.did, selection, challenge, verifier, pd_id=pd.pd_id, now=now
        ), None
    except Unsatisfiable:
        return None, "vc-rejected(unsatisfiable)"
    except ExpiredChallenge:
        return None, "bad-challenge"
    except (KeyError, TypeError, ValueError, FabricError):
        return None, "protocol-error"


def _check_peer_vp(state: HandshakeState, vp_json: Any, now: int):
    """Verify an inbound presentation; returns (state, verdict-like reason or None, vp)."""
    ctx = state.ctx
    challenge = state.issued_challenge
    try:
        vp = VerifiablePresentation.from_json(vp_json)
    except FabricError:
        return state, "protocol-error", None
    store = ChallengeStore(state.consumed)
    verdict = verify_presentation(
        vp,
        ctx.pd_for_peer,
        challenge,
        ctx.resolver,
        ctx.registry,
        verifier=ctx.did,
        challenges=store,
        now=now,
    )
    state = replace(state, consumed=tuple(sorted(store.consumed)))
    if not verdict:
        return state, verdict.reason, vp
    claims = {}
    for c in verdict.claims.values():
        claims.update(c)
    judged = evaluate_claims(claims, ctx.claim_policy)
    if not judged:
        return state, f"claims-refused({judged.reason})", vp
    return replace(state, peer=vp.holder, peer_claims=verdict.claims, inbound_verified=True), None, vp


def _authenticate(state: HandshakeState) -> HandshakeState:
    assert state.inbound_verified and state.outbound_acked and state.peer is not None
    return replace(state, phase=AUTHENTICATED)


def _on_request(state, msg, now):
    ctx = state.ctx
    body = msg.body
    try:
        claimed = parse_did(body["did"])
        challenge_a = Challenge.from_json(body["challenge"])
        protocol = body.get("protocol", MUTUAL_AUTH)
    except (KeyError, TypeError, ValueError, FabricError):
        return fail(state, "protocol-error", msg.thread_id)
    state = replace(state, thread_id=msg.thread_id, last_sequence=msg.sequence, peer_hint=claimed, protocol=protocol)
    if challenge_a.audience != ctx.did:
        return fail(state, "bad-challenge")
    vp, problem = _present(state, body.get("presentation_definition"), challenge_a, claimed, now)
    if problem:
        return fail(state, problem)
    challenge_b = _challenge_for(state, msg.thread_id, claimed, now)
    state = replace(state, issued_challenge=challenge_b, sent_vp_digest=vp_digest(vp), phase=AWAIT_COMPLETE)
    state, out = _send(
        state,
        AUTH_RESPONSE,
        {"vp": vp.to_json(), "challenge": challenge_b.to_json(), "presentation_definition": ctx.pd_for_peer.to_json()},
    )
    return state, [out]


def _on_response(state, msg, now):
    state = replace(state, last_sequence=msg.sequence)
    state, problem, _ = _check_peer_vp(state, msg.body.get("vp"), now)
    if problem:
        return fail(state, problem)
    try:
        challenge_b = Challenge.from_json(msg.body["challenge"])
    except (KeyError, TypeError, ValueError, FabricError):
        return fail(state, "protocol-error")
    if challenge_b.audience != state.ctx.did:
        return fail(state, "bad-challenge")
    vp, problem = _present(state, msg.body.get("presentation_definition"), challenge_b, state.peer, now)
    if problem:
        return fail(state, problem)
    state = replace(state, sent_vp_digest=vp_digest(vp), phase=AWAIT_ACK)
    state, out = _send(state, AUTH_COMPLETE, {"vp": vp.to_json()})
    return state, [out]


def _on_complete(state, msg, now):
    state = replace(state, last_sequence=msg.sequence)
    state, problem, vp = _check_peer_vp(state, msg.body.get("vp"), now)
    if problem:
        return fail(state, problem)
    # a valid VP over our fresh challenge is only produced after the peer accepted ours
    state = _authenticate(replace(state, outbound_acked=True))
    digest = vp_digest(vp)
    proof = state.ctx.sign(ack_payload(state.thread_id, "ok", digest))
    state, out = _send(state, AUTH_ACK, {"status": "ok", "proof": proof})
    return state, [out]


def _on_ack(state, msg, now):
    state = replace(state, last_sequence=msg.sequence)
    status = msg.body.get("status")
    proof = msg.body.get("proof")
    if status != "ok" or not isinstance(proof, str):
        return fail(state, "protocol-error")
    try:
        keys = state.ctx.resolver.resolve(state.peer).authentication_keys()
    except (Unresolvable, ValueError):
        return fail(state, "bad-ack")
    payload = canonicalize(ack_payload(state.thread_id, status, state.sent_vp_digest))
    if not any(verify_detached(payload, proof, k) for k in keys):
        return fail(state, "bad-ack")
    return _authenticate(replace(state, outbound_acked=True)), []


_HANDLERS = {
    (RESPONDER, START, AUTH_REQUEST): _on_request,
    (INITIATOR, AWAIT_RESPONSE, AUTH_RESPONSE): _on_response,
    (RESPONDER, AWAIT_COMPLETE, AUTH_COMPLETE): _on_complete,
    (INITIATOR, AWAIT_ACK, AUTH_ACK): _on_ack,
}


def check_incoming(state, msg: ProtocolMessage):
    """Thread and ordering guard shared by both state machines; returns an abort reason."""
    if state.thread_id is not None and msg.thread_id != state.thread_id:
        return "protocol-error"
    if msg.sequence <= state.last_sequence:
        return "protocol-error"
    return None


def handshake_step(state: HandshakeState, event: Event) -> tuple[HandshakeState, list[ProtocolMessage]]:
    if state.terminal:
        return state, []
    if isinstance(event, Timeout):
        if state.phase in AWAITING:
            return fail(state, "timeout")
        return state, []
    if isinstance(event, Start):
        if state.role != INITIATOR or state.phase != START:
            return state, []
        state = replace(state, thread_id=event.thread_id, peer_hint=event.peer, protocol=event.protocol)
        challenge = _challenge_for(state, event.thread_id, event.peer, event.now)
        state = replace(state, issued_challenge=challenge, phase=AWAIT_RESPONSE)
        state, out = _send(
            state,
            AUTH_REQUEST,
            {
                "did": str(state.ctx.did),
                "challenge": challenge.to_json(),
                "presentation_definition": state.ctx.pd_for_peer.to_json(),
                "protocol": event.protocol,
            },
        )
        return state, [out]

    msg = event.message
    problem = check_incoming(state, msg)
    if problem:
        return fail(state, problem, msg.thread_id)
    if msg.kind == ABORT:
        return fail(replace(state, last_sequence=msg.sequence), str(msg.body.get("reason")), msg.thread_id, notify=False)
    handler = _HANDLERS.get((state.role, state.phase, msg.kind))
    if handler is None:
        return fail(state, "protocol-error", msg.thread_id)
    return handler(state, msg, event.now)
