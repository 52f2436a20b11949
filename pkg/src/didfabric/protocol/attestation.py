"""Credential-manifest attestation gated on a completed mutual authentication.

After both sides are AUTHENTICATED: CRED_MANIFEST_REQUEST, CRED_MANIFEST,
CRED_APPLICATION (signed by the requester) and CRED_FULFILLMENT. Any
issuance-phase message that arrives before authentication fails the thread
with ``not-authenticated``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any

from ..credentials import (
    PERMISSIVE,
    RICH,
    ClaimPolicy,
    VerifiableCredential,
    evaluate_claims,
    issue_credential,
    verify_credential,
)
from ..crypto import canonicalize, verify_detached
from ..errors import FabricError, Unresolvable
from .handshake import (
    AUTHENTICATED,
    FAILED as HS_FAILED,
    Event,
    HandshakeState,
    Incoming,
    SessionContext,
    Start,
    Timeout,
    check_incoming,
    handshake_step,
)
from .messages import (
    ABORT,
    ATTESTATION,
    AUTH_KINDS,
    CRED_APPLICATION,
    CRED_FULFILLMENT,
    CRED_MANIFEST,
    CRED_MANIFEST_REQUEST,
    CredentialManifest,
    ProtocolMessage,
)

REQUESTER = "requester"
ISSUER = "issuer"

AWAIT_AUTH = "AWAIT_AUTH"
AWAIT_MANIFEST = "AWAIT_MANIFEST"
AWAIT_APPLICATION = "AWAIT_APPLICATION"
AWAIT_FULFILLMENT = "AWAIT_FULFILLMENT"
DONE = "DONE"
FAILED = "FAILED"
TERMINAL = frozenset({DONE, FAILED})


@dataclass(frozen=True)
class AttestationState:
    role: str
    handshake: HandshakeState
    phase: str = AWAIT_AUTH
    manifest: CredentialManifest | None = None
    issuance_policy: ClaimPolicy = field(default=PERMISSIVE, compare=False, repr=False)
    credential: VerifiableCredential | None = None
    last_sequence: int = 0
    reason: str | None = None

    @classmethod
    def requester(cls, ctx: SessionContext) -> AttestationState:
        return cls(REQUESTER, HandshakeState.initiator(ctx))

    @classmethod
    def issuer(cls, ctx: SessionContext, manifest: CredentialManifest, policy: ClaimPolicy = PERMISSIVE) -> AttestationState:
        return cls(ISSUER, HandshakeState.responder(ctx), manifest=manifest, issuance_policy=policy)

    @property
    def ctx(self) -> SessionContext:
        return self.handshake.ctx

    @property
    def thread_id(self) -> str | None:
        return self.handshake.thread_id

    @property
    def terminal(self) -> bool:
        return self.phase in TERMINAL

    def snapshot(self) -> dict[str, Any]:
        return {
            "role": self.role,
            "phase": self.phase,
            "manifest_id": self.manifest.manifest_id if self.manifest else None,
            "credential": self.credential.to_json() if self.credential else None,
            "last_sequence": self.last_sequence,
            "reason": self.reason,
            "handshake": self.handshake.snapshot(),
        }


def application_payload(thread_id: str, manifest_id: str) -> dict[str, Any]:
    return {"kind": CRED_APPLICATION, "thread_id": thread_id, "manifest_id": manifest_id}


def _send(state: AttestationState, kind: str, body: dict[str, Any]):
    seq = state.last_sequence + 1
    msg = ProtocolMessage(state.thread_id, seq, kind, body)
    return replace(state, last_sequence=seq), msg


def _fail(state: AttestationState, reason: str, thread_id: str | None = None, notify: bool = True):
    hs = state.handshake
    if not hs.terminal:
        hs = replace(hs, phase=HS_FAILED, reason=reason, thread_id=hs.thread_id or thread_id)
    state = replace(state, phase=FAILED, reason=reason, handshake=hs)
    if not notify or state.thread_id is None:
        return state, []
    state, msg = _send(state, ABORT, {"reason": reason})
    return state, [msg]


def _after_handshake(state: AttestationState, hs: HandshakeState, out: list[ProtocolMessage]):
    state = replace(state, handshake=hs, last_sequence=max(state.last_sequence, hs.last_sequence))
    if hs.phase == HS_FAILED:
        return replace(state, phase=FAILED, reason=hs.reason), out
    if hs.phase != AUTHENTICATED:
        return state, out
    state = replace(state, phase=AWAIT_MANIFEST)
    if state.role == REQUESTER:
        state, req = _send(state, CRED_MANIFEST_REQUEST, {})
        out = out + [req]
    return state, out


def _requester_manifest(state, msg, now):
    try:
        manifest = CredentialManifest.from_json(msg.body["manifest"])
    except (KeyError, TypeError, ValueError, FabricError):
        return _fail(state, "protocol-error")
    if manifest.issuer != state.handshake.peer:
        return _fail(state, "protocol-error")
    state = replace(state, manifest=manifest, phase=AWAIT_FULFILLMENT)
    proof = state.ctx.sign(application_payload(state.thread_id, manifest.manifest_id))
    state, out = _send(state, CRED_APPLICATION, {"manifest_id": manifest.manifest_id, "proof": proof})
    return state, [out]


def _requester_fulfillment(state, msg, now):
    ctx = state.ctx
    try:
        vc = VerifiableCredential.from_json(msg.body["credential"])
    except (KeyError, TypeError, FabricError):
        return _fail(state, "bad-fulfillment")
    verdict = verify_credential(vc, ctx.resolver, ctx.registry)
    if (
        not verdict
        or vc.issuer != state.handshake.peer
        or vc.subject != ctx.did
        or vc.credential_type != RICH
    ):
        return _fail(state, "bad-fulfillment")
    return replace(state, phase=DONE, credential=vc), []


def _issuer_manifest_request(state, msg, now):
    state = replace(state, phase=AWAIT_APPLICATION)
    state, out = _send(state, CRED_MANIFEST, {"manifest": state.manifest.to_json()})
    return state, [out]


def _issuer_application(state, msg, now):
    hs = state.handshake
    ctx = state.ctx
    if hs.phase != AUTHENTICATED:
        return _fail(state, "not-authenticated")
    manifest_id, proof = msg.body.get("manifest_id"), msg.body.get("proof")
    if manifest_id != state.manifest.manifest_id or not isinstance(proof, str):
        return _fail(state, "protocol-error")
    try:
        keys = ctx.resolver.resolve(hs.peer).authentication_keys()
    except (Unresolvable, ValueError):
        return _fail(state, "bad-application")
    payload = canonicalize(application_payload(state.thread_id, manifest_id))
    if not any(verify_detached(payload, proof, k) for k in keys):
        return _fail(state, "bad-application")
    judged = evaluate_claims(hs.merged_claims(), state.issuance_policy)
    if not judged:
        return _fail(state, f"claims-refused({judged.reason})")
    template = state.manifest.output_descriptors[0]
    vc = issue_credential(ctx.keypair, ctx.did, hs.peer, template.credential_type, template.claim_template, issued_at=now)
    state = replace(state, phase=DONE, credential=vc)
    state, out = _send(state, CRED_FULFILLMENT, {"credential": vc.to_json()})
    return state, [out]


_HANDLERS = {
    (REQUESTER, AWAIT_MANIFEST, CRED_MANIFEST): _requester_manifest,
    (REQUESTER, AWAIT_FULFILLMENT, CRED_FULFILLMENT): _requester_fulfillment,
    (ISSUER, AWAIT_MANIFEST, CRED_MANIFEST_REQUEST): _issuer_manifest_request,
    (ISSUER, AWAIT_APPLICATION, CRED_APPLICATION): _issuer_application,
}


def attestation_step(state: AttestationState, event: Event) -> tuple[AttestationState, list[ProtocolMessage]]:
    if state.terminal:
        return state, []
    if isinstance(event, Timeout):
        return _fail(state, "timeout")
    if isinstance(event, Start):
        if state.role != REQUESTER or state.phase != AWAIT_AUTH:
            return state, []
        hs, out = handshake_step(state.handshake, Start(event.thread_id, event.peer, event.now, ATTESTATION))
        return _after_handshake(state, hs, out)

    msg = event.message
    if state.thread_id is not None or state.phase != AWAIT_AUTH:
        guard = replace(state.handshake, last_sequence=state.last_sequence)
        problem = check_incoming(guard, msg)
        if problem:
            return _fail(state, problem, msg.thread_id)
    if msg.kind == ABORT:
        return _fail(replace(state, last_sequence=msg.sequence), str(msg.body.get("reason")), msg.thread_id, notify=False)
    if state.phase == AWAIT_AUTH:
        if msg.kind in AUTH_KINDS:
            hs, out = handshake_step(state.handshake, Incoming(msg, event.now))
            return _after_handshake(state, hs, out)
        # the one-way-authentication shortcut: issuance traffic before both VPs are verified
        return _fail(replace(state, last_sequence=max(state.last_sequence, msg.sequence)), "not-authenticated", msg.thread_id)
    if state.handshake.phase != AUTHENTICATED:
        return _fail(state, "not-authenticated", msg.thread_id)
    handler = _HANDLERS.get((state.role, state.phase, msg.kind))
    if handler is None:
        return _fail(state, "protocol-error", msg.thread_id)
    state = replace(state, last_sequence=msg.sequence)
    return handler(state, msg, event.now)
