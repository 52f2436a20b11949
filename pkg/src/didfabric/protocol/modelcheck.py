"""Bounded exhaustive exploration of two honest parties and a network attacker.

The attacker owns the network. At every step it may deliver, to either party,
any message it has observed, any message recorded from a different honest
session (re-threaded), or one it forged with its own registered key, with the
original sequence number or one rewritten to be acceptable. It may also fire
a timeout. States are deduplicated on canonical snapshots plus attacker
knowledge, so the search is complete up to the depth bound.
"""

from __future__ import annotations

import copy
import time
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Any, Callable

from ..credentials import RICH, issue_credential
from ..crypto import canonical_dumps
from ..presentation import create_presentation, select_credentials
from ..errors import FabricError
from .attestation import (
    DONE,
    AttestationState,
    application_payload,
    attestation_step,
)
from .handshake import (
    AUTHENTICATED,
    HandshakeState,
    Incoming,
    SessionContext,
    Start,
    Timeout,
    ack_payload,
    handshake_step,
)
from .messages import (
    ABORT,
    ATTESTATION,
    AUTH_ACK,
    AUTH_COMPLETE,
    AUTH_RESPONSE,
    CRED_APPLICATION,
    CRED_FULFILLMENT,
    CRED_MANIFEST,
    CRED_MANIFEST_REQUEST,
    MUTUAL_AUTH,
    CredentialManifest,
    ProtocolMessage,
)

THREAD = "model-thread"
RECORDED_THREAD = "recorded-thread"
NOW = 1


@dataclass
class ModelCheckResult:
    protocol: str
    depth: int
    states: int
    transitions: int
    violations: list[dict[str, Any]] = field(default_factory=list)
    honest_completion_reachable: bool = False
    elapsed_s: float = 0.0

    @property
    def ok(self) -> bool:
        return not self.violations and self.honest_completion_reachable


def _msg_key(msg: ProtocolMessage) -> str:
    return canonical_dumps(msg.to_json())


def _hs(state) -> HandshakeState:
    return state.handshake if isinstance(state, AttestationState) else state


def _state_key(state) -> str:
    snap = state.snapshot()
    if isinstance(state, AttestationState) and state.manifest is not None:
        snap["manifest"] = state.manifest.to_json()
    return canonical_dumps(snap)


def _rethread(msg: ProtocolMessage, thread_id: str) -> ProtocolMessage:
    return msg.with_thread(thread_id)


def _tampered(msg: ProtocolMessage) -> ProtocolMessage | None:
    vp = msg.body.get("vp")
    if not isinstance(vp, dict) or not vp.get("credentials"):
        return None
    body = copy.deepcopy(msg.body)
    body["vp"]["credentials"][0]["credential_subject"]["claims"]["tampered"] = True
    return ProtocolMessage(msg.thread_id, msg.sequence, msg.kind, body)


@dataclass
class Attacker:
    """A registered insider: real key, real credentials, no standing in the target thread."""

    ctx: SessionContext
    manifest: CredentialManifest | None = None

    def static(self, honest: tuple[SessionContext, SessionContext]) -> list[ProtocolMessage]:
        a, b = honest
        out = [
            ProtocolMessage(THREAD, 1, ABORT, {"reason": "injected"}),
            ProtocolMessage(THREAD, 1, CRED_MANIFEST_REQUEST, {}),
        ]
        if self.manifest is not None:
            mid = self.manifest.manifest_id
            out.append(ProtocolMessage(THREAD, 1, CRED_MANIFEST, {"manifest": self.manifest.to_json()}))
            out.append(
                ProtocolMessage(
                    THREAD, 1, CRED_APPLICATION,
                    {"manifest_id": mid, "proof": self.ctx.sign(application_payload(THREAD, mid))},
                )
            )
            out.append(ProtocolMessage(THREAD, 1, CRED_APPLICATION, {"manifest_id": mid, "proof": "e30..AAAA"}))
            for issuer in (self.ctx.did, b.did):
                vc = issue_credential(self.ctx.keypair, issuer, a.did, RICH, {"role": "forged"}, issued_at=NOW)
                out.append(ProtocolMessage(THREAD, 1, CRED_FULFILLMENT, {"credential": vc.to_json()}))
        return out

    def dynamic(self, target, knowledge: list[ProtocolMessage]) -> list[ProtocolMessage]:
        """Forgeries that depend on what the target is currently waiting for."""
        hs = _hs(target)
        out: list[ProtocolMessage] = []
        challenge = hs.issued_challenge
        if challenge is not None:
            try:
                selection = select_credentials(self.ctx.credentials, hs.ctx.pd_for_peer)
                vp = create_presentation(
                    self.ctx.keypair, self.ctx.did, selection, challenge, hs.ctx.did,
                    pd_id=hs.ctx.pd_for_peer.pd_id, now=NOW,
                )
            except FabricError:
                vp = None
            if vp is not None:
                out.append(ProtocolMessage(THREAD, 1, AUTH_COMPLETE, {"vp": vp.to_json()}))
                out.append(
                    ProtocolMessage(
                        THREAD, 1, AUTH_RESPONSE,
                        {"vp": vp.to_json(), "challenge": challenge.to_json(),
                         "presentation_definition": self.ctx.pd_for_peer.to_json()},
                    )
                )
        if hs.sent_vp_digest is not None:
            proof = self.ctx.sign(ack_payload(THREAD, "ok", hs.sent_vp_digest))
            out.append(ProtocolMessage(THREAD, 1, AUTH_ACK, {"status": "ok", "proof": proof}))
        for msg in knowledge:
            t = _tampered(msg)
            if t is not None:
                out.append(t)
        return out


def _variants(msg: ProtocolMessage, target) -> list[ProtocolMessage]:
    bumped = target.last_sequence + 1
    if msg.sequence == bumped:
        return [msg]
    return [msg, msg.with_sequence(bumped)]


def _check(protocol: str, a, b, emitted: list[tuple[int, ProtocolMessage]]) -> list[str]:
    problems = []
    ha, hb = _hs(a), _hs(b)
    for me, other in ((ha, hb), (hb, ha)):
        if me.phase == AUTHENTICATED:
            if not (me.inbound_verified and me.outbound_acked):
                problems.append(f"{me.role} authenticated without verifying and being acknowledged")
            if not other.inbound_verified:
                problems.append(f"{me.role} authenticated before {other.role} verified its presentation")
            if me.peer != other.ctx.did:
                problems.append(f"{me.role} authenticated the wrong peer {me.peer}")
    if protocol == ATTESTATION:
        for party in (a, b):
            if party.phase not in ("AWAIT_AUTH", "FAILED") and _hs(party).phase != AUTHENTICATED:
                problems.append(f"{party.role} in {party.phase} without authentication")
        for sender, msg in emitted:
            if msg.kind == CRED_FULFILLMENT and not (ha.phase == AUTHENTICATED and hb.phase == AUTHENTICATED):
                problems.append("fulfilment emitted before both presentations verified")
        if a.phase == DONE:
            vc = a.credential
            if vc.issuer != hb.ctx.did or vc.subject != ha.ctx.did:
                problems.append("requester accepted a credential from the wrong issuer")
    return problems


def _honest_run(step, a, b, start: Start) -> list[ProtocolMessage]:
    """Run the pair to quiescence on an honest network and return every message."""
    states = [a, b]
    log: list[ProtocolMessage] = []
    queue: deque[tuple[int, ProtocolMessage]] = deque()
    states[0], out = step(states[0], start)
    queue.extend((1, m) for m in out)
    log.extend(out)
    while queue:
        to, msg = queue.popleft()
        states[to], out = step(states[to], Incoming(msg, NOW))
        queue.extend((1 - to, m) for m in out)
        log.extend(out)
    return log


def explore(
    protocol: str,
    make_pair: Callable[[], tuple[Any, Any]],
    attacker: Attacker,
    depth: int = 12,
) -> ModelCheckResult:
    """Breadth-first search over every attacker schedule up to ``depth`` events."""
    began = time.perf_counter()
    step = attestation_step if protocol == ATTESTATION else handshake_step
    a0, b0 = make_pair()
    start = Start(THREAD, _hs(b0).ctx.did, NOW, protocol)

    recorded = _honest_run(step, *make_pair(), replace(start, thread_id=RECORDED_THREAD))
    static = attacker.static((_hs(a0).ctx, _hs(b0).ctx))
    static += [_rethread(m, THREAD) for m in recorded]

    a1, out = step(a0, start)
    by_key: dict[str, ProtocolMessage] = {}
    for m in [*static, *out]:
        by_key.setdefault(_msg_key(m), m)
    knowledge0 = frozenset(_msg_key(m) for m in out)

    memo: dict[tuple[int, str, str], tuple[Any, list[ProtocolMessage]]] = {}
    keys: dict[int, str] = {}

    def key_of(state) -> str:
        k = keys.get(id(state))
        if k is None:
            k = keys[id(state)] = _state_key(state)
        return k

    def apply(idx: int, state, event_key: str, event) -> tuple[Any, list[ProtocolMessage]]:
        mk = (idx, key_of(state), event_key)
        hit = memo.get(mk)
        if hit is None:
            hit = memo[mk] = step(state, event)
            keys.setdefault(id(hit[0]), _state_key(hit[0]))
        return hit

    result = ModelCheckResult(protocol, depth, 0, 0)
    root = (a1, b0, knowledge0)
    seen = {(key_of(a1), key_of(b0), knowledge0)}
    frontier = [root]
    static_keys = [_msg_key(m) for m in static]
    for level in range(depth):
        following = []
        for a, b, knowledge in frontier:
            known = [by_key[k] for k in sorted(knowledge)]
            pair = (a, b)
            for idx in (0, 1):
                target = pair[idx]
                if target.terminal:
                    continue
                candidates = [by_key[k] for k in static_keys] + known + attacker.dynamic(target, known)
                events: dict[str, Any] = {"timeout": Timeout(NOW)}
                for msg in candidates:
                    for variant in _variants(msg, target):
                        events.setdefault(_msg_key(variant), Incoming(variant, NOW))
                for ek, event in events.items():
                    new_state, out = apply(idx, target, ek, event)
                    result.transitions += 1
                    na, nb = (new_state, b) if idx == 0 else (a, new_state)
                    for problem in _check(protocol, na, nb, [(idx, m) for m in out]):
                        result.violations.append(
                            {"depth": level + 1, "party": idx, "event": ek, "problem": problem}
                        )
                    if protocol == ATTESTATION:
                        if na.phase == DONE and nb.phase == DONE:
                            result.honest_completion_reachable = True
                    elif _hs(na).phase == AUTHENTICATED and _hs(nb).phase == AUTHENTICATED:
                        result.honest_completion_reachable = True
                    new_knowledge = knowledge
                    if out:
                        added = []
                        for m in out:
                            mk = _msg_key(m)
                            by_key.setdefault(mk, m)
                            added.append(mk)
                        new_knowledge = knowledge | frozenset(added)
                    node = (key_of(na), key_of(nb), new_knowledge)
                    if node in seen:
                        continue
                    seen.add(node)
                    following.append((na, nb, new_knowledge))
        frontier = following
        if not frontier:
            break
    result.states = len(seen)
    result.elapsed_s = time.perf_counter() - began
    return result


def check_handshake(initiator: SessionContext, responder: SessionContext, attacker: SessionContext, depth: int = 12):
    def pair():
        return HandshakeState.initiator(initiator), HandshakeState.responder(responder)

    return explore(MUTUAL_AUTH, pair, Attacker(attacker), depth)


def check_attestation(
    requester: SessionContext,
    issuer: SessionContext,
    manifest: CredentialManifest,
    policy,
    attacker: SessionContext,
    depth: int = 12,
):
    def pair():
        return AttestationState.requester(requester), AttestationState.issuer(issuer, manifest, policy)

    return explore(ATTESTATION, pair, Attacker(attacker, manifest), depth)


def default_model(depth: int = 12) -> dict[str, ModelCheckResult]:
    """Check both protocols over a freshly deployed pair of domains."""
    from ..domain import ISSUANCE_POLICY, DomainConfig, deploy_domain, provision_rvc
    from ..ledger import Ledger

    ledger = Ledger()
    cfg_a = DomainConfig("mc-a", bytes(32), worker_count=2)
    cfg_b = DomainConfig("mc-b", bytes([1]) * 32, cross_domain_trusted_issuers=[cfg_a.issuer_did()])
    cfg_a.cross_domain_trusted_issuers = [cfg_b.issuer_did()]
    dom_a = deploy_domain(cfg_a, ledger, session_entropy=b"model-a")
    dom_b = deploy_domain(cfg_b, ledger, session_entropy=b"model-b")
    w1, insider = dom_a.workers
    for w in (w1, insider):
        provision_rvc(dom_a, w)
    provision_rvc(dom_b, dom_b.workers[0])

    def ctx(domain, handle, protocol):
        from ..transport import Transport

        return domain.make_agent(handle, Transport()).session_context(protocol)

    results = {}
    results[ATTESTATION] = check_attestation(
        ctx(dom_a, w1, ATTESTATION),
        ctx(dom_a, dom_a.issuer, ATTESTATION),
        dom_a.manifest,
        ISSUANCE_POLICY,
        ctx(dom_a, insider, ATTESTATION),
        depth,
    )
    results[MUTUAL_AUTH] = check_handshake(
        ctx(dom_a, w1, MUTUAL_AUTH),
        ctx(dom_b, dom_b.workers[0], MUTUAL_AUTH),
        ctx(dom_a, insider, MUTUAL_AUTH),
        depth,
    )
    return results
