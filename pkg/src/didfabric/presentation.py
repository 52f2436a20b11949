"""Verifiable presentations and a small subset of DIF Presentation Exchange.

Verification runs in a fixed order and reports the first failing stage:
holder proof, challenge, submission coverage, each contained credential, and
finally holder binding of every credential subject.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Any, Iterable

from .clock import iso
from .credentials import (
    PROOF_TYPE,
    Proof,
    TrustRegistry,
    VerifiableCredential,
    attach_proof,
    check_proof,
    get_claim,
    verify_credential,
)
from .crypto import KeyPair, b64url_encode
from .did import Did, ResolverConfig, parse_did, split_did_url
from .errors import ExpiredChallenge, MalformedCredential, MalformedDid, Unresolvable, Unsatisfiable
from .verdict import Verdict

VP_TYPE = "VerifiablePresentation"
VP_CONTEXT = ("https://www.w3.org/2018/credentials/v1",)
DEFAULT_TTL = 120


@dataclass(frozen=True)
class InputDescriptor:
    descriptor_id: str
    required_credential_type: str
    required_claims: tuple[str, ...] = ()
    issuer_constraint: frozenset[Did] | None = None

    def matches(self, vc: VerifiableCredential) -> bool:
        if vc.credential_type != self.required_credential_type:
            return False
        if self.issuer_constraint is not None and vc.issuer not in self.issuer_constraint:
            return False
        return all(get_claim(vc.claims, path)[0] for path in self.required_claims)

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "descriptor_id": self.descriptor_id,
            "required_credential_type": self.required_credential_type,
            "required_claims": list(self.required_claims),
        }
        if self.issuer_constraint is not None:
            out["issuer_constraint"] = sorted(str(d) for d in self.issuer_constraint)
        return out

    @classmethod
    def from_json(cls, data: dict[str, Any]) -> InputDescriptor:
        constraint = data.get("issuer_constraint")
        return cls(
            data["descriptor_id"],
            data["required_credential_type"],
            tuple(data.get("required_claims", ())),
            None if constraint is None else frozenset(parse_did(d) for d in constraint),
        )


@dataclass(frozen=True)
class PresentationDefinition:
    pd_id: str
    input_descriptors: tuple[InputDescriptor, ...]

    def __post_init__(self):
        if not self.input_descriptors:
            raise ValueError("a presentation definition needs at least one input descriptor")
        ids = [d.descriptor_id for d in self.input_descriptors]
        if len(ids) != len(set(ids)):
            raise ValueError("descriptor ids must be unique")

    def to_json(self) -> dict[str, Any]:
        return {"pd_id": self.pd_id, "input_descriptors": [d.to_json() for d in self.input_descriptors]}

    @classmethod
    def from_json(cls, data: dict[str, Any]) -> PresentationDefinition:
        return cls(data["pd_id"], tuple(InputDescriptor.from_json(d) for d in data["input_descriptors"]))


@dataclass(frozen=True)
class Challenge:
    nonce: str
    audience: Did
    issued_at: int
    ttl: int = DEFAULT_TTL

    @classmethod
    def from_bytes(cls, raw: bytes, audience: Did, issued_at: int, ttl: int = DEFAULT_TTL) -> Challenge:
        if len(raw) != 16:
            raise ValueError("challenge nonces are 16 octets")
        return cls(b64url_encode(raw), audience, issued_at, ttl)

    def expired(self, now: int) -> bool:
        return now > self.issued_at + self.ttl

    def to_json(self) -> dict[str, Any]:
        return {"nonce": self.nonce, "audience": str(self.audience), "issued_at": self.issued_at, "ttl": self.ttl}

    @classmethod
    def from_json(cls, data: dict[str, Any]) -> Challenge:
        return cls(data["nonce"], parse_did(data["audience"]), int(data["issued_at"]), int(data["ttl"]))


class ChallengeStore:
    """Tracks consumed nonces; consumption is atomic per nonce."""

    def __init__(self, consumed: Iterable[str] = ()):
        self._consumed = set(consumed)
        self._lock = threading.Lock()

    def consume(self, nonce: str) -> bool:
        """True on the first call for ``nonce``, False on every later one."""
        with self._lock:
            if nonce in self._consumed:
                return False
            self._consumed.add(nonce)
            return True

    @property
    def consumed(self) -> frozenset[str]:
        with self._lock:
            return frozenset(self._consumed)


@dataclass(frozen=True)
class VerifiablePresentation:
    context: tuple[str, ...]
    holder: Did
    credentials: tuple[VerifiableCredential, ...]
    pd_id: str
    descriptor_map: tuple[tuple[str, int], ...]
    proof: Proof
    types: tuple[str, ...] = (VP_TYPE,)

    def to_json(self) -> dict[str, Any]:
        return {
            "@context": list(self.context),
            "types": list(self.types),
            "holder": str(self.holder),
            "credentials": [vc.to_json() for vc in self.credentials],
            "submission": {
                "pd_id": self.pd_id,
                "descriptor_map": [
                    {"descriptor_id": d, "credential_index": i} for d, i in self.descriptor_map
                ],
            },
            "proof": self.proof.to_json(),
        }

    @classmethod
    def from_json(cls, data: Any) -> VerifiablePresentation:
        try:
            sub = data["submission"]
            return cls(
                tuple(data["@context"]),
                parse_did(data["holder"]),
                tuple(VerifiableCredential.from_json(c) for c in data["credentials"]),
                sub["pd_id"],
                tuple((m["descriptor_id"], m["credential_index"]) for m in sub["descriptor_map"]),
                Proof.from_json(data["proof"]),
                tuple(data["types"]),
            )
        except (KeyError, TypeError, AttributeError, MalformedDid) as exc:
            raise MalformedCredential(f"invalid presentation: {exc}") from exc


def _credentials_of(wallet: Any) -> list[VerifiableCredential]:
    return list(getattr(wallet, "credentials", wallet))


def select_credentials(wallet: Any, pd: PresentationDefinition) -> list[tuple[str, VerifiableCredential]]:
    """Pick one credential per descriptor: newest issuance first, then lowest cred_id."""
    creds = _credentials_of(wallet)
    chosen = []
    for desc in pd.input_descriptors:
        candidates = [vc for vc in creds if desc.matches(vc)]
        if not candidates:
            raise Unsatisfiable(desc.descriptor_id)
        candidates.sort(key=lambda vc: vc.cred_id)
        candidates.sort(key=lambda vc: vc.issuance_date, reverse=True)
        chosen.append((desc.descriptor_id, candidates[0]))
    return chosen


def create_presentation(
    holder_key: KeyPair,
    holder: Did,
    selections: list[tuple[str, VerifiableCredential]],
    challenge: Challenge,
    verifier: Did,
    *,
    pd_id: str,
    now: int = 0,
) -> VerifiablePresentation:
    if not selections:
        raise ValueError("a presentation needs at least one selected credential")
    if challenge.expired(now):
        raise ExpiredChallenge(f"challenge issued at {challenge.issued_at} expired (ttl {challenge.ttl})")
    credentials: list[VerifiableCredential] = []
    index: dict[str, int] = {}
    mapping = []
    for descriptor_id, vc in selections:
        if vc.cred_id not in index:
            index[vc.cred_id] = len(credentials)
            credentials.append(vc)
        mapping.append({"descriptor_id": descriptor_id, "credential_index": index[vc.cred_id]})
    unsigned = {
        "@context": list(VP_CONTEXT),
        "types": [VP_TYPE],
        "holder": str(holder),
        "credentials": [vc.to_json() for vc in credentials],
        "submission": {"pd_id": pd_id, "descriptor_map": mapping},
    }
    proof = Proof(
        PROOF_TYPE,
        iso(now),
        holder.url(holder_key.key_id),
        "authentication",
        challenge=challenge.nonce,
        domain=str(verifier),
    )
    return VerifiablePresentation.from_json(attach_proof(unsigned, holder_key, proof))


def _holder_proof(vp: VerifiablePresentation, resolver: ResolverConfig) -> Verdict:
    try:
        method_did, key_id = split_did_url(vp.proof.verification_method)
        if method_did != vp.holder:
            return Verdict.reject("bad-holder-proof", "verification method is not the holder's")
        doc = resolver.resolve(vp.holder)
    except (MalformedDid, Unresolvable) as exc:
        return Verdict.reject("bad-holder-proof", str(exc))
    if vp.proof.proof_purpose != "authentication" or vp.proof.proof_type != PROOF_TYPE:
        return Verdict.reject("bad-holder-proof", "wrong proof purpose or type")
    try:
        key = doc.authentication_key(key_id)
        sig = check_proof(vp.to_json(), key) if key else Verdict.reject("unknown-key")
    except ValueError:
        sig = Verdict.reject("malformed")
    if not sig:
        return Verdict.reject("bad-holder-proof", sig.reason)
    return Verdict.accept()


def verify_presentation(
    vp: VerifiablePresentation,
    pd: PresentationDefinition,
    expected_challenge: Challenge,
    resolver: ResolverConfig,
    registry: TrustRegistry,
    *,
    verifier: Did,
    challenges: ChallengeStore,
    now: int = 0,
) -> Verdict:
    """Accepts with ``claims`` keyed by descriptor id.

    Every call is a verification attempt and consumes ``expected_challenge``.
    """
    fresh = challenges.consume(expected_challenge.nonce)

    stage = _holder_proof(vp, resolver)
    if not stage:
        return stage

    if vp.proof.challenge != expected_challenge.nonce:
        return Verdict.reject("bad-challenge", "nonce mismatch")
    if not fresh:
        return Verdict.reject("replayed-challenge", expected_challenge.nonce)
    if vp.proof.domain != str(verifier):
        return Verdict.reject("bad-challenge", "domain is not this verifier")
    if vp.holder != expected_challenge.audience:
        return Verdict.reject("bad-challenge", "challenge was issued to another party")
    if expected_challenge.expired(now):
        return Verdict.reject("bad-challenge", "expired")

    if vp.pd_id != pd.pd_id:
        return Verdict.reject("submission-mismatch", "pd_id")
    mapped: dict[str, VerifiableCredential] = {}
    for descriptor_id, idx in vp.descriptor_map:
        if descriptor_id in mapped or not isinstance(idx, int) or not 0 <= idx < len(vp.credentials):
            return Verdict.reject("submission-mismatch", descriptor_id)
        mapped[descriptor_id] = vp.credentials[idx]
    wanted = {d.descriptor_id: d for d in pd.input_descriptors}
    if set(mapped) != set(wanted):
        return Verdict.reject("submission-mismatch", "descriptor coverage")
    for descriptor_id, desc in wanted.items():
        if not desc.matches(mapped[descriptor_id]):
            return Verdict.reject("submission-mismatch", descriptor_id)

    for desc in pd.input_descriptors:
        inner = verify_credential(mapped[desc.descriptor_id], resolver, registry)
        if not inner:
            return Verdict.reject(f"vc-rejected({inner.reason})", desc.descriptor_id)

    for descriptor_id, vc in mapped.items():
        if vc.subject != vp.holder:
            return Verdict.reject("subject-mismatch", descriptor_id)

    return Verdict.accept({d: mapped[d].claims for d in wanted})
