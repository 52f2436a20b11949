"""Verifiable credentials: issuance, verification, and claim evaluation.

A basic credential (bVC) asserts only agenthood and is issued by the domain
orchestrator; a rich credential (rVC) carries role, capabilities or
authorizations. Claims may be structured values or free text.
"""

from __future__ import annotations

import copy
import uuid
from dataclasses import dataclass, field
from typing import Any, Iterable

from .clock import iso, parse_iso
from .crypto import KeyPair, canonicalize, sign_detached, verify_detached
from .did import Did, ResolverConfig, parse_did, split_did_url
from .errors import ClaimShapeViolation, MalformedCredential, MalformedDid, Unresolvable
from .verdict import Verdict

VC_TYPE = "VerifiableCredential"
BASIC = "BasicAgentCredential"
RICH = "RichAgentCredential"
CREDENTIAL_TYPES = (BASIC, RICH)
RICH_FIELDS = ("role", "capabilities", "authorizations")
PROOF_TYPE = "Ed25519DetachedJws2020"
DEFAULT_CONTEXT = ("https://www.w3.org/2018/credentials/v1", "https://agentsim.example/credentials/v1")
_NAMESPACE = uuid.UUID("6f1b2c1e-3a0b-4e7c-9d55-0a4c2f1e8b10")


@dataclass(frozen=True)
class Proof:
    proof_type: str
    created: str
    verification_method: str
    proof_purpose: str
    jws: str = ""
    challenge: str | None = None
    domain: str | None = None

    def to_json(self) -> dict[str, Any]:
        out = {
            "proof_type": self.proof_type,
            "created": self.created,
            "verification_method": self.verification_method,
            "proof_purpose": self.proof_purpose,
            "jws": self.jws,
        }
        if self.challenge is not None:
            out["challenge"] = self.challenge
        if self.domain is not None:
            out["domain"] = self.domain
        return out

    @classmethod
    def from_json(cls, data: dict[str, Any]) -> Proof:
        return cls(
            data["proof_type"],
            data["created"],
            data["verification_method"],
            data["proof_purpose"],
            data["jws"],
            data.get("challenge"),
            data.get("domain"),
        )


def proof_payload(document: dict[str, Any]) -> bytes:
    """Canonical signing payload: the whole document minus the proof's ``jws`` value.

    Proof options (purpose, challenge, domain) stay inside the signed bytes so a
    presentation cannot be re-bound to a different challenge.
    """
    doc = dict(document)
    proof = dict(doc.get("proof") or {})
    proof.pop("jws", None)
    doc["proof"] = proof
    return canonicalize(doc)


def attach_proof(document: dict[str, Any], key: KeyPair, proof: Proof) -> dict[str, Any]:
    doc = dict(document)
    doc["proof"] = proof.to_json()
    jws = sign_detached(proof_payload(doc), key).compact_form
    doc["proof"] = dict(doc["proof"], jws=jws)
    return doc


def check_proof(document: dict[str, Any], public_key: bytes) -> Verdict:
    return verify_detached(proof_payload(document), document["proof"]["jws"], public_key)


@dataclass(frozen=True)
class VerifiableCredential:
    context: tuple[str, ...]
    cred_id: str
    types: tuple[str, ...]
    issuer: Did
    issuance_date: str
    subject: Did
    claims: dict[str, Any]
    proof: Proof

    @property
    def credential_type(self) -> str:
        for t in self.types:
            if t in CREDENTIAL_TYPES:
                return t
        return ""

    def to_json(self) -> dict[str, Any]:
        return {
            "@context": list(self.context),
            "cred_id": self.cred_id,
            "types": list(self.types),
            "issuer": str(self.issuer),
            "issuance_date": self.issuance_date,
            "credential_subject": {"id": str(self.subject), "claims": copy.deepcopy(self.claims)},
            "proof": self.proof.to_json(),
        }

    @classmethod
    def from_json(cls, data: Any) -> VerifiableCredential:
        try:
            subject = data["credential_subject"]
            claims = subject["claims"]
            if not isinstance(claims, dict):
                raise TypeError("claims must be an object")
            return cls(
                tuple(data["@context"]),
                data["cred_id"],
                tuple(data["types"]),
                parse_did(data["issuer"]),
                data["issuance_date"],
                parse_did(subject["id"]),
                copy.deepcopy(claims),
                Proof.from_json(data["proof"]),
            )
        except (KeyError, TypeError, AttributeError, MalformedDid) as exc:
            raise MalformedCredential(f"invalid credential: {exc}") from exc


def claim_shape_error(credential_type: str, claims: dict[str, Any]) -> str | None:
    if credential_type == BASIC:
        if claims != {"agent": True}:
            return "basic credentials carry only {'agent': true}"
    elif credential_type == RICH:
        if not any(f in claims for f in RICH_FIELDS):
            return "rich credentials need a role, capabilities or authorizations claim"
    else:
        return f"unknown credential type {credential_type!r}"
    return None


def _credential_id(issuer: Did, subject: Did, credential_type: str, issued: str, claims: dict) -> str:
    seed = canonicalize([str(issuer), str(subject), credential_type, issued, claims])
    return f"urn:uuid:{uuid.uuid5(_NAMESPACE, seed.hex())}"


def issue_credential(
    issuer_key: KeyPair,
    issuer_did: Did,
    subject: Did,
    credential_type: str,
    claims: dict[str, Any],
    *,
    issued_at: int = 0,
    cred_id: str | None = None,
    context: Iterable[str] = DEFAULT_CONTEXT,
) -> VerifiableCredential:
    problem = claim_shape_error(credential_type, claims)
    if problem:
        raise ClaimShapeViolation(problem)
    if subject == issuer_did:
        raise ClaimShapeViolation("self-issued credentials are not allowed")
    issued = iso(issued_at)
    claims = copy.deepcopy(claims)
    unsigned = {
        "@context": list(context),
        "cred_id": cred_id or _credential_id(issuer_did, subject, credential_type, issued, claims),
        "types": [VC_TYPE, credential_type],
        "issuer": str(issuer_did),
        "issuance_date": issued,
        "credential_subject": {"id": str(subject), "claims": claims},
    }
    proof = Proof(PROOF_TYPE, issued, issuer_did.url(issuer_key.key_id), "assertionMethod")
    return VerifiableCredential.from_json(attach_proof(unsigned, issuer_key, proof))


@dataclass(frozen=True)
class TrustedIssuer:
    accepted_types: frozenset[str]
    label: str = ""

    def __post_init__(self):
        if not self.accepted_types:
            raise ValueError("accepted_types must be non-empty")


@dataclass
class TrustRegistry:
    trusted_issuers: dict[Did, TrustedIssuer] = field(default_factory=dict)
    scope: str = "intra"

    def trust(self, did: Did, types: Iterable[str], label: str = "") -> None:
        self.trusted_issuers[did] = TrustedIssuer(frozenset(types), label)

    def without(self, did: Did) -> TrustRegistry:
        return TrustRegistry({k: v for k, v in self.trusted_issuers.items() if k != did}, self.scope)

    def to_json(self) -> dict[str, Any]:
        return {
            "scope": self.scope,
            "trusted_issuers": {
                str(did): {"accepted_types": sorted(t.accepted_types), "label": t.label}
                for did, t in sorted(self.trusted_issuers.items())
            },
        }

    @classmethod
    def from_json(cls, data: dict[str, Any]) -> TrustRegistry:
        if data.get("scope") not in ("intra", "cross"):
            raise ValueError(f"invalid registry scope {data.get('scope')!r}")
        return cls(
            {
                parse_did(did): TrustedIssuer(frozenset(entry["accepted_types"]), entry.get("label", ""))
                for did, entry in data["trusted_issuers"].items()
            },
            data["scope"],
        )


def verify_credential(
    vc: VerifiableCredential,
    resolver: ResolverConfig,
    registry: TrustRegistry,
    *,
    max_age: int | None = None,
    now: int | None = None,
) -> Verdict:
    """Reasons, in check order: unresolvable-issuer, unknown-key, bad-signature,
    untrusted-issuer, type-not-accepted, claim-shape, expired."""
    try:
        doc = resolver.resolve(vc.issuer)
    except Unresolvable:
        return Verdict.reject("unresolvable-issuer", str(vc.issuer))
    try:
        method_did, key_id = split_did_url(vc.proof.verification_method)
    except MalformedDid:
        return Verdict.reject("unknown-key", vc.proof.verification_method)
    vm = doc.method(key_id) if method_did == vc.issuer else None
    if vm is None:
        return Verdict.reject("unknown-key", vc.proof.verification_method)
    if vc.proof.proof_purpose != "assertionMethod" or vc.proof.proof_type != PROOF_TYPE:
        return Verdict.reject("bad-signature", "wrong proof purpose or type")
    try:
        sig = check_proof(vc.to_json(), vm.raw_key())
    except ValueError:
        return Verdict.reject("bad-signature", "undecodable key")
    if not sig:
        return Verdict.reject("bad-signature", sig.reason)
    trusted = registry.trusted_issuers.get(vc.issuer)
    if trusted is None:
        return Verdict.reject("untrusted-issuer", str(vc.issuer))
    if vc.credential_type not in trusted.accepted_types:
        return Verdict.reject("type-not-accepted", vc.credential_type)
    if VC_TYPE not in vc.types or len(vc.types) != 2:
        return Verdict.reject("claim-shape", "types")
    problem = claim_shape_error(vc.credential_type, vc.claims)
    if problem or vc.subject == vc.issuer:
        return Verdict.reject("claim-shape", problem or "self-issued")
    if max_age is not None and now is not None:
        if now - parse_iso(vc.issuance_date) > max_age:
            return Verdict.reject("expired", vc.issuance_date)
    return Verdict.accept(vc.claims)


@dataclass(frozen=True)
class ClaimPolicy:
    """Rule set deciding whether verified claims earn trust.

    Free-text claims are matched case-insensitively against the keyword rules;
    every ``require_keywords`` phrase must occur in some text value and no
    ``deny_keywords`` phrase may occur in any.
    """

    required_fields: tuple[str, ...] = ()
    allowed_values: dict[str, tuple[Any, ...]] = field(default_factory=dict)
    require_keywords: tuple[str, ...] = ()
    deny_keywords: tuple[str, ...] = ()

    def to_json(self) -> dict[str, Any]:
        return {
            "required_fields": list(self.required_fields),
            "allowed_values": {k: list(v) for k, v in self.allowed_values.items()},
            "require_keywords": list(self.require_keywords),
            "deny_keywords": list(self.deny_keywords),
        }

    @classmethod
    def from_json(cls, data: dict[str, Any]) -> ClaimPolicy:
        return cls(
            tuple(data.get("required_fields", ())),
            {k: tuple(v) for k, v in data.get("allowed_values", {}).items()},
            tuple(data.get("require_keywords", ())),
            tuple(data.get("deny_keywords", ())),
        )


PERMISSIVE = ClaimPolicy()


def get_claim(claims: dict[str, Any], path: str) -> tuple[bool, Any]:
    node: Any = claims
    for part in path.split("."):
        if not isinstance(node, dict) or part not in node:
            return False, None
        node = node[part]
    return True, node


def _texts(value: Any) -> Iterable[str]:
    if isinstance(value, str):
        yield value
    elif isinstance(value, list):
        for v in value:
            yield from _texts(v)
    elif isinstance(value, dict):
        for v in value.values():
            yield from _texts(v)


def evaluate_claims(claims: dict[str, Any], policy: ClaimPolicy) -> Verdict:
    for name in policy.required_fields:
        if not get_claim(claims, name)[0]:
            return Verdict.reject("missing-field", name)
    for name, allowed in policy.allowed_values.items():
        present, value = get_claim(claims, name)
        if not present:
            continue
        values = value if isinstance(value, list) else [value]
        for v in values:
            if not any(v == a and type(v) is type(a) for a in allowed):
                return Verdict.reject("value-not-allowed", name)
    text = [t.lower() for t in _texts(claims)]
    for phrase in policy.deny_keywords:
        if any(phrase.lower() in t for t in text):
            return Verdict.reject("keyword-denied", phrase)
    for phrase in policy.require_keywords:
        if not any(phrase.lower() in t for t in text):
            return Verdict.reject("keyword-missing", phrase)
    return Verdict.accept(claims)
