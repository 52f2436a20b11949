"""Security-domain deployment: orchestrator, identity issuer and worker agents.

All agent seeds are derived from the domain's ``rng_seed``, and all timestamps
come from a logical clock, so a deployment is reproducible byte for byte.
"""

from __future__ import annotations

import hashlib
import hmac
import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .agent import Agent, SessionResult
from .clock import LogicalClock
from .credentials import BASIC, RICH, ClaimPolicy, TrustRegistry, issue_credential
from .crypto import KeyPair, canonicalize, generate_keypair, sign_detached
from .did import Did, DidDocument, ResolverConfig, document_for_key, new_orchestrator_document, new_self_certified_document, parse_did
from .errors import ConfigError
from .presentation import InputDescriptor, PresentationDefinition
from .protocol.messages import ATTESTATION, MUTUAL_AUTH, CredentialManifest, OutputDescriptor
from .transport import Transport
from .wallet import Wallet, add_credential, rotate_key, save

ORCHESTRATOR = "orchestrator"
IDENTITY_ISSUER = "identity_issuer"
WORKER = "worker"

DEFAULT_RVC_CLAIMS = {
    "role": "travel-booking",
    "capabilities": ["quote", "book"],
    "description": "This agent is authorized to request price quotes and to book travel for its domain.",
}

# what each role demands of its peer, per protocol
PD_BASIC = PresentationDefinition("agent-bvc", (InputDescriptor("basic", BASIC, ("agent",)),))
PD_ISSUER = PresentationDefinition("issuer-rvc", (InputDescriptor("issuer", RICH, ("role",)),))
PD_PEER = PresentationDefinition("peer-rvc", (InputDescriptor("rich", RICH, ("role",)),))

ISSUANCE_POLICY = ClaimPolicy(required_fields=("agent",), allowed_values={"agent": (True,)})
ISSUER_PEER_POLICY = ClaimPolicy(required_fields=("role",), allowed_values={"role": ("identity-issuer",)})
CROSS_POLICY = ClaimPolicy(required_fields=("role",))


@dataclass
class DomainConfig:
    domain_name: str
    rng_seed: bytes
    worker_count: int = 1
    issuer_rvc_claims: dict[str, Any] = field(default_factory=lambda: dict(DEFAULT_RVC_CLAIMS))
    cross_domain_trusted_issuers: list[Did] = field(default_factory=list)
    transport_binding: str = "inproc"
    port: int = 0

    def validate(self) -> None:
        if not self.domain_name:
            raise ConfigError("domain_name must be non-empty")
        if len(self.rng_seed) != 32:
            raise ConfigError("rng_seed must be 32 octets")
        if self.worker_count < 1:
            raise ConfigError("worker_count must be at least 1")
        if self.transport_binding not in ("inproc", "http"):
            raise ConfigError(f"unknown transport binding {self.transport_binding!r}")

    def seed_for(self, label: str) -> bytes:
        return hmac.new(self.rng_seed, f"{self.domain_name}/{label}".encode(), hashlib.sha256).digest()

    def issuer_did(self) -> Did:
        """The issuer DID this config will deploy, computable before deployment."""
        return new_self_certified_document(generate_keypair(self.seed_for(IDENTITY_ISSUER)))[0]

    def to_json(self) -> dict[str, Any]:
        return {
            "domain_name": self.domain_name,
            "rng_seed": self.rng_seed.hex(),
            "worker_count": self.worker_count,
            "issuer_rvc_claims": self.issuer_rvc_claims,
            "cross_domain_trusted_issuers": [str(d) for d in self.cross_domain_trusted_issuers],
            "transport_binding": self.transport_binding,
            "port": self.port,
        }

    @classmethod
    def from_json(cls, data: dict[str, Any]) -> DomainConfig:
        try:
            config = cls(
                data["domain_name"],
                bytes.fromhex(data["rng_seed"]),
                int(data.get("worker_count", 1)),
                dict(data.get("issuer_rvc_claims") or DEFAULT_RVC_CLAIMS),
                [parse_did(d) for d in data.get("cross_domain_trusted_issuers", [])],
                data.get("transport_binding", "inproc"),
                int(data.get("port", 0)),
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigError(f"invalid domain config: {exc}") from exc
        config.validate()
        return config

    @classmethod
    def load(cls, path: str | Path) -> DomainConfig:
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class AgentHandle:
    name: str
    did: Did
    role: str
    wallet: Wallet
    endpoint: str | None = None


@dataclass
class Domain:
    config: DomainConfig
    ledger: Any
    orchestrator: AgentHandle
    issuer: AgentHandle
    workers: list[AgentHandle]
    orchestrator_document: DidDocument
    manifest: CredentialManifest
    clock: LogicalClock
    session_entropy: bytes | None = None
    _incarnations: Any = field(default_factory=itertools.count, repr=False)

    @property
    def agents(self) -> list[AgentHandle]:
        return [self.orchestrator, self.issuer, *self.workers]

    def resolver(self, handle: AgentHandle) -> ResolverConfig:
        return handle.wallet.resolver(ledger=self.ledger)

    def provisioning_manifest(self) -> dict[str, Any]:
        return {
            "domain": self.config.domain_name,
            "orchestrator": str(self.orchestrator.did),
            "identity_issuer": str(self.issuer.did),
            "workers": [str(w.did) for w in self.workers],
            "agents": [
                {"name": a.name, "role": a.role, "did": str(a.did), "on_ledger": not a.did.is_local}
                for a in self.agents
            ],
            "manifest_id": self.manifest.manifest_id,
        }

    def session_seed(self, handle: AgentHandle) -> bytes | None:
        """Per-incarnation seed for an agent, or None for fresh randomness."""
        if self.session_entropy is None:
            return None
        label = f"{handle.name}/{next(self._incarnations)}".encode()
        return hmac.new(self.session_entropy, label, hashlib.sha256).digest()

    def make_agent(self, handle: AgentHandle, transport: Transport, endpoint: str | None = None) -> Agent:
        if endpoint is None:
            endpoint = (
                "http://127.0.0.1:0"
                if self.config.transport_binding == "http"
                else f"inproc://{self.config.domain_name}/{handle.name}"
            )
        if handle.role == IDENTITY_ISSUER:
            definitions = {ATTESTATION: PD_BASIC, MUTUAL_AUTH: PD_PEER}
            policies = {MUTUAL_AUTH: CROSS_POLICY}
            manifest = self.manifest
        else:
            definitions = {ATTESTATION: PD_ISSUER, MUTUAL_AUTH: PD_PEER}
            policies = {ATTESTATION: ISSUER_PEER_POLICY, MUTUAL_AUTH: CROSS_POLICY}
            manifest = None
        return Agent(
            handle.name,
            handle.wallet,
            self.resolver(handle),
            transport,
            endpoint,
            definitions=definitions,
            policies=policies,
            manifest=manifest,
            issuance_policy=ISSUANCE_POLICY,
            session_seed=self.session_seed(handle),
        )


def _register(ledger, keypair: KeyPair) -> tuple[Did, DidDocument]:
    did, doc = new_self_certified_document(keypair)
    ledger.register_did(doc, sign_detached(canonicalize(doc.to_json()), keypair))
    return did, doc


def deploy_domain(
    config: DomainConfig,
    ledger,
    *,
    clock: LogicalClock | None = None,
    wallet_root: str | Path | None = None,
    session_entropy: bytes | None = None,
) -> Domain:
    config.validate()
    clock = clock or LogicalClock()
    name = config.domain_name

    orch_key = generate_keypair(config.seed_for(ORCHESTRATOR))
    orch_did, orch_doc = new_orchestrator_document(orch_key)
    local = {orch_did: orch_doc}

    intra = TrustRegistry(scope="intra")
    cross = TrustRegistry(scope="cross")
    for foreign in config.cross_domain_trusted_issuers:
        cross.trust(foreign, [RICH], "foreign identity issuer")

    def wallet_for(did: Did, key: KeyPair) -> Wallet:
        return Wallet(did, key, [], dict(local), TrustRegistry(dict(intra.trusted_issuers), "intra"),
                      TrustRegistry(dict(cross.trusted_issuers), "cross"))

    issuer_key = generate_keypair(config.seed_for(IDENTITY_ISSUER))
    issuer_did, _ = _register(ledger, issuer_key)
    intra.trust(orch_did, [BASIC, RICH], f"{name} orchestrator")
    intra.trust(issuer_did, [RICH], f"{name} identity issuer")

    orchestrator = AgentHandle("orchestrator", orch_did, ORCHESTRATOR, wallet_for(orch_did, orch_key))
    issuer = AgentHandle("identity-issuer", issuer_did, IDENTITY_ISSUER, wallet_for(issuer_did, issuer_key))
    issuer_claims = {
        "role": "identity-issuer",
        "authorizations": [f"issue:{RICH}"],
        "description": f"Designated identity issuer of security domain {name}.",
    }
    issuer_rvc = issue_credential(orch_key, orch_did, issuer_did, RICH, issuer_claims, issued_at=clock.tick())
    add_credential(issuer.wallet, issuer_rvc, issuer.wallet.resolver(ledger=ledger))

    workers = []
    for i in range(config.worker_count):
        key = generate_keypair(config.seed_for(f"{WORKER}-{i + 1}"))
        did, _ = _register(ledger, key)
        handle = AgentHandle(f"worker-{i + 1}", did, WORKER, wallet_for(did, key))
        bvc = issue_credential(orch_key, orch_did, did, BASIC, {"agent": True}, issued_at=clock.tick())
        add_credential(handle.wallet, bvc, handle.wallet.resolver(ledger=ledger))
        workers.append(handle)

    manifest = CredentialManifest(
        f"{name}/rvc-manifest",
        issuer_did,
        (OutputDescriptor(RICH, dict(config.issuer_rvc_claims)),),
        PD_BASIC,
    )
    domain = Domain(config, ledger, orchestrator, issuer, workers, orch_doc, manifest, clock, session_entropy)
    if wallet_root is not None:
        for handle in domain.agents:
            save(handle.wallet, Path(wallet_root) / name / handle.name)
    return domain


def rotate_agent_key(ledger, wallet: Wallet, new_seed: bytes, key_id: str | None = None):
    """Publish a new authentication key for the wallet's DID, signed by the current one."""
    old = wallet.keypair
    key_id = key_id or f"key-{len(ledger.history(wallet.agent_did)) + 1}"
    new = generate_keypair(new_seed, key_id)
    doc = document_for_key(wallet.agent_did, new)
    receipt = ledger.update_did_doc(wallet.agent_did, doc, sign_detached(canonicalize(doc.to_json()), old))
    rotate_key(wallet, new_seed, key_id)
    return receipt


def provision_rvc(domain: Domain, worker: AgentHandle) -> None:
    """Issue a worker its rVC directly, standing in for an earlier attestation."""
    issuer = domain.issuer
    vc = issue_credential(
        issuer.wallet.keypair, issuer.did, worker.did, RICH, dict(domain.config.issuer_rvc_claims),
        issued_at=domain.clock.tick(),
    )
    add_credential(worker.wallet, vc, domain.resolver(worker))


def run_attestation(
    domain: Domain,
    worker: AgentHandle,
    *,
    transport: Transport | None = None,
    timeout: float = 10.0,
    trace: list | None = None,
) -> SessionResult:
    """Mutual authentication then rVC issuance between ``worker`` and the domain issuer.

    When ``trace`` is given it receives both agents' trace records, requester first.
    """
    transport = transport or Transport()
    issuer = domain.make_agent(domain.issuer, transport)
    requester = domain.make_agent(worker, transport)
    with issuer, requester:
        thread_id = requester.initiate(domain.issuer.did, issuer.endpoint, ATTESTATION)
        result = requester.wait(thread_id, timeout)
        if result.ok:
            # the issuer is done once it has sent the fulfilment
            issuer.wait(thread_id, timeout)
    if trace is not None:
        trace.extend(requester.trace)
        trace.extend(issuer.trace)
    return result
