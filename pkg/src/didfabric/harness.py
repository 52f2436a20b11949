"""Scenario runner: honest and adversarial runs over freshly deployed domains.

Every run gets its own ledger, domains and transport, all derived from the
scenario seed and the run index, so runs are independent and reproducible.
"""

from __future__ import annotations

import copy
import hashlib
import hmac
import json
import statistics
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable

import jsonschema

from . import __version__
from .agent import Agent, SessionResult, cross_domain_auth
from .credentials import BASIC, PERMISSIVE, RICH, verify_credential
from .crypto import canonicalize, sign_detached
from .domain import (
    Domain,
    DomainConfig,
    deploy_domain,
    provision_rvc,
    rotate_agent_key,
    run_attestation,
)
from .errors import FabricError, ScenarioSetupError, SchemaMismatch
from .ledger import Ledger, LedgerServer, RemoteLedger
from .presentation import InputDescriptor, PresentationDefinition
from .protocol.attestation import application_payload
from .protocol.messages import (
    AUTH_COMPLETE,
    AUTH_RESPONSE,
    CRED_APPLICATION,
    CRED_FULFILLMENT,
    MUTUAL_AUTH,
    ProtocolMessage,
)
from .transport import Transport

HONEST = ("intra-attest-A", "intra-attest-B", "cross-auth", "full")
ATTACKS = ("tamper", "replay", "untrusted-issuer", "downgrade", "rotate-mid-session", "bvc-only")
SCENARIOS = HONEST + tuple(f"adversarial:{a}" for a in ATTACKS)

EXPECTED_REASONS = {
    "tamper": {"bad-holder-proof"},
    "replay": {"bad-challenge", "replayed-challenge"},
    "untrusted-issuer": {"vc-rejected(untrusted-issuer)"},
    "downgrade": {"not-authenticated"},
    "rotate-mid-session": {"bad-holder-proof"},
    "bvc-only": {"vc-rejected(unresolvable-issuer)"},
}

NOT_REPRODUCED = (
    "LLM-dependent metrics (token counts, LLM calls, per-model completion rates) are not measured. "
    "Protocol messages, bytes on the wire and ledger reads are reported as their deterministic analogues."
)

PD_PEER_BVC = PresentationDefinition("peer-bvc", (InputDescriptor("basic", BASIC, ("agent",)),))


def default_runs(name: str) -> int:
    return 10 if name in ("cross-auth", "full") or name.startswith("adversarial:") else 100


@dataclass
class Scenario:
    name: str
    runs: int | None = None
    seed: bytes = bytes(32)
    transport_binding: str = "inproc"
    parallel: int = 1
    timeout: float = 10.0

    def __post_init__(self):
        if self.name not in SCENARIOS:
            raise ScenarioSetupError(f"unknown scenario {self.name!r}; expected one of {', '.join(SCENARIOS)}")
        if self.runs is None:
            self.runs = default_runs(self.name)
        if self.runs < 1:
            raise ScenarioSetupError("runs must be at least 1")
        if self.transport_binding not in ("inproc", "http"):
            raise ScenarioSetupError(f"unknown transport {self.transport_binding!r}")
        if self.parallel < 1:
            raise ScenarioSetupError("parallel must be at least 1")

    @property
    def attack(self) -> str | None:
        return self.name.split(":", 1)[1] if self.name.startswith("adversarial:") else None

    def run_seed(self, index: int) -> bytes:
        return hashlib.sha256(self.seed + index.to_bytes(4, "big")).digest()


@dataclass
class RunRecord:
    index: int
    completed: bool
    failure_reason: str | None
    defended: bool | None
    wall_time_ms: float
    message_count: int
    bytes_on_wire: int
    ledger_reads: int
    message_kinds: list[str] = field(default_factory=list)
    latencies_ms: list[float] = field(default_factory=list)


@dataclass
class RunReport:
    scenario: str
    transport_binding: str
    seed: str
    runs: list[RunRecord]
    metadata: dict[str, Any] = field(default_factory=dict)

    @property
    def completion_rate(self) -> float:
        return sum(r.completed for r in self.runs) / len(self.runs)

    @property
    def defense_rate(self) -> float | None:
        verdicts = [r.defended for r in self.runs if r.defended is not None]
        return sum(verdicts) / len(verdicts) if verdicts else None

    def aggregates(self) -> dict[str, Any]:
        times = [r.wall_time_ms for r in self.runs]
        return {
            "runs": len(self.runs),
            "completion_rate": self.completion_rate,
            "defense_rate": self.defense_rate,
            "mean_time_ms": statistics.fmean(times),
            "var_time_ms": statistics.pvariance(times),
            "mean_messages": statistics.fmean(r.message_count for r in self.runs),
            "mean_bytes": statistics.fmean(r.bytes_on_wire for r in self.runs),
            "mean_ledger_reads": statistics.fmean(r.ledger_reads for r in self.runs),
            "failure_reasons": dict(sorted(Counter(r.failure_reason for r in self.runs if r.failure_reason).items())),
        }

    def to_json(self) -> dict[str, Any]:
        return {
            "scenario": self.scenario,
            "transport_binding": self.transport_binding,
            "seed": self.seed,
            "metadata": self.metadata,
            "aggregates": self.aggregates(),
            "runs": [asdict(r) for r in self.runs],
        }

    @classmethod
    def from_json(cls, data: dict[str, Any]) -> RunReport:
        validate_report(data)
        return cls(
            data["scenario"],
            data["transport_binding"],
            data["seed"],
            [RunRecord(**r) for r in data["runs"]],
            data.get("metadata", {}),
        )

    def write(self, path: str | Path) -> None:
        data = self.to_json()
        validate_report(data)
        Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


_number = {"type": "number", "minimum": 0}
_count = {"type": "integer", "minimum": 0}

REPORT_SCHEMA: dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "didfabric run report",
    "type": "object",
    "required": ["scenario", "transport_binding", "seed", "metadata", "aggregates", "runs"],
    "additionalProperties": False,
    "properties": {
        "scenario": {"enum": list(SCENARIOS)},
        "transport_binding": {"enum": ["inproc", "http"]},
        "seed": {"type": "string", "pattern": "^[0-9a-f]{64}$"},
        "metadata": {"type": "object"},
        "aggregates": {
            "type": "object",
            "required": [
                "runs", "completion_rate", "defense_rate", "mean_time_ms", "var_time_ms",
                "mean_messages", "mean_bytes", "mean_ledger_reads", "failure_reasons",
            ],
            "properties": {
                "runs": {"type": "integer", "minimum": 1},
                "completion_rate": {"type": "number", "minimum": 0, "maximum": 1},
                "defense_rate": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
                "mean_time_ms": _number,
                "var_time_ms": _number,
                "mean_messages": _number,
                "mean_bytes": _number,
                "mean_ledger_reads": _number,
                "failure_reasons": {"type": "object", "additionalProperties": _count},
            },
        },
        "runs": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": [
                    "index", "completed", "failure_reason", "defended", "wall_time_ms",
                    "message_count", "bytes_on_wire", "ledger_reads", "message_kinds", "latencies_ms",
                ],
                "additionalProperties": False,
                "properties": {
                    "index": _count,
                    "completed": {"type": "boolean"},
                    "failure_reason": {"type": ["string", "null"]},
                    "defended": {"type": ["boolean", "null"]},
                    "wall_time_ms": _number,
                    "message_count": _count,
                    "bytes_on_wire": _count,
                    "ledger_reads": _count,
                    "message_kinds": {"type": "array", "items": {"type": "string"}},
                    "latencies_ms": {"type": "array", "items": _number},
                },
            },
        },
    },
}


def validate_report(data: Any) -> None:
    try:
        jsonschema.validate(data, REPORT_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise SchemaMismatch(f"report does not match schema: {exc.message}") from exc


WALL_CLOCK_KEYS = ("mean_time_ms", "var_time_ms")


def compare_reports(a: RunReport | dict, b: RunReport | dict, *, include_timing: bool = False) -> dict[str, Any]:
    """Aggregates that differ, as ``{key: {"a": .., "b": ..}}``; wall-clock keys are skipped by default."""
    da = a.to_json() if isinstance(a, RunReport) else a
    db = b.to_json() if isinstance(b, RunReport) else b
    validate_report(da)
    validate_report(db)
    if da["scenario"] != db["scenario"]:
        raise SchemaMismatch(f"cannot compare {da['scenario']!r} with {db['scenario']!r}")
    diff = {}
    for key, va in da["aggregates"].items():
        if key in WALL_CLOCK_KEYS and not include_timing:
            continue
        vb = db["aggregates"].get(key)
        if va != vb:
            diff[key] = {"a": va, "b": vb}
    return diff


# -- per-run environment ---------------------------------------------------


class RunEnv:
    """Ledger, two domains and a transport for a single run."""

    def __init__(self, run_seed: bytes, binding: str, timeout: float):
        self.run_seed = run_seed
        self.binding = binding
        self.timeout = timeout
        self.ledger = Ledger()
        self.server: LedgerServer | None = None
        client: Any = self.ledger
        if binding == "http":
            self.server = LedgerServer(self.ledger, "127.0.0.1", 0)
            client = RemoteLedger(self.server.url)
        self.client = client
        self.interceptor: Callable | None = None
        self.recorded: dict[str, ProtocolMessage] = {}
        self.transport = Transport(timeout=timeout, interceptor=self._intercept)
        cfg_a = DomainConfig("domain-a", _derive(run_seed, "a"), transport_binding=binding)
        cfg_b = DomainConfig("domain-b", _derive(run_seed, "b"), transport_binding=binding)
        cfg_a.cross_domain_trusted_issuers = [cfg_b.issuer_did()]
        cfg_b.cross_domain_trusted_issuers = [cfg_a.issuer_did()]
        self.configs = {"A": cfg_a, "B": cfg_b}
        self._domains: dict[str, Domain] = {}
        self._reads_mark = 0

    def _intercept(self, message: ProtocolMessage, endpoint: str):
        if self.interceptor is None:
            return [(message, endpoint)]
        return self.interceptor(message, endpoint)

    def domain(self, which: str) -> Domain:
        if which not in self._domains:
            self._domains[which] = deploy_domain(
                self.configs[which], self.client, session_entropy=_derive(self.run_seed, f"sessions/{which}")
            )
        return self._domains[which]

    def mark(self) -> None:
        """Start measuring: everything before this point is setup."""
        self._reads_mark = self.ledger.reads
        self.transport.log.clear()

    @property
    def ledger_reads(self) -> int:
        return self.ledger.reads - self._reads_mark

    def close(self) -> None:
        if self.server is not None:
            self.server.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _derive(seed: bytes, label: str) -> bytes:
    return hmac.new(seed, label.encode(), hashlib.sha256).digest()


@dataclass
class Outcome:
    completed: bool
    failure_reason: str | None
    defended: bool | None = None


def _holds_verified_rvc(domain: Domain, handle) -> bool:
    resolver = domain.resolver(handle)
    return any(
        vc.credential_type == RICH and verify_credential(vc, resolver, handle.wallet.registry)
        for vc in handle.wallet.credentials
    )


def _attest(env: RunEnv, which: str) -> Outcome:
    domain = env.domain(which)
    worker = domain.workers[0]
    result = run_attestation(domain, worker, transport=env.transport, timeout=env.timeout)
    ok = result.ok and _holds_verified_rvc(domain, worker)
    return Outcome(ok, None if ok else (result.reason or "missing-rvc"))


def _cross(env: RunEnv, configure: Callable[[Agent, Agent], None] | None = None) -> tuple[SessionResult, SessionResult]:
    dom_a, dom_b = env.domain("A"), env.domain("B")
    a = dom_a.make_agent(dom_a.workers[0], env.transport)
    b = dom_b.make_agent(dom_b.workers[0], env.transport)
    if configure:
        configure(a, b)
    with a, b:
        mine = cross_domain_auth(a, b.endpoint, env.timeout)
        theirs = b.wait(mine.thread_id, env.timeout) if mine.thread_id in b.sessions else mine
    return mine, theirs


def _provision_both(env: RunEnv) -> None:
    for which in ("A", "B"):
        domain = env.domain(which)
        provision_rvc(domain, domain.workers[0])


def _cross_outcome(mine: SessionResult, theirs: SessionResult) -> Outcome:
    ok = mine.ok and theirs.ok
    return Outcome(ok, None if ok else (mine.reason or theirs.reason))


def _defended(outcome: Outcome, attack: str, extra: bool = True) -> Outcome:
    outcome.defended = (not outcome.completed) and outcome.failure_reason in EXPECTED_REASONS[attack] and extra
    return outcome


def _tamper_vp(message: ProtocolMessage, index: int) -> ProtocolMessage:
    body = copy.deepcopy(message.body)
    vp = body["vp"]
    vc = vp["credentials"][0]
    mutation = index % 4
    if mutation == 0:
        vc["credential_subject"]["claims"]["role"] = "identity-issuer"
    elif mutation == 1:
        vc["credential_subject"]["claims"]["capabilities"] = ["quote", "book", "pay"]
    elif mutation == 2:
        vc["issuance_date"] = "2099-01-01T00:00:00Z"
    else:
        sig = vp["proof"]["jws"]
        vp["proof"]["jws"] = sig[:-2] + ("AA" if not sig.endswith("AA") else "BA")
    return ProtocolMessage(message.thread_id, message.sequence, message.kind, body)


def _scenario_run(scenario: Scenario, index: int) -> RunRecord:
    attack = scenario.attack
    with RunEnv(scenario.run_seed(index), scenario.transport_binding, scenario.timeout) as env:
        # setup that is not part of the measured protocol traffic
        if scenario.name in ("cross-auth",) or attack in ("tamper", "replay", "untrusted-issuer", "rotate-mid-session"):
            _provision_both(env)
        elif attack == "downgrade" or scenario.name in ("intra-attest-A", "full"):
            env.domain("A")
        if scenario.name in ("intra-attest-B", "full"):
            env.domain("B")
        if attack == "bvc-only":
            env.domain("A"), env.domain("B")
        if attack == "replay":
            def record(message, endpoint):
                if message.kind == AUTH_COMPLETE:
                    env.recorded.setdefault("complete", message)
                return [(message, endpoint)]

            env.interceptor = record
            first, _ = _cross(env)
            if not first.ok or "complete" not in env.recorded:
                raise ScenarioSetupError("replay needs a recorded honest session")
        env.mark()
        started = time.perf_counter()
        outcome = _ATTACKS[attack](env, index) if attack else _HONEST[scenario.name](env)
        wall = (time.perf_counter() - started) * 1000.0
        log = list(env.transport.log)
        return RunRecord(
            index=index,
            completed=outcome.completed,
            failure_reason=outcome.failure_reason,
            defended=outcome.defended,
            wall_time_ms=wall,
            message_count=len(log),
            bytes_on_wire=sum(r.bytes for r in log),
            ledger_reads=env.ledger_reads,
            message_kinds=[r.kind for r in log],
            latencies_ms=[r.latency_ms for r in log],
        )


def _honest_cross(env: RunEnv) -> Outcome:
    return _cross_outcome(*_cross(env))


def _full(env: RunEnv) -> Outcome:
    for which in ("A", "B"):
        outcome = _attest(env, which)
        if not outcome.completed:
            return outcome
    return _honest_cross(env)


_HONEST = {
    "intra-attest-A": lambda env: _attest(env, "A"),
    "intra-attest-B": lambda env: _attest(env, "B"),
    "cross-auth": _honest_cross,
    "full": _full,
}


def _attack_tamper(env: RunEnv, index: int) -> Outcome:
    def tamper(message, endpoint):
        if message.kind == AUTH_RESPONSE:
            message = _tamper_vp(message, index)
        return [(message, endpoint)]

    env.interceptor = tamper
    return _defended(_cross_outcome(*_cross(env)), "tamper")


def _attack_replay(env: RunEnv, index: int) -> Outcome:
    stale = env.recorded["complete"]

    def replay(message, endpoint):
        if message.kind == AUTH_COMPLETE:
            message = ProtocolMessage(message.thread_id, message.sequence, message.kind, stale.body)
        return [(message, endpoint)]

    env.interceptor = replay
    return _defended(_cross_outcome(*_cross(env)), "replay")


def _attack_untrusted(env: RunEnv, index: int) -> Outcome:
    foreign = env.domain("B").issuer.did

    def configure(a: Agent, b: Agent) -> None:
        a.wallet.cross_registry = a.wallet.cross_registry.without(foreign)

    return _defended(_cross_outcome(*_cross(env, configure)), "untrusted-issuer")


def _attack_downgrade(env: RunEnv, index: int) -> Outcome:
    domain = env.domain("A")
    worker = domain.workers[0]
    key = worker.wallet.keypair

    def downgrade(message, endpoint):
        # one-way authentication: the requester skips proving itself and applies straight away
        if message.kind != AUTH_COMPLETE:
            return [(message, endpoint)]
        mid = domain.manifest.manifest_id
        proof = sign_detached(canonicalize(application_payload(message.thread_id, mid)), key).compact_form
        forged = ProtocolMessage(message.thread_id, message.sequence, CRED_APPLICATION, {"manifest_id": mid, "proof": proof})
        return [(forged, endpoint)]

    env.interceptor = downgrade
    trace: list = []
    result = run_attestation(domain, worker, transport=env.transport, timeout=env.timeout, trace=trace)
    issued = any(r.kind == CRED_FULFILLMENT for r in env.transport.log)
    issuer_states = [t.state for t in trace if t.agent == domain.issuer.name]
    issuer_reason = issuer_states[-1]["reason"] if issuer_states else None
    has_rvc = any(vc.credential_type == RICH for vc in worker.wallet.credentials)
    outcome = Outcome(result.ok, issuer_reason or result.reason)
    return _defended(outcome, "downgrade", extra=not issued and not has_rvc)


def _attack_rotate(env: RunEnv, index: int) -> Outcome:
    wallet = env.domain("A").workers[0].wallet
    fired = []

    def rotate(message, endpoint):
        if message.kind == AUTH_RESPONSE and not fired:
            # the initiator's key is retired on the ledger while its session is in flight
            rotate_agent_key(env.client, wallet, _derive(wallet.keypair.seed, "rotated"))
            fired.append(True)
        return [(message, endpoint)]

    env.interceptor = rotate
    return _defended(_cross_outcome(*_cross(env)), "rotate-mid-session", extra=bool(fired))


def _attack_bvc_only(env: RunEnv, index: int) -> Outcome:
    def configure(a: Agent, b: Agent) -> None:
        for agent in (a, b):
            agent.definitions = {**agent.definitions, MUTUAL_AUTH: PD_PEER_BVC}
            agent.policies = {**agent.policies, MUTUAL_AUTH: PERMISSIVE}

    return _defended(_cross_outcome(*_cross(env, configure)), "bvc-only")


_ATTACKS = {
    "tamper": _attack_tamper,
    "replay": _attack_replay,
    "untrusted-issuer": _attack_untrusted,
    "downgrade": _attack_downgrade,
    "rotate-mid-session": _attack_rotate,
    "bvc-only": _attack_bvc_only,
}


def run_scenario(scenario: Scenario, report_path: str | Path | None = None) -> RunReport:
    indices = range(scenario.runs)
    try:
        if scenario.parallel > 1:
            with ThreadPoolExecutor(max_workers=scenario.parallel) as pool:
                records = list(pool.map(lambda i: _scenario_run(scenario, i), indices))
        else:
            records = [_scenario_run(scenario, i) for i in indices]
    except ScenarioSetupError:
        raise
    except FabricError as exc:
        raise ScenarioSetupError(f"{scenario.name}: {exc}") from exc
    report = RunReport(
        scenario.name,
        scenario.transport_binding,
        scenario.seed.hex(),
        records,
        {
            "generator": f"didfabric {__version__}",
            "not_reproduced": NOT_REPRODUCED,
            "expected_reasons": sorted(EXPECTED_REASONS[scenario.attack]) if scenario.attack else None,
            "parallel": scenario.parallel,
        },
    )
    if report_path is not None:
        report.write(report_path)
    return report


def attestation_trace(binding: str, seed: bytes = bytes(32)) -> list[dict[str, Any]]:
    """State trace of one full attestation, for comparing transport bindings."""
    with RunEnv(seed, binding, 10.0) as env:
        domain = env.domain("A")
        trace: list = []
        run_attestation(domain, domain.workers[0], transport=env.transport, trace=trace)
        return [t.to_json() for t in trace]
