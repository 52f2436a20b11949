"""``fabric`` command line.

Exit codes: 0 success, 1 scenario or verification failure, 2 setup error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import threading
from pathlib import Path
from typing import Any

from .credentials import TrustRegistry, VerifiableCredential, verify_credential
from .crypto import generate_keypair
from .did import DidDocument, ResolverConfig, new_self_certified_document, parse_did
from .domain import DomainConfig, deploy_domain
from .errors import FabricError, LedgerError, MalformedDid, TransportError, Unresolvable
from .harness import REPORT_SCHEMA, SCENARIOS, Scenario, run_scenario
from .ledger import Ledger, LedgerServer, RemoteLedger
from .wallet import save

DEFAULT_LEDGER = "http://127.0.0.1:8700"

OK, FAILURE, SETUP = 0, 1, 2


class SetupFailure(Exception):
    pass


def _emit(data: Any) -> None:
    print(json.dumps(data, indent=2, sort_keys=True))


def _hex_seed(text: str) -> bytes:
    try:
        seed = bytes.fromhex(text)
    except ValueError as exc:
        raise SetupFailure(f"seed must be hex: {exc}") from exc
    if len(seed) != 32:
        raise SetupFailure("seed must be 32 bytes (64 hex digits)")
    return seed


def _read_json(path: str) -> Any:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise SetupFailure(f"cannot read {path}: {exc}") from exc


def cmd_keygen(args) -> int:
    kp = generate_keypair(_hex_seed(args.seed), args.key_id)
    did, doc = new_self_certified_document(kp)
    _emit({"did": str(did), "public_key": kp.public_key.hex(), "document": doc.to_json()})
    return OK


def cmd_ledger_serve(args) -> int:
    ledger = Ledger(journal=args.journal)
    try:
        server = LedgerServer(ledger, args.host, args.port)
    except FabricError as exc:
        raise SetupFailure(str(exc)) from exc
    print(f"ledger listening on {server.url} ({len(ledger.entries)} entries)", flush=True)
    stop = threading.Event()
    try:
        stop.wait()
    except KeyboardInterrupt:
        pass
    finally:
        server.close()
    return OK


def cmd_domain_deploy(args) -> int:
    try:
        config = DomainConfig.load(args.config)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise SetupFailure(f"cannot load config: {exc}") from exc
    if args.ledger:
        ledger: Any = RemoteLedger(args.ledger)
    else:
        ledger = Ledger(journal=args.journal)
    domain = deploy_domain(config, ledger, wallet_root=args.out)
    manifest = domain.provisioning_manifest()
    if args.out:
        root = Path(args.out) / config.domain_name
        (root / "provisioning.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        (root / "orchestrator-did.json").write_text(json.dumps(domain.orchestrator_document.to_json(), indent=2) + "\n")
    _emit(manifest)
    return OK


def cmd_run(args) -> int:
    scenario = Scenario(
        args.scenario,
        runs=args.runs,
        seed=_hex_seed(args.seed),
        transport_binding=args.transport,
        parallel=args.parallel,
        timeout=args.timeout,
    )
    report = run_scenario(scenario, args.report)
    agg = report.aggregates()
    summary = {"scenario": scenario.name, "transport": scenario.transport_binding, **agg}
    _emit(summary)
    if scenario.attack:
        return OK if agg["defense_rate"] == 1.0 else FAILURE
    return OK if agg["completion_rate"] == 1.0 else FAILURE


def _load_registry(path: str, scope: str) -> TrustRegistry:
    data = _read_json(path)
    if isinstance(data, dict) and scope in data and "trusted_issuers" not in data:
        data = data[scope]
    try:
        return TrustRegistry.from_json(data)
    except (KeyError, TypeError, ValueError, FabricError) as exc:
        raise SetupFailure(f"invalid trust registry: {exc}") from exc


def cmd_vc_verify(args) -> int:
    try:
        vc = VerifiableCredential.from_json(_read_json(args.vc))
        local = {}
        for path in args.local_doc or ():
            doc = DidDocument.from_json(_read_json(path))
            local[doc.id] = doc
    except FabricError as exc:
        raise SetupFailure(f"invalid input: {exc}") from exc
    registry = _load_registry(args.registry, args.scope)
    resolver = ResolverConfig(args.resolver, local)
    verdict = verify_credential(vc, resolver, registry)
    _emit({"ok": verdict.ok, "reason": verdict.reason, "detail": verdict.detail, "claims": verdict.claims})
    return OK if verdict else FAILURE


def cmd_resolve(args) -> int:
    try:
        did = parse_did(args.did)
    except MalformedDid as exc:
        raise SetupFailure(str(exc)) from exc
    try:
        doc = RemoteLedger(args.ledger).resolve(did)
    except (Unresolvable, LedgerError) as exc:
        print(f"unresolvable: {exc}", file=sys.stderr)
        return FAILURE
    _emit(doc.to_json())
    return OK


def cmd_schema(args) -> int:
    _emit(REPORT_SCHEMA)
    return OK


def cmd_modelcheck(args) -> int:
    from .protocol.modelcheck import default_model

    results = default_model(args.depth)
    _emit(
        {
            name: {
                "depth": r.depth,
                "states": r.states,
                "transitions": r.transitions,
                "violations": r.violations,
                "honest_completion_reachable": r.honest_completion_reachable,
                "elapsed_s": round(r.elapsed_s, 3),
            }
            for name, r in results.items()
        }
    )
    return OK if all(r.ok for r in results.values()) else FAILURE


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fabric", description="DID/VC identity fabric for agents")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keygen", help="derive an Ed25519 key and its self-certifying DID")
    p.add_argument("--seed", required=True, help="32-byte seed as hex")
    p.add_argument("--key-id", default="key-1")
    p.set_defaults(func=cmd_keygen)

    ledger = sub.add_parser("ledger", help="ledger operations").add_subparsers(dest="ledger_command", required=True)
    p = ledger.add_parser("serve", help="serve a ledger over HTTP")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8700)
    p.add_argument("--journal", help="NDJSON journal to load and append to")
    p.set_defaults(func=cmd_ledger_serve)

    domain = sub.add_parser("domain", help="domain operations").add_subparsers(dest="domain_command", required=True)
    p = domain.add_parser("deploy", help="deploy a security domain from a config file")
    p.add_argument("--config", required=True)
    where = p.add_mutually_exclusive_group()
    where.add_argument("--ledger", help="ledger URL")
    where.add_argument("--journal", help="local ledger journal")
    p.add_argument("--out", help="directory for wallets and the provisioning manifest")
    p.set_defaults(func=cmd_domain_deploy)

    p = sub.add_parser("run", help="run a scenario and report metrics")
    p.add_argument("--scenario", required=True, choices=SCENARIOS)
    p.add_argument("--runs", type=int)
    p.add_argument("--seed", default="00" * 32)
    p.add_argument("--transport", choices=("inproc", "http"), default="inproc")
    p.add_argument("--report", help="write the JSON report here")
    p.add_argument("--parallel", type=int, default=1, help="concurrent runs")
    p.add_argument("--timeout", type=float, default=10.0)
    p.set_defaults(func=cmd_run)

    vc = sub.add_parser("vc", help="credential operations").add_subparsers(dest="vc_command", required=True)
    p = vc.add_parser("verify", help="verify a credential")
    p.add_argument("--vc", required=True)
    p.add_argument("--registry", required=True, help="trust registry JSON, or a wallet registry.json")
    p.add_argument("--scope", choices=("intra", "cross"), default="intra")
    p.add_argument("--resolver", default=os.environ.get("FABRIC_LEDGER", DEFAULT_LEDGER), help="ledger URL")
    p.add_argument("--local-doc", action="append", help="off-ledger DID document (repeatable)")
    p.set_defaults(func=cmd_vc_verify)

    p = sub.add_parser("resolve", help="resolve a DID against a ledger")
    p.add_argument("did")
    p.add_argument("--ledger", default=os.environ.get("FABRIC_LEDGER", DEFAULT_LEDGER))
    p.set_defaults(func=cmd_resolve)

    p = sub.add_parser("schema", help="print the run report JSON schema")
    p.set_defaults(func=cmd_schema)

    p = sub.add_parser("modelcheck", help="exhaustively explore the protocols against a network attacker")
    p.add_argument("--depth", type=int, default=12)
    p.set_defaults(func=cmd_modelcheck)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except SetupFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return SETUP
    except TransportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return SETUP
    except FabricError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return SETUP


if __name__ == "__main__":
    sys.exit(main())
