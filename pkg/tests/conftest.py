import pytest

from didfabric.domain import DomainConfig, deploy_domain
from didfabric.ledger import Ledger


def pair_configs(seed_a=b"\x0a" * 32, seed_b=b"\x0b" * 32, **kw):
    a = DomainConfig("domain-a", seed_a, **kw)
    b = DomainConfig("domain-b", seed_b, **kw)
    a.cross_domain_trusted_issuers = [b.issuer_did()]
    b.cross_domain_trusted_issuers = [a.issuer_did()]
    return a, b


@pytest.fixture
def ledger():
    return Ledger()


@pytest.fixture
def domains(ledger):
    cfg_a, cfg_b = pair_configs()
    dom_a = deploy_domain(cfg_a, ledger, session_entropy=b"a")
    dom_b = deploy_domain(cfg_b, ledger, session_entropy=b"b")
    return dom_a, dom_b


# one PASS/FAIL line per acceptance criterion

_criteria: dict[str, list[bool]] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        name = report.nodeid.split("::")[1].split("[")[0]
        _criteria.setdefault(name, []).append(report.outcome == "passed")


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_criteria, key=lambda n: int(n.split("_")[2])):
        verdict = "PASS" if all(_criteria[name]) else "FAIL"
        _, _, number, label = name.split("_", 3)
        terminalreporter.write_line(f"{verdict}  criterion {number}: {label.replace('_', ' ')}")
