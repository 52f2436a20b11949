"""Small fixed worlds shared by the unit tests."""

import copy
import random
from dataclasses import dataclass

from didfabric.credentials import BASIC, RICH, TrustRegistry, issue_credential
from didfabric.crypto import KeyPair, canonicalize, generate_keypair, sign_detached
from didfabric.did import Did, ResolverConfig, new_orchestrator_document, new_self_certified_document
from didfabric.ledger import Ledger

RVC_CLAIMS = {"role": "travel-booking", "capabilities": ["quote", "book"]}


@dataclass
class World:
    ledger: Ledger
    orch: KeyPair
    orch_did: Did
    issuer: KeyPair
    issuer_did: Did
    agent: KeyPair
    agent_did: Did
    other: KeyPair
    other_did: Did
    resolver: ResolverConfig
    registry: TrustRegistry

    def bvc(self, subject=None, **kw):
        return issue_credential(self.orch, self.orch_did, subject or self.agent_did, BASIC, {"agent": True}, **kw)

    def rvc(self, subject=None, claims=None, **kw):
        return issue_credential(self.issuer, self.issuer_did, subject or self.agent_did, RICH, claims or RVC_CLAIMS, **kw)


def register(ledger, seed):
    kp = generate_keypair(seed)
    did, doc = new_self_certified_document(kp)
    ledger.register_did(doc, sign_detached(canonicalize(doc.to_json()), kp))
    return kp, did


def world(tag=0) -> World:
    ledger = Ledger()
    orch = generate_keypair(bytes([tag, 1]) * 16)
    orch_did, orch_doc = new_orchestrator_document(orch)
    issuer, issuer_did = register(ledger, bytes([tag, 2]) * 16)
    agent, agent_did = register(ledger, bytes([tag, 3]) * 16)
    other, other_did = register(ledger, bytes([tag, 4]) * 16)
    registry = TrustRegistry(scope="intra")
    registry.trust(orch_did, [BASIC, RICH], "orchestrator")
    registry.trust(issuer_did, [RICH], "issuer")
    resolver = ResolverConfig(local_documents={orch_did: orch_doc}, ledger=ledger)
    return World(ledger, orch, orch_did, issuer, issuer_did, agent, agent_did, other, other_did, resolver, registry)


def _leaves(node, path=()):
    if isinstance(node, dict):
        for k, v in node.items():
            yield from _leaves(v, path + (k,))
    elif isinstance(node, list):
        for i, v in enumerate(node):
            yield from _leaves(v, path + (i,))
    else:
        yield path, node


def mutate_once(document, rng: random.Random):
    """Return a deep copy of ``document`` with exactly one leaf value changed."""
    doc = copy.deepcopy(document)
    path, value = rng.choice(list(_leaves(doc)))
    if isinstance(value, bool):
        new = not value
    elif isinstance(value, int):
        new = value + rng.choice([-1, 1])
    elif isinstance(value, str) and value:
        i = rng.randrange(len(value))
        choices = [c for c in "AaZz09-_.:" if c != value[i]]
        new = value[:i] + rng.choice(choices) + value[i + 1:]
    else:
        new = "x"
    target = doc
    for p in path[:-1]:
        target = target[p]
    target[path[-1]] = new
    return doc, path
