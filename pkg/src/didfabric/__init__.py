"""Decentralized identities and verifiable credentials for autonomous agents.

Agents prove DID ownership, exchange third-party credentials, and reach mutual
authentication through deterministic protocol state machines.
"""

__version__ = "0.1.0"
