"""Wire-level protocol messages and the credential manifest."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

from ..did import Did, parse_did
from ..presentation import PresentationDefinition

AUTH_REQUEST = "AUTH_REQUEST"
AUTH_RESPONSE = "AUTH_RESPONSE"
AUTH_COMPLETE = "AUTH_COMPLETE"
AUTH_ACK = "AUTH_ACK"
CRED_MANIFEST_REQUEST = "CRED_MANIFEST_REQUEST"
CRED_MANIFEST = "CRED_MANIFEST"
CRED_APPLICATION = "CRED_APPLICATION"
CRED_FULFILLMENT = "CRED_FULFILLMENT"
ABORT = "ABORT"

AUTH_KINDS = frozenset({AUTH_REQUEST, AUTH_RESPONSE, AUTH_COMPLETE, AUTH_ACK})
ATTESTATION_KINDS = frozenset({CRED_MANIFEST_REQUEST, CRED_MANIFEST, CRED_APPLICATION, CRED_FULFILLMENT})
KINDS = AUTH_KINDS | ATTESTATION_KINDS | {ABORT}

MUTUAL_AUTH = "mutual-auth/1"
ATTESTATION = "attestation/1"


@dataclass(frozen=True)
class ProtocolMessage:
    thread_id: str
    sequence: int
    kind: str
    body: dict[str, Any]

    def to_json(self) -> dict[str, Any]:
        return {"thread_id": self.thread_id, "sequence": self.sequence, "kind": self.kind, "body": self.body}

    @classmethod
    def from_json(cls, data: Any) -> ProtocolMessage:
        if not isinstance(data, dict):
            raise ValueError("protocol message must be an object")
        thread_id, sequence, kind, body = data["thread_id"], data["sequence"], data["kind"], data["body"]
        if not isinstance(thread_id, str) or not thread_id:
            raise ValueError("thread_id must be a non-empty string")
        if not isinstance(sequence, int) or isinstance(sequence, bool):
            raise ValueError("sequence must be an integer")
        if not isinstance(kind, str) or not isinstance(body, dict):
            raise ValueError("kind must be a string and body an object")
        if kind == ABORT and not isinstance(body.get("reason"), str):
            raise ValueError("ABORT carries a reason code")
        return cls(thread_id, sequence, kind, body)

    def with_sequence(self, sequence: int) -> ProtocolMessage:
        return ProtocolMessage(self.thread_id, sequence, self.kind, self.body)

    def with_thread(self, thread_id: str) -> ProtocolMessage:
        return ProtocolMessage(thread_id, self.sequence, self.kind, self.body)


@dataclass(frozen=True)
class OutputDescriptor:
    credential_type: str
    claim_template: dict[str, Any]

    def to_json(self) -> dict[str, Any]:
        return {"credential_type": self.credential_type, "claim_template": self.claim_template}


@dataclass(frozen=True)
class CredentialManifest:
    manifest_id: str
    issuer: Did
    output_descriptors: tuple[OutputDescriptor, ...]
    presentation_definition: PresentationDefinition

    def to_json(self) -> dict[str, Any]:
        return {
            "manifest_id": self.manifest_id,
            "issuer": str(self.issuer),
            "output_descriptors": [o.to_json() for o in self.output_descriptors],
            "presentation_definition": self.presentation_definition.to_json(),
        }

    @classmethod
    def from_json(cls, data: dict[str, Any]) -> CredentialManifest:
        return cls(
            data["manifest_id"],
            parse_did(data["issuer"]),
            tuple(OutputDescriptor(o["credential_type"], o["claim_template"]) for o in data["output_descriptors"]),
            PresentationDefinition.from_json(data["presentation_definition"]),
        )
