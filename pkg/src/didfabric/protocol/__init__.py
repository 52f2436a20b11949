from .attestation import AttestationState, attestation_step
from .handshake import (
    HandshakeState,
    Incoming,
    SessionContext,
    Start,
    Timeout,
    handshake_step,
)
from .messages import CredentialManifest, OutputDescriptor, ProtocolMessage

__all__ = [
    "AttestationState",
    "CredentialManifest",
    "HandshakeState",
    "Incoming",
    "OutputDescriptor",
    "ProtocolMessage",
    "SessionContext",
    "Start",
    "Timeout",
    "attestation_step",
    "handshake_step",
]
