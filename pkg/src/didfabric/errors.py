"""Exception hierarchy shared across the fabric."""


class FabricError(Exception):
    """Base class for every error raised by this package."""


# crypto
class SeedLength(FabricError, ValueError):
    pass


class EmptyPayload(FabricError, ValueError):
    pass


class NonCanonicalizable(FabricError, ValueError):
    pass


# did
class MalformedDid(FabricError, ValueError):
    pass


class MalformedDocument(FabricError, ValueError):
    pass


class Unresolvable(FabricError, LookupError):
    pass


# ledger
class LedgerError(FabricError):
    code = "ledger-error"


class UnknownDid(LedgerError, LookupError):
    code = "unknown-did"


class AlreadyRegistered(LedgerError):
    code = "already-registered"


class SelfCertificationMismatch(LedgerError):
    code = "self-certification-mismatch"


class BadSignature(LedgerError):
    code = "bad-signature"


class StaleVersion(LedgerError):
    code = "stale-version"


class LedgerUnavailable(LedgerError):
    code = "ledger-unavailable"


# credentials / presentation
class MalformedCredential(FabricError, ValueError):
    pass


class ClaimShapeViolation(FabricError, ValueError):
    pass


class Unsatisfiable(FabricError):
    def __init__(self, descriptor_id: str):
        super().__init__(f"no credential satisfies descriptor {descriptor_id!r}")
        self.descriptor_id = descriptor_id


class ExpiredChallenge(FabricError):
    pass


# wallet
class CorruptStore(FabricError):
    pass


class Unwritable(FabricError, OSError):
    pass


class WalletLocked(FabricError):
    pass


class SubjectMismatch(FabricError, ValueError):
    pass


class UnverifiedCredential(FabricError, ValueError):
    def __init__(self, reason: str):
        super().__init__(f"credential failed verification: {reason}")
        self.reason = reason


# domain / harness
class ConfigError(FabricError, ValueError):
    pass


class ScenarioSetupError(FabricError):
    pass


class SchemaMismatch(FabricError, ValueError):
    pass


# transport
class TransportError(FabricError):
    """Delivery failure; ``kind`` is connect, timeout, malformed-response or rejected."""

    def __init__(self, kind: str, message: str = "", code: int | None = None):
        super().__init__(f"{kind}: {message}" if message else kind)
        self.kind = kind
        self.code = code


class BindError(FabricError, OSError):
    pass


class UnknownThread(FabricError, LookupError):
    pass
