from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any


@dataclass(frozen=True)
class Verdict:
    """Outcome of a verification: accept, or reject with a machine-readable reason.

    Rejections are values, not exceptions. ``detail`` carries extra context
    (a descriptor id, a missing field) and ``claims`` the accepted claims.
    """

    ok: bool
    reason: str | None = None
    detail: str | None = None
    claims: dict[str, Any] = field(default_factory=dict)

    def __bool__(self) -> bool:
        return self.ok

    @classmethod
    def accept(cls, claims: dict[str, Any] | None = None) -> Verdict:
        return cls(True, claims=dict(claims or {}))

    @classmethod
    def reject(cls, reason: str, detail: str | None = None) -> Verdict:
        return cls(False, reason=reason, detail=detail)
