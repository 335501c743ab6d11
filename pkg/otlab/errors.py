"""Error type shared by every otlab module."""
from __future__ import annotations

ERROR_CODES: frozenset[str] = frozenset(
    {
        "kernel-under-resolved",
        "grid-budget",
        "grid-mismatch",
        "grid-too-small",
        "mass-mismatch",
        "zero-mass",
        "bad-direction",
        "empty-support",
        "problem-too-large",
        "solver-failed",
        "alpha-out-of-range",
        "not-1-lipschitz",
        "inconsistent-dual",
        "family-degenerate",
        "competitor-not-lipschitz",
        "degenerate-direction",
        "graph-disconnected",
        "domain-too-small",
        "parameter-out-of-range",
        "unknown-profile",
        "unknown-generator",
        "unknown-experiment",
        "bad-config",
        "missing-column",
    }
)


class OTLabError(ValueError):
    """A rejected input or a failed numerical precondition.

    ``code`` is one of :data:`ERROR_CODES` and is stable across releases;
    the message is for humans.
    """

    def __init__(self, code: str, message: str) -> None:
        if code not in ERROR_CODES:
            raise ValueError(f"Unknown error code: {code}")
        super().__init__(f"{code}: {message}")
        self.code = code
        self.detail = message
