"""Shared exception hierarchy.

Every error the CLI maps to an exit code lives here so modules can raise
without importing each other.
"""

from __future__ import annotations


class RubricLoopError(Exception):
    """Base class for all package errors."""


class ValidationError(RubricLoopError):
    """Input or state violates a documented invariant."""


class BalanceError(ValidationError):
    """Exemplar set fails the positive/negative balance requirement."""

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


class GatewayError(RubricLoopError):
    """Base class for completion-backend failures."""


class BudgetExceededError(GatewayError):
    """Prompt token estimate exceeds the configured budget."""


class AuthFailureError(GatewayError):
    """Permanent credential problem; never retried."""


class TransientExhaustedError(GatewayError):
    """Transient failures persisted past the retry limit."""

    def __init__(self, message: str, attempts: int = 0):
        super().__init__(message)
        self.attempts = attempts


class BackendRefusalError(GatewayError):
    """Backend answered but declined to produce a completion."""


class ParseError(RubricLoopError):
    """Model generation does not satisfy the score grammar.

    ``code`` is one of: missing_subscore, non_binary_value,
    duplicate_subscore, unknown_subscore, empty_generation.
    """

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


class GateFailedError(RubricLoopError):
    """A quality gate (e.g. the inter-rater kappa threshold) did not pass."""


class LockConflictError(RubricLoopError):
    """Another writer holds the experiment lock."""


class StaleDigestError(RubricLoopError):
    """Mutation was computed against a record that is no longer current."""
