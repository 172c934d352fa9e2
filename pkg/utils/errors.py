"""
Error Types
Exceptions raised by the simulator components.
"""

from typing import Any, Dict, Optional


class IsscError(Exception):
    """Base class for every simulator error."""


class DomainError(IsscError, ValueError):
    """An input violates an operation precondition (angle range, rho <= 0, non-Hermitian matrix)."""


class ConfigError(IsscError):
    """Configuration file could not be parsed or validated."""


class MusicError(IsscError):
    """Echo covariance does not carry enough excitation for subspace estimation."""


class InfeasibleError(IsscError):
    """
    A design problem has no feasible point.

    The structured report follows the result-dict layout used across the
    orchestration layer: success flag, stage, binding constraint, message.
    """

    def __init__(
        self,
        message: str,
        stage: str,
        binding_constraint: Optional[str] = None,
        details: Optional[Dict[str, Any]] = None
    ):
        super().__init__(message)
        self.stage = stage
        self.binding_constraint = binding_constraint
        self.details = details or {}

    @property
    def report(self) -> Dict[str, Any]:
        return {
            'success': False,
            'stage': self.stage,
            'binding_constraint': self.binding_constraint,
            'error': str(self),
            **self.details
        }

    def with_context(self, **context: Any) -> "InfeasibleError":
        """Return a copy carrying extra context (e.g. the outer iteration)."""
        return InfeasibleError(
            str(self),
            stage=self.stage,
            binding_constraint=self.binding_constraint,
            details={**self.details, **context}
        )


class OutputError(IsscError):
    """A result file could not be written."""
