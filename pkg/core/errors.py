from __future__ import annotations

from typing import Optional


class QuadScpError(Exception):
    """Base class for every error raised by the solver stack."""


class ConfigError(QuadScpError, ValueError):
    def __init__(self, invariant: str, detail: str = "") -> None:
        self.invariant = invariant
        message = invariant if not detail else f"{invariant} ({detail})"
        super().__init__(message)


class IntegrationError(QuadScpError, RuntimeError):
    pass


class QpError(QuadScpError, RuntimeError):
    pass


class CovarianceError(QuadScpError, RuntimeError):
    pass


class SolverError(QuadScpError, RuntimeError):
    def __init__(self, iteration: int, cause: Exception, message: Optional[str] = None) -> None:
        self.iteration = iteration
        self.cause = cause
        super().__init__(message or f"iteration {iteration}: {cause}")
