"""Adaptive Dormand–Prince 5(4) integration of the augmented dynamics over one interval.

The input is held constant over each call. scipy's ``RK45`` is stepped by hand
so that the step budget and finiteness of every accepted step are enforced.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import RK45

from core.dynamics import augmented_dynamics, augmented_jacobians
from core.errors import ConfigError, IntegrationError
from core.scenario import DerivedWeights, ScenarioConfig
from utils.constants import DEFAULT_ATOL, DEFAULT_INITIAL_STEP, DEFAULT_MAX_STEPS, DEFAULT_RTOL

logger = logging.getLogger(__name__)

Span = Tuple[float, float]


@dataclass(frozen=True)
class IntegratorSettings:
    rel_tol: float = DEFAULT_RTOL
    abs_tol: float = DEFAULT_ATOL
    max_steps: int = DEFAULT_MAX_STEPS
    initial_step: float = DEFAULT_INITIAL_STEP  # fraction of the interval

    def validate(self) -> "IntegratorSettings":
        if not (0.0 < self.rel_tol <= 1e-2 and 0.0 < self.abs_tol <= 1e-2):
            raise ConfigError("integrator tolerances must lie in (0, 1e-2]")
        if int(self.max_steps) < 1:
            raise ConfigError("max_steps must be at least 1")
        if not 0.0 < self.initial_step <= 1.0:
            raise ConfigError("initial_step must lie in (0, 1]")
        return self


@dataclass
class SensitivityBundle:
    x_bar: np.ndarray
    phi_x: np.ndarray
    phi_u: np.ndarray


def _run(
    fun: Callable[[float, np.ndarray], np.ndarray],
    y0: np.ndarray,
    span: Span,
    settings: IntegratorSettings,
    keep_dense: bool = False,
) -> Tuple[np.ndarray, list]:
    t0, t1 = float(span[0]), float(span[1])
    if not t1 > t0:
        raise IntegrationError(f"empty integration interval [{t0}, {t1}]")
    y0 = np.asarray(y0, dtype=float)
    if not np.all(np.isfinite(y0)):
        raise IntegrationError("non-finite initial state")

    solver = RK45(
        fun,
        t0,
        y0,
        t1,
        rtol=settings.rel_tol,
        atol=settings.abs_tol,
        first_step=settings.initial_step * (t1 - t0),
    )
    segments: list = []
    steps = 0
    while solver.status == "running":
        if steps >= settings.max_steps:
            raise IntegrationError(f"step budget of {settings.max_steps} exhausted at tau={solver.t:.6g}")
        message = solver.step()
        steps += 1
        if solver.status == "failed":
            raise IntegrationError(f"step failed at tau={solver.t:.6g}: {message}")
        if not np.all(np.isfinite(solver.y)):
            raise IntegrationError(f"non-finite state at tau={solver.t:.6g}")
        if keep_dense:
            segments.append(solver.dense_output())
    logger.debug("integrated [%g, %g] in %d steps", t0, t1, steps)
    return solver.y.copy(), segments


def integrate_state(
    x0: np.ndarray,
    eta: np.ndarray,
    span: Span,
    cfg: ScenarioConfig,
    weights: DerivedWeights,
    settings: Optional[IntegratorSettings] = None,
) -> np.ndarray:
    settings = settings or IntegratorSettings()
    eta = np.asarray(eta, dtype=float)

    def rhs(_tau: float, x: np.ndarray) -> np.ndarray:
        return augmented_dynamics(x, eta, cfg, weights)

    x_end, _ = _run(rhs, x0, span, settings)
    return x_end


def integrate_batch(
    x0: np.ndarray,
    eta: np.ndarray,
    span: Span,
    cfg: ScenarioConfig,
    weights: DerivedWeights,
    settings: Optional[IntegratorSettings] = None,
) -> np.ndarray:
    """Integrate a (B, n_x+2) batch of states as one system sharing a step sequence.

    ``eta`` is either one input for all rows or a (B, n_u+1) array.
    """
    settings = settings or IntegratorSettings()
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    eta = np.asarray(eta, dtype=float)
    shape = x0.shape

    def rhs(_tau: float, flat: np.ndarray) -> np.ndarray:
        return augmented_dynamics(flat.reshape(shape), eta, cfg, weights).ravel()

    x_end, _ = _run(rhs, x0.ravel(), span, settings)
    return x_end.reshape(shape)


def integrate_sensitivities(
    xi: np.ndarray,
    eta: np.ndarray,
    span: Span,
    cfg: ScenarioConfig,
    weights: DerivedWeights,
    settings: Optional[IntegratorSettings] = None,
) -> SensitivityBundle:
    """Jointly integrate x̄, Φ_x = ∂x̄/∂ξ and Φ_u = ∂x̄/∂η from Φ_x = I, Φ_u = 0."""
    settings = settings or IntegratorSettings()
    eta = np.asarray(eta, dtype=float)
    n = cfg.state_dim
    p = cfg.input_dim

    def rhs(_tau: float, packed: np.ndarray) -> np.ndarray:
        x = packed[:n]
        phi_x = packed[n : n + n * n].reshape(n, n)
        phi_u = packed[n + n * n :].reshape(n, p)
        dfdx, dfdu = augmented_jacobians(x, eta, cfg, weights)
        return np.concatenate(
            [
                augmented_dynamics(x, eta, cfg, weights),
                (dfdx @ phi_x).ravel(),
                (dfdx @ phi_u + dfdu).ravel(),
            ]
        )

    packed0 = np.concatenate([np.asarray(xi, dtype=float), np.eye(n).ravel(), np.zeros(n * p)])
    packed, _ = _run(rhs, packed0, span, settings)
    return SensitivityBundle(
        x_bar=packed[:n].copy(),
        phi_x=packed[n : n + n * n].reshape(n, n).copy(),
        phi_u=packed[n + n * n :].reshape(n, p).copy(),
    )


def integrate_samples(
    x0: np.ndarray,
    eta: np.ndarray,
    span: Span,
    sample_taus: Sequence[float],
    cfg: ScenarioConfig,
    weights: DerivedWeights,
    settings: Optional[IntegratorSettings] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Integrate over ``span`` and evaluate the dense output at ``sample_taus``.

    Returns (states at the samples, end state). Samples outside the span are clipped to it.
    """
    settings = settings or IntegratorSettings()
    eta = np.asarray(eta, dtype=float)

    def rhs(_tau: float, x: np.ndarray) -> np.ndarray:
        return augmented_dynamics(x, eta, cfg, weights)

    x_end, segments = _run(rhs, x0, span, settings, keep_dense=True)
    taus = np.clip(np.asarray(sample_taus, dtype=float), span[0], span[1])
    ends = np.array([seg.t for seg in segments])
    which = np.minimum(np.searchsorted(ends, taus, side="left"), len(segments) - 1)
    samples: List[np.ndarray] = [segments[k](tau) for k, tau in zip(which, taus)]
    out = np.array(samples).reshape(len(taus), -1)
    return out, x_end
