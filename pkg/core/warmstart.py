"""Warm-start trajectories from a constraint-aware particle filter.

The tracking-form control problem (follow straight-line reference positions,
hover thrust, nominal inputs, stay feasible) is read as a state-estimation
problem: the augmented state-and-input vector χ = (ξ; η) evolves through the
shooting map, and each node "observes" the reference together with the
clamped input-side constraints. Every particle runs an unscented Kalman
update with a random bias; weights follow the observation likelihood; the
lowest-scoring particle becomes the initial guess for the SCP loop.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import LinAlgError, block_diag, cho_solve, cholesky, eigh
from scipy.special import logsumexp

from core.dynamics import input_inequalities_G, selector_matrices
from core.errors import ConfigError, CovarianceError
from core.integrator import IntegratorSettings, integrate_batch
from core.transcription import DiscreteTrajectory, ShootingProblem
from utils.constants import (
    DEFAULT_EPSILON,
    DEFAULT_GAMMA,
    DEFAULT_INITIAL_COVARIANCE,
    DEFAULT_KAPPA,
    DEFAULT_NU,
    DEFAULT_NUM_PARTICLES,
    DEFAULT_SAMPLING_ALPHA,
    DEFAULT_UT_THETA,
    FILTER_ATOL,
    FILTER_RTOL,
)
from utils.helpers import ProgressCallback, positive_part, with_progress

logger = logging.getLogger(__name__)

JITTER_START = 1e-12
JITTER_STOP = 1e-6
REPAIR_WARN_RATIO = 1e-8


# Covariance algebra


def repair_covariance(S: np.ndarray) -> np.ndarray:
    """Symmetrize and clip negative eigenvalues to zero."""
    S = 0.5 * (np.asarray(S, dtype=float) + np.asarray(S, dtype=float).T)
    values, vectors = eigh(S)
    low = float(values[0]) if values.size else 0.0
    if low >= 0.0:
        return S
    scale = max(float(np.max(np.abs(values))), 1e-300)
    if -low > REPAIR_WARN_RATIO * scale:
        logger.warning("covariance repair clipped eigenvalue %.3e (largest %.3e)", low, scale)
    repaired = (vectors * np.maximum(values, 0.0)) @ vectors.T
    return 0.5 * (repaired + repaired.T)


def _cholesky_with_jitter(A: np.ndarray, what: str) -> np.ndarray:
    A = 0.5 * (A + A.T)
    n = A.shape[0]
    trace = float(np.trace(A))
    if trace < 0.0 or not np.isfinite(trace):
        raise CovarianceError(f"{what}: indefinite covariance (trace {trace:.3e})")
    try:
        return cholesky(A, lower=True)
    except LinAlgError:
        pass
    delta = JITTER_START * trace / n
    while delta <= JITTER_STOP * trace / n * (1.0 + 1e-9):
        try:
            factor = cholesky(A + delta * np.eye(n), lower=True)
            logger.debug("%s: cholesky needed jitter %.3e", what, delta)
            return factor
        except LinAlgError:
            delta *= 10.0
    raise CovarianceError(f"{what}: indefinite covariance, cholesky failed up to jitter {JITTER_STOP:g}*trace/n")


def matrix_sqrt(A: np.ndarray) -> np.ndarray:
    """Lower-triangular L with L Lᵀ ≈ A; zero for a zero matrix."""
    A = np.asarray(A, dtype=float)
    if not np.any(A):
        return np.zeros_like(A)
    return _cholesky_with_jitter(A, "matrix square root")


# Unscented transform


@dataclass(frozen=True)
class UtSettings:
    theta: float = DEFAULT_UT_THETA

    def validate(self) -> "UtSettings":
        if not 0.0 < self.theta <= 1.0:
            raise ConfigError("UT spread theta must lie in (0, 1]")
        return self

    def lam(self, n: int) -> float:
        return (self.theta**2 - 1.0) * n

    def weights(self, n: int) -> Tuple[np.ndarray, np.ndarray]:
        """Mean weights a and covariance weights b, each of length 2n + 1, center first."""
        lam = self.lam(n)
        spread = n + lam
        a = np.full(2 * n + 1, 0.5 / spread)
        b = a.copy()
        a[0] = lam / spread
        b[0] = (lam + spread * (3.0 - self.theta**2)) / spread
        return a, b


def sigma_points(x: np.ndarray, A1: np.ndarray, settings: UtSettings) -> np.ndarray:
    n = x.size
    root = np.sqrt(n + settings.lam(n)) * matrix_sqrt(A1)
    return np.vstack([x[None, :], x + root.T, x - root.T])


def unscented_transform(
    x: np.ndarray,
    A1: np.ndarray,
    A2: np.ndarray,
    f: Callable[[np.ndarray], np.ndarray],
    settings: Optional[UtSettings] = None,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Propagate (x, A1) through ``f``; returns mean y, covariance B1 (+A2) and cross-covariance B2.

    ``f`` maps a (2n+1, n) array of sigma points row-wise to (2n+1, l).
    """
    settings = settings or UtSettings()
    x = np.asarray(x, dtype=float).ravel()
    a, b = settings.weights(x.size)
    X = sigma_points(x, A1, settings)
    Y = np.asarray(f(X), dtype=float)
    y = a @ Y
    dY = Y - y
    dX = X - x
    B1 = (dY.T * b) @ dY + A2
    B2 = (dX.T * b) @ dY
    return y, B1, B2


# Duality model


@dataclass(frozen=True, eq=False)
class DualityModel:
    problem: ShootingProblem
    gamma: float
    epsilon: float
    nu: float
    x_hat: np.ndarray  # (N, 3m) reference positions per node
    Q: np.ndarray
    R: np.ndarray
    eta_hat: np.ndarray
    M_x: np.ndarray
    M_T: np.ndarray

    @property
    def N(self) -> int:
        return self.problem.grid.N

    @property
    def n(self) -> int:
        return self.problem.cfg.state_dim

    @property
    def p(self) -> int:
        return self.problem.cfg.input_dim

    @property
    def dim(self) -> int:
        return self.n + self.p

    def decay(self, k: int) -> float:
        """ε^{(N−k)/2} for the 0-based node index k."""
        return float(self.epsilon ** ((self.N - 1 - k) / 2.0))

    def C(self, k: int) -> np.ndarray:
        return np.vstack([self.decay(k) * self.M_x, self.M_T])

    def y_hat(self, k: int) -> np.ndarray:
        return np.concatenate([self.decay(k) * self.x_hat[k], np.zeros(self.M_T.shape[0])])

    def y_tilde(self, k: int) -> np.ndarray:
        return np.concatenate([self.y_hat(k), -self.nu * np.ones(self.problem.cfg.n_G)])

    @property
    def E(self) -> np.ndarray:
        return block_diag(np.zeros((self.n, self.n)), np.linalg.inv(self.R))

    @property
    def F(self) -> np.ndarray:
        return block_diag(np.linalg.inv(self.Q), np.eye(self.problem.cfg.n_G))

    def transition(self, rows: np.ndarray, k: int, integrator: IntegratorSettings) -> np.ndarray:
        """φ: (F_k(ξ, η); η̂) for every row χ = (ξ; η)."""
        rows = np.atleast_2d(rows)
        xi_next = integrate_batch(
            rows[:, : self.n],
            rows[:, self.n :],
            self.problem.grid.interval(k),
            self.problem.cfg,
            self.problem.weights,
            integrator,
        )
        return np.hstack([xi_next, np.tile(self.eta_hat, (len(rows), 1))])

    def output(self, rows: np.ndarray, k: int) -> np.ndarray:
        """ψ: (C_k ξ; [G(ξ, η)]_+) for every row."""
        rows = np.atleast_2d(rows)
        xi, eta = rows[:, : self.n], rows[:, self.n :]
        tracked = xi @ self.C(k).T
        clamped = positive_part(input_inequalities_G(xi, eta, self.problem.cfg, self.gamma))
        return np.hstack([tracked, clamped])


def build_duality_model(
    problem: ShootingProblem,
    gamma: float = DEFAULT_GAMMA,
    epsilon: float = DEFAULT_EPSILON,
    nu: float = DEFAULT_NU,
) -> DualityModel:
    if not 0.0 < epsilon < 1.0:
        raise ConfigError("decay epsilon must lie in (0, 1)")
    if nu <= 0.0:
        raise ConfigError("penalty shift nu must be positive")
    cfg, N = problem.cfg, problem.grid.N
    sel = selector_matrices(cfg)
    start, goal = sel.M_x @ problem.x0, sel.M_x @ problem.xf
    frac = np.arange(N)[:, None] / (N - 1)
    x_hat = (1.0 - frac) * start + frac * goal
    w = problem.weights
    raw = np.concatenate([np.full(cfg.n_u, w.alpha2), [w.alpha1 / cfg.time_max]])
    # Relative to the thrust weight, or to the largest entry when that weight is zero.
    # Uncosted inputs take the smallest costed entry (1 when nothing is costed).
    reference = w.alpha3 if w.alpha3 > 0.0 else float(np.max(raw))
    scaled = raw / reference
    costed = scaled[scaled > 0.0]
    R = np.diag(np.where(scaled > 0.0, scaled, costed.min() if costed.size else 1.0))
    eta_hat = np.concatenate([np.zeros(cfg.n_u), [cfg.time_min]])
    return DualityModel(
        problem=problem,
        gamma=gamma,
        epsilon=epsilon,
        nu=nu,
        x_hat=x_hat,
        Q=np.eye(6 * cfg.num_agents),
        R=R,
        eta_hat=eta_hat,
        M_x=sel.M_x,
        M_T=sel.M_T,
    )


# Particle filter


@dataclass(frozen=True)
class FilterSettings:
    num_particles: int = DEFAULT_NUM_PARTICLES
    initial_covariance: float = DEFAULT_INITIAL_COVARIANCE
    sampling_alpha: float = DEFAULT_SAMPLING_ALPHA
    kappa: float = DEFAULT_KAPPA
    epsilon: float = DEFAULT_EPSILON
    nu: float = DEFAULT_NU
    ut: UtSettings = field(default_factory=UtSettings)
    integrator: IntegratorSettings = field(
        default_factory=lambda: IntegratorSettings(rel_tol=FILTER_RTOL, abs_tol=FILTER_ATOL)
    )
    workers: int = 1

    def validate(self) -> "FilterSettings":
        if self.num_particles < 1:
            raise ConfigError("num_particles must be at least 1")
        if self.initial_covariance < 0.0 or self.sampling_alpha < 0.0:
            raise ConfigError("filter covariances must be nonnegative")
        if self.kappa <= 0.0:
            raise ConfigError("kappa must be positive")
        self.ut.validate()
        self.integrator.validate()
        return self


@dataclass
class ParticleEnsemble:
    histories: np.ndarray  # (n_p, k, D)
    covariances: np.ndarray  # (n_p, D, D), current step only
    weights: np.ndarray  # (n_p,)

    @property
    def num_particles(self) -> int:
        return self.histories.shape[0]

    @property
    def length(self) -> int:
        return self.histories.shape[1]

    @property
    def states(self) -> np.ndarray:
        return self.histories[:, -1, :]

    def effective_sample_size(self) -> float:
        return float(1.0 / np.sum(self.weights**2))

    def copy(self) -> "ParticleEnsemble":
        return ParticleEnsemble(self.histories.copy(), self.covariances.copy(), self.weights.copy())


def init_ensemble(model: DualityModel, settings: FilterSettings) -> ParticleEnsemble:
    n_p, D = settings.num_particles, model.dim
    chi1 = np.concatenate([model.problem.x0, model.eta_hat])
    return ParticleEnsemble(
        histories=np.tile(chi1, (n_p, 1, 1)),
        covariances=np.tile(settings.initial_covariance * np.eye(D), (n_p, 1, 1)),
        weights=np.full(n_p, 1.0 / n_p),
    )


def particle_rngs(seed: int, num_particles: int) -> List[np.random.Generator]:
    """One stream per particle plus a final one for resampling."""
    children = np.random.SeedSequence(seed).spawn(num_particles + 1)
    return [np.random.default_rng(child) for child in children]


def _update_particle(
    chi: np.ndarray,
    sigma: np.ndarray,
    k: int,
    model: DualityModel,
    settings: FilterSettings,
    E: np.ndarray,
    F: np.ndarray,
    rng: np.random.Generator,
) -> Tuple[np.ndarray, np.ndarray, float]:
    mu, M, _ = unscented_transform(
        chi, sigma, E, lambda rows: model.transition(rows, k, settings.integrator), settings.ut
    )
    M = repair_covariance(M)
    zeta, U, V = unscented_transform(mu, M, F, lambda rows: model.output(rows, k + 1), settings.ut)
    U_chol = _cholesky_with_jitter(repair_covariance(U), "innovation covariance")
    gain = cho_solve((U_chol, True), V.T).T
    posterior = repair_covariance(M - gain @ V.T)
    residual = model.y_tilde(k + 1) - zeta
    noise = np.sqrt(settings.sampling_alpha) * rng.standard_normal(mu.size)
    chi_next = mu + gain @ residual + matrix_sqrt(posterior) @ noise
    whitened = cho_solve((U_chol, True), residual)
    log_likelihood = -0.5 * float(residual @ whitened) - float(np.sum(np.log(np.diag(U_chol))))
    return chi_next, posterior, log_likelihood


def filter_step(
    ensemble: ParticleEnsemble,
    k: int,
    model: DualityModel,
    settings: FilterSettings,
    rngs: Sequence[np.random.Generator],
) -> ParticleEnsemble:
    """Advance every particle from node k to k+1 (0-based) and reweight."""
    if not 0 <= k < model.N - 1:
        raise IndexError(f"filter step {k} outside 0..{model.N - 2}")
    E, F = model.E, model.F
    n_p = ensemble.num_particles

    def work(l: int) -> Tuple[np.ndarray, np.ndarray, float]:
        return _update_particle(
            ensemble.states[l], ensemble.covariances[l], k, model, settings, E, F, rngs[l]
        )

    if settings.workers > 1 and n_p > 1:
        with ThreadPoolExecutor(max_workers=settings.workers) as pool:
            results = list(pool.map(work, range(n_p)))
    else:
        results = [work(l) for l in range(n_p)]

    with np.errstate(divide="ignore"):
        log_w = np.log(ensemble.weights) + np.array([r[2] for r in results])
    log_w -= logsumexp(log_w)
    weights = np.exp(log_w)
    weights /= weights.sum()
    states = np.array([r[0] for r in results])
    return ParticleEnsemble(
        histories=np.concatenate([ensemble.histories, states[:, None, :]], axis=1),
        covariances=np.array([r[1] for r in results]),
        weights=weights,
    )


def maybe_resample(
    ensemble: ParticleEnsemble, kappa: float, rng: np.random.Generator
) -> Tuple[ParticleEnsemble, bool]:
    n_p = ensemble.num_particles
    # a lone particle is already its own resample
    if n_p == 1 or kappa * float(np.sum(ensemble.weights**2)) < 1.0:
        return ensemble, False
    picks = rng.choice(n_p, size=n_p, p=ensemble.weights)
    return (
        ParticleEnsemble(
            histories=ensemble.histories[picks].copy(),
            covariances=ensemble.covariances[picks].copy(),
            weights=np.full(n_p, 1.0 / n_p),
        ),
        True,
    )


def run_filter(
    model: DualityModel,
    settings: FilterSettings,
    seed: int,
    progress: Optional[ProgressCallback] = None,
) -> Tuple[ParticleEnsemble, List[Dict[str, float]]]:
    settings = settings.validate()
    rngs = particle_rngs(seed, settings.num_particles)
    ensemble = init_ensemble(model, settings)
    diagnostics: List[Dict[str, float]] = []
    for k in range(model.N - 1):
        ensemble = filter_step(ensemble, k, model, settings, rngs[:-1])
        ess = ensemble.effective_sample_size()
        weight_sum = float(np.sum(ensemble.weights))
        ensemble, fired = maybe_resample(ensemble, settings.kappa, rngs[-1])
        diagnostics.append({"step": k + 1, "ess": ess, "weight_sum": weight_sum, "resampled": bool(fired)})
        logger.info("filter step %d/%d: ess %.2f%s", k + 1, model.N - 1, ess, ", resampled" if fired else "")
        with_progress(progress, "warmstart", int(100 * (k + 1) / (model.N - 1)), f"filter step {k + 1}")
    return ensemble, diagnostics


def particle_scores(
    ensemble: ParticleEnsemble, model: DualityModel, integrator: Optional[IntegratorSettings] = None
) -> np.ndarray:
    """Tracking cost + constraint penalty + input cost + ℓ₁ dynamics defects, per particle."""
    integrator = integrator or model.problem.integrator
    n, N = model.n, model.N
    if ensemble.length != N:
        raise ConfigError("particle histories must span the whole grid", f"length {ensemble.length}, N={N}")
    xi = ensemble.histories[:, :, :n]
    eta = ensemble.histories[:, :, n:]
    scores = np.zeros(ensemble.num_particles)
    for k in range(N):
        tracking = model.y_hat(k) - xi[:, k] @ model.C(k).T
        scores += np.einsum("li,ij,lj->l", tracking, model.Q, tracking)
        penalty = positive_part(input_inequalities_G(xi[:, k], eta[:, k], model.problem.cfg, model.gamma)) + model.nu
        scores += np.sum(penalty**2, axis=1)
        deviation = eta[:, k] - model.eta_hat
        scores += np.einsum("li,ij,lj->l", deviation, model.R, deviation)
    for k in range(N - 1):
        shot = integrate_batch(
            xi[:, k], eta[:, k], model.problem.grid.interval(k), model.problem.cfg, model.problem.weights, integrator
        )
        scores += np.sum(np.abs(shot - xi[:, k + 1]), axis=1)
    return scores


def select_particle(
    ensemble: ParticleEnsemble, model: DualityModel, scores: Optional[np.ndarray] = None
) -> Tuple[int, DiscreteTrajectory]:
    """Lowest score wins, ties go to the lowest index; the N-th input block is dropped."""
    if scores is None:
        scores = particle_scores(ensemble, model)
    best = int(np.argmin(scores))
    history = ensemble.histories[best]
    return best, DiscreteTrajectory(xi=history[:, : model.n].copy(), eta=history[: model.N - 1, model.n :].copy())


@dataclass
class WarmstartResult:
    trajectory: DiscreteTrajectory
    best_index: int
    scores: np.ndarray
    diagnostics: List[Dict[str, float]]
    elapsed_s: float
    ensemble: ParticleEnsemble = field(repr=False)


def generate_warmstart(
    problem: ShootingProblem,
    settings: Optional[FilterSettings] = None,
    seed: int = 0,
    gamma: float = DEFAULT_GAMMA,
    progress: Optional[ProgressCallback] = None,
) -> WarmstartResult:
    settings = (settings or FilterSettings()).validate()
    started = time.perf_counter()
    model = build_duality_model(problem, gamma=gamma, epsilon=settings.epsilon, nu=settings.nu)
    ensemble, diagnostics = run_filter(model, settings, seed, progress)
    scores = particle_scores(ensemble, model)
    best, trajectory = select_particle(ensemble, model, scores)
    elapsed = time.perf_counter() - started
    logger.info("warm start: particle %d of %d selected (score %.6g) in %.2f s", best, len(scores), scores[best], elapsed)
    return WarmstartResult(
        trajectory=trajectory,
        best_index=best,
        scores=scores,
        diagnostics=diagnostics,
        elapsed_s=elapsed,
        ensemble=ensemble,
    )
