"""Multiple-shooting transcription on a uniform τ-grid, plus post-processing metrics."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from core.errors import ConfigError
from core.integrator import IntegratorSettings, integrate_samples, integrate_sensitivities, integrate_state
from core.scenario import DerivedWeights, ScenarioConfig, boundary_augmented_states, derive_weights, input_bounds
from utils.constants import AGENT_STATE_DIM, SAMPLES_PER_INTERVAL
from utils.helpers import positive_part

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Grid:
    N: int

    def __post_init__(self) -> None:
        if int(self.N) < 2:
            raise ConfigError("grid needs N >= 2 nodes", f"N={self.N}")

    @property
    def spacing(self) -> float:
        return 1.0 / (self.N - 1)

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.N) / (self.N - 1)

    def interval(self, k: int) -> Tuple[float, float]:
        """(τ_k, τ_{k+1}) for the 0-based interval index k."""
        if not 0 <= k < self.N - 1:
            raise IndexError(f"interval {k} outside 0..{self.N - 2}")
        return k / (self.N - 1), (k + 1) / (self.N - 1)


@dataclass
class DiscreteTrajectory:
    xi: np.ndarray  # (N, n_x+2)
    eta: np.ndarray  # (N-1, n_u+1)

    def __post_init__(self) -> None:
        self.xi = np.array(self.xi, dtype=float)
        self.eta = np.array(self.eta, dtype=float)
        if self.xi.ndim != 2 or self.eta.ndim != 2 or self.eta.shape[0] != self.xi.shape[0] - 1:
            raise ConfigError("trajectory shapes must be (N, n) and (N-1, p)", f"{self.xi.shape} / {self.eta.shape}")

    @property
    def N(self) -> int:
        return self.xi.shape[0]

    def check(self, cfg: ScenarioConfig, grid: Grid) -> "DiscreteTrajectory":
        if self.xi.shape != (grid.N, cfg.state_dim) or self.eta.shape != (grid.N - 1, cfg.input_dim):
            raise ConfigError(
                "trajectory does not match grid and scenario",
                f"xi {self.xi.shape}, eta {self.eta.shape}, expected N={grid.N}",
            )
        return self

    def copy(self) -> "DiscreteTrajectory":
        return DiscreteTrajectory(self.xi.copy(), self.eta.copy())

    def to_dict(self) -> Dict[str, Any]:
        return {"N": self.N, "xi": self.xi.tolist(), "eta": self.eta.tolist()}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "DiscreteTrajectory":
        try:
            return cls(xi=np.asarray(data["xi"], dtype=float), eta=np.asarray(data["eta"], dtype=float))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError("malformed trajectory file", str(exc)) from exc


@dataclass
class LinearizedStep:
    A: np.ndarray
    B: np.ndarray
    c: np.ndarray
    endpoint: np.ndarray  # F_k at the reference


@dataclass
class TrajectorySamples:
    taus: np.ndarray
    times: np.ndarray  # physical seconds
    states: np.ndarray  # (K, n_x+2)


@dataclass
class SolveReport:
    objective: float
    violation: float
    final_time: float
    audit: Dict[str, Any] = field(default_factory=dict)
    history: List[Dict[str, Any]] = field(default_factory=list)
    iterations: int = 0
    status: str = "postprocessed"
    samples: Optional[TrajectorySamples] = field(default=None, repr=False)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "objective": self.objective,
            "violation": self.violation,
            "final_time_s": self.final_time,
            "iterations": self.iterations,
            "status": self.status,
            "audit": self.audit,
            "history": self.history,
        }


@dataclass(frozen=True, eq=False)
class ShootingProblem:
    """Everything the shooting maps need: scenario, grid, scaled weights, boundary states, tolerances."""

    cfg: ScenarioConfig
    grid: Grid
    weights: DerivedWeights
    x0: np.ndarray
    xf: np.ndarray
    integrator: IntegratorSettings

    @classmethod
    def build(
        cls, cfg: ScenarioConfig, N: int, integrator: Optional[IntegratorSettings] = None
    ) -> "ShootingProblem":
        x0, xf = boundary_augmented_states(cfg)
        return cls(
            cfg=cfg,
            grid=Grid(N),
            weights=derive_weights(cfg),
            x0=x0,
            xf=xf,
            integrator=(integrator or IntegratorSettings()).validate(),
        )

    def with_integrator(self, integrator: IntegratorSettings) -> "ShootingProblem":
        return ShootingProblem(self.cfg, self.grid, self.weights, self.x0, self.xf, integrator.validate())


def shoot(problem: ShootingProblem, xi_k: np.ndarray, eta_k: np.ndarray, k: int) -> np.ndarray:
    """F_k(ξ_k, η_k): integrate interval k (0-based) under the constant input η_k."""
    return integrate_state(xi_k, eta_k, problem.grid.interval(k), problem.cfg, problem.weights, problem.integrator)


def linearize(problem: ShootingProblem, xi_hat: np.ndarray, eta_hat: np.ndarray, k: int) -> LinearizedStep:
    bundle = integrate_sensitivities(
        xi_hat, eta_hat, problem.grid.interval(k), problem.cfg, problem.weights, problem.integrator
    )
    c = bundle.x_bar - bundle.phi_x @ xi_hat - bundle.phi_u @ eta_hat
    return LinearizedStep(A=bundle.phi_x, B=bundle.phi_u, c=c, endpoint=bundle.x_bar)


def linearize_all(problem: ShootingProblem, traj: DiscreteTrajectory, workers: int = 1) -> List[LinearizedStep]:
    intervals = range(problem.grid.N - 1)
    if workers <= 1:
        return [linearize(problem, traj.xi[k], traj.eta[k], k) for k in intervals]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda k: linearize(problem, traj.xi[k], traj.eta[k], k), intervals))


def rollout(problem: ShootingProblem, etas: np.ndarray) -> DiscreteTrajectory:
    """Forward-shoot the input sequence from x̄_0 so that every defect is zero."""
    etas = np.asarray(etas, dtype=float)
    xi = np.empty((problem.grid.N, problem.cfg.state_dim))
    xi[0] = problem.x0
    for k in range(problem.grid.N - 1):
        xi[k + 1] = shoot(problem, xi[k], etas[k], k)
    return DiscreteTrajectory(xi=xi, eta=etas.copy())


def defect_mass(problem: ShootingProblem, traj: DiscreteTrajectory) -> float:
    total = 0.0
    for k in range(problem.grid.N - 1):
        total += float(np.sum(np.abs(shoot(problem, traj.xi[k], traj.eta[k], k) - traj.xi[k + 1])))
    return total


def input_excess(cfg: ScenarioConfig, etas: np.ndarray) -> float:
    """Σ_k ‖[η_k − ū_max]_+‖₁ + ‖[ū_min − η_k]_+‖₁."""
    lower, upper = input_bounds(cfg)
    etas = np.asarray(etas, dtype=float)
    return float(np.sum(positive_part(etas - upper)) + np.sum(positive_part(lower - etas)))


def violation_metric(problem: ShootingProblem, x_final: np.ndarray, etas: np.ndarray) -> float:
    """y at the re-integrated end state, plus ℓ₁ terminal error on the agent block, plus ℓ₁ input excess."""
    n_x = problem.cfg.n_x
    x_final = np.asarray(x_final, dtype=float)
    terminal = float(np.sum(np.abs(x_final[:n_x] - problem.xf[:n_x])))
    return float(x_final[n_x]) + terminal + input_excess(problem.cfg, etas)


def final_time(problem: ShootingProblem, etas: np.ndarray) -> float:
    return float(problem.grid.spacing * np.sum(np.asarray(etas)[:, problem.cfg.n_u]))


def constraint_audit(cfg: ScenarioConfig, states: np.ndarray) -> Dict[str, Any]:
    """Worst-case constraint quantities over a set of sampled states."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    agents = states[:, : cfg.n_x].reshape(len(states), cfg.num_agents, AGENT_STATE_DIM)
    r, v, T = agents[..., 0:3], agents[..., 3:6], agents[..., 6:9]
    thrust_norm = np.linalg.norm(T, axis=-1)
    tilt = np.arctan2(np.linalg.norm(T[..., 0:2], axis=-1), T[..., 2])

    i_idx, j_idx = np.triu_indices(cfg.num_agents, k=1)
    pair = np.linalg.norm(r[:, i_idx] - r[:, j_idx], axis=-1)
    obstacle_distance = [
        float(np.min(np.linalg.norm(r[..., 0:2] - center, axis=-1))) for center in cfg.obstacle_centers
    ]
    box_excursion = max(
        float(np.max(r - cfg.position_max)),
        float(np.max(cfg.position_min - r)),
        0.0,
    )
    return {
        "min_pair_distance": float(np.min(pair)) if pair.size else float("inf"),
        "inter_agent_distance": cfg.inter_agent_distance,
        "min_obstacle_distance": obstacle_distance,
        "obstacle_radius": cfg.obstacle_radii.tolist(),
        "max_speed": float(np.max(np.linalg.norm(v, axis=-1))),
        "velocity_max": cfg.velocity_max,
        "min_thrust_norm": float(np.min(thrust_norm)),
        "max_thrust_norm": float(np.max(thrust_norm)),
        "thrust_bounds": [cfg.thrust_min, cfg.thrust_max],
        "max_tilt_rad": float(np.max(tilt)),
        "tilt_max_rad": cfg.tilt_max,
        "max_box_excursion": box_excursion,
    }


def rollout_and_report(
    problem: ShootingProblem,
    etas: np.ndarray,
    sample_count: int = SAMPLES_PER_INTERVAL,
) -> Tuple[TrajectorySamples, SolveReport]:
    """Re-integrate from x̄_0 under the piecewise-constant inputs and audit the dense samples."""
    etas = np.asarray(etas, dtype=float)
    grid = problem.grid
    if etas.shape != (grid.N - 1, problem.cfg.input_dim):
        raise ConfigError("input sequence does not match grid and scenario", f"got {etas.shape}")
    if sample_count < 1:
        raise ConfigError("sample_count must be positive")

    n_u = problem.cfg.n_u
    x = problem.x0.copy()
    taus: List[np.ndarray] = []
    times: List[np.ndarray] = []
    states: List[np.ndarray] = []
    t_start = 0.0
    for k in range(grid.N - 1):
        tau_a, tau_b = grid.interval(k)
        local = np.linspace(tau_a, tau_b, sample_count, endpoint=False)
        sampled, x = integrate_samples(
            x, etas[k], (tau_a, tau_b), local, problem.cfg, problem.weights, problem.integrator
        )
        s_k = etas[k, n_u]
        taus.append(local)
        times.append(t_start + s_k * (local - tau_a))
        states.append(sampled)
        t_start += s_k * (tau_b - tau_a)
    taus.append(np.array([1.0]))
    times.append(np.array([t_start]))
    states.append(x[None, :])

    samples = TrajectorySamples(taus=np.concatenate(taus), times=np.concatenate(times), states=np.vstack(states))
    report = SolveReport(
        objective=float(x[problem.cfg.n_x + 1]),
        violation=violation_metric(problem, x, etas),
        final_time=final_time(problem, etas),
        audit=constraint_audit(problem.cfg, samples.states),
        samples=samples,
    )
    return samples, report


def terminal_state(problem: ShootingProblem, etas: np.ndarray) -> np.ndarray:
    """x̄ at τ = 1 under the piecewise-constant inputs, without sampling."""
    x = problem.x0.copy()
    for k in range(problem.grid.N - 1):
        x = shoot(problem, x, etas[k], k)
    return x
