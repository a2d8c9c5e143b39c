"""Prox-linear sequential convex programming on the shooting transcription.

Each iteration linearizes every shooting map at the current reference,
solves the penalized, proximally regularized convex subproblem, and takes its
solution as the next reference.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from core.errors import ConfigError, QpError, QuadScpError, SolverError
from core.qp import DUAL_INFEASIBLE, MAX_ITER, PRIMAL_INFEASIBLE, QpProblem, QpResult, QpSettings, solve_qp
from core.scenario import input_bounds
from core.scheduler import Scheduler
from core.transcription import (
    DiscreteTrajectory,
    LinearizedStep,
    ShootingProblem,
    SolveReport,
    linearize_all,
    rollout,
    rollout_and_report,
    terminal_state,
    violation_metric,
)
from utils.constants import (
    DEFAULT_BETA,
    DEFAULT_BUDGET_SECONDS,
    DEFAULT_EPS_TOL,
    DEFAULT_GAMMA,
    DEFAULT_MAX_ITERATIONS,
    DEFAULT_N,
    DEFAULT_RHO,
    SAMPLES_PER_INTERVAL,
)
from utils.helpers import ProgressCallback, with_progress

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ScpSettings:
    beta: float = DEFAULT_BETA
    rho: float = DEFAULT_RHO
    gamma: float = DEFAULT_GAMMA
    max_iterations: int = DEFAULT_MAX_ITERATIONS
    eps_tol: float = DEFAULT_EPS_TOL
    budget_seconds: float = DEFAULT_BUDGET_SECONDS
    N: int = DEFAULT_N
    workers: int = 1
    qp: QpSettings = field(default_factory=lambda: QpSettings(polish=True))

    def validate(self) -> "ScpSettings":
        if self.beta <= 0.0:
            raise ConfigError("beta must be positive")
        if self.rho <= 0.0:
            raise ConfigError("rho must be positive")
        if self.rho < 1.0 / self.beta:
            raise ConfigError("rho must satisfy rho >= 1/beta", f"rho={self.rho}, 1/beta={1.0 / self.beta}")
        if self.gamma <= 0.0:
            raise ConfigError("gamma must be positive")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be at least 1")
        if self.eps_tol < 0.0:
            raise ConfigError("eps_tol must be nonnegative")
        if not self.budget_seconds > 0.0:
            raise ConfigError("budget must be positive")
        if self.N < 2:
            raise ConfigError("grid needs N >= 2 nodes")
        self.qp.validate()
        return self


@dataclass(frozen=True)
class SubproblemLayout:
    """Slices of the stacked decision vector (ξ_{1:N}, η_{1:N−1}, q_{1:N−1}, z_{1:N−1})."""

    N: int
    n: int  # augmented state size
    p: int  # augmented input size

    @property
    def eta_offset(self) -> int:
        return self.N * self.n

    @property
    def q_offset(self) -> int:
        return self.eta_offset + (self.N - 1) * self.p

    @property
    def z_offset(self) -> int:
        return self.q_offset + (self.N - 1) * self.n

    @property
    def size(self) -> int:
        return self.z_offset + (self.N - 1) * self.n

    def xi(self, k: int) -> slice:
        return slice(k * self.n, (k + 1) * self.n)

    def eta(self, k: int) -> slice:
        return slice(self.eta_offset + k * self.p, self.eta_offset + (k + 1) * self.p)

    def q(self, k: int) -> slice:
        return slice(self.q_offset + k * self.n, self.q_offset + (k + 1) * self.n)

    def z(self, k: int) -> slice:
        return slice(self.z_offset + k * self.n, self.z_offset + (k + 1) * self.n)

    def pack(self, xi: np.ndarray, eta: np.ndarray, q: np.ndarray, z: np.ndarray) -> np.ndarray:
        return np.concatenate([np.ravel(xi), np.ravel(eta), np.ravel(q), np.ravel(z)])

    def unpack(self, vector: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        vector = np.asarray(vector, dtype=float)
        xi = vector[: self.eta_offset].reshape(self.N, self.n)
        eta = vector[self.eta_offset : self.q_offset].reshape(self.N - 1, self.p)
        q = vector[self.q_offset : self.z_offset].reshape(self.N - 1, self.n)
        z = vector[self.z_offset :].reshape(self.N - 1, self.n)
        return xi, eta, q, z


@dataclass
class SubproblemSolution:
    xi: np.ndarray
    eta: np.ndarray
    q: np.ndarray
    z: np.ndarray

    @property
    def slack_mass(self) -> float:
        return float(np.sum(self.q) + np.sum(self.z))

    @property
    def trajectory(self) -> DiscreteTrajectory:
        return DiscreteTrajectory(self.xi, self.eta)


@dataclass
class IterationRecord:
    iteration: int
    time_s: float
    objective: float
    violation: float
    displacement: float
    slack_mass: float
    qp_status: str
    qp_iterations: int
    subproblem_objective: float
    reference_objective: float

    def to_dict(self) -> dict:
        return asdict(self)


class _Triplets:
    def __init__(self) -> None:
        self.rows: List[np.ndarray] = []
        self.cols: List[np.ndarray] = []
        self.vals: List[np.ndarray] = []

    def block(self, row0: int, col0: int, block: np.ndarray) -> None:
        block = np.atleast_2d(block)
        r, c = np.nonzero(block)
        self.rows.append(r + row0)
        self.cols.append(c + col0)
        self.vals.append(block[r, c])

    def diagonal(self, row0: int, col0: int, values: np.ndarray) -> None:
        values = np.atleast_1d(values)
        idx = np.arange(values.size)
        self.rows.append(idx + row0)
        self.cols.append(idx + col0)
        self.vals.append(values)

    def matrix(self, shape: Tuple[int, int]) -> sp.csc_matrix:
        if not self.rows:
            return sp.csc_matrix(shape)
        return sp.coo_matrix(
            (np.concatenate(self.vals), (np.concatenate(self.rows), np.concatenate(self.cols))), shape=shape
        ).tocsc()


def assemble_subproblem(
    steps: Sequence[LinearizedStep],
    reference: DiscreteTrajectory,
    problem: ShootingProblem,
    settings: ScpSettings,
) -> Tuple[QpProblem, SubproblemLayout]:
    cfg = problem.cfg
    N, n, p = problem.grid.N, cfg.state_dim, cfg.input_dim
    if len(steps) != N - 1:
        raise QpError(f"dimension mismatch: {len(steps)} linearizations for {N - 1} intervals")
    reference.check(cfg, problem.grid)
    layout = SubproblemLayout(N=N, n=n, p=p)
    size = layout.size
    n_x = cfg.n_x
    inv_rho = 1.0 / settings.rho

    diag = np.zeros(size)
    diag[: layout.q_offset] = inv_rho
    lin = np.zeros(size)
    lin[: layout.eta_offset] = -inv_rho * reference.xi.ravel()
    lin[layout.eta_offset : layout.q_offset] = -inv_rho * reference.eta.ravel()
    lin[layout.xi(N - 1).start + n - 1] += 1.0
    lin[layout.q_offset :] = settings.beta

    eq = _Triplets()
    b_eq: List[np.ndarray] = []
    row = 0
    for k, step in enumerate(steps):
        if step.A.shape != (n, n) or step.B.shape != (n, p) or step.c.shape != (n,):
            raise QpError(f"dimension mismatch in linearization {k}")
        eq.diagonal(row, layout.xi(k + 1).start, np.ones(n))
        eq.block(row, layout.xi(k).start, -step.A)
        eq.block(row, layout.eta(k).start, -step.B)
        eq.diagonal(row, layout.q(k).start, -np.ones(n))
        eq.diagonal(row, layout.z(k).start, np.ones(n))
        b_eq.append(step.c)
        row += n
    eq.diagonal(row, layout.xi(0).start, np.ones(n))
    b_eq.append(problem.x0)
    row += n
    eq.diagonal(row, layout.xi(N - 1).start, np.ones(n_x))
    b_eq.append(problem.xf[:n_x])
    row += n_x
    A_eq = eq.matrix((row, size))

    ineq = _Triplets()
    lower: List[np.ndarray] = []
    upper: List[np.ndarray] = []
    row = 0
    for k in range(1, N):
        ineq.diagonal(row, layout.xi(k).start + n_x, np.ones(1))
        lower.append(np.array([-np.inf]))
        upper.append(np.array([settings.gamma]))
        row += 1
    u_lo, u_hi = input_bounds(cfg)
    for k in range(N - 1):
        ineq.diagonal(row, layout.eta(k).start, np.ones(p))
        lower.append(u_lo)
        upper.append(u_hi)
        row += p
    slack_count = size - layout.q_offset
    ineq.diagonal(row, layout.q_offset, np.ones(slack_count))
    lower.append(np.zeros(slack_count))
    upper.append(np.full(slack_count, np.inf))
    row += slack_count
    A_in = ineq.matrix((row, size))

    qp = QpProblem(
        P=sp.diags(diag, format="csc"),
        q=lin,
        A_eq=A_eq,
        b_eq=np.concatenate(b_eq),
        A_in=A_in,
        l_in=np.concatenate(lower),
        u_in=np.concatenate(upper),
    )
    return qp, layout


def _closing_slacks(steps: Sequence[LinearizedStep], traj: DiscreteTrajectory) -> Tuple[np.ndarray, np.ndarray]:
    defects = np.array(
        [traj.xi[k + 1] - (s.A @ traj.xi[k] + s.B @ traj.eta[k] + s.c) for k, s in enumerate(steps)]
    )
    return np.maximum(defects, 0.0), np.maximum(-defects, 0.0)


def subproblem_objective(
    solution: SubproblemSolution, reference: DiscreteTrajectory, settings: ScpSettings
) -> float:
    prox = np.sum((solution.xi - reference.xi) ** 2) + np.sum((solution.eta - reference.eta) ** 2)
    return float(solution.xi[-1, -1] + settings.beta * solution.slack_mass + prox / (2.0 * settings.rho))


def reference_objective(
    steps: Sequence[LinearizedStep], reference: DiscreteTrajectory, settings: ScpSettings
) -> float:
    """Subproblem objective at the reference itself, with slacks that exactly close its defects."""
    q, z = _closing_slacks(steps, reference)
    return subproblem_objective(SubproblemSolution(reference.xi, reference.eta, q, z), reference, settings)


def squared_displacement(a: DiscreteTrajectory, b: DiscreteTrajectory) -> float:
    return float(np.sum((a.xi - b.xi) ** 2) + np.sum((a.eta - b.eta) ** 2))


def random_initialization(problem: ShootingProblem, rng: np.random.Generator) -> DiscreteTrajectory:
    """Inputs uniform in the input box, states by forward shooting from x̄_0."""
    lower, upper = input_bounds(problem.cfg)
    etas = rng.uniform(lower, upper, size=(problem.grid.N - 1, problem.cfg.input_dim))
    return rollout(problem, etas)


def solve_subproblem(
    problem: ShootingProblem,
    reference: DiscreteTrajectory,
    settings: ScpSettings,
    warm: Optional[QpResult] = None,
) -> Tuple[SubproblemSolution, QpResult, List[LinearizedStep], QpProblem]:
    steps = linearize_all(problem, reference, workers=settings.workers)
    qp, layout = assemble_subproblem(steps, reference, problem, settings)
    result = solve_qp(
        qp,
        settings.qp,
        warm_x=warm.x if warm is not None and warm.x.shape == (layout.size,) else None,
        warm_y=warm.y if warm is not None and warm.y.shape == (qp.m_eq + qp.m_in,) else None,
    )
    if result.status in (PRIMAL_INFEASIBLE, DUAL_INFEASIBLE):
        raise QpError(f"subproblem reported {result.status}; slack variables make it feasible, check assembly")
    xi, eta, q, z = layout.unpack(result.x)
    u_lo, u_hi = input_bounds(problem.cfg)
    solution = SubproblemSolution(
        xi=np.vstack([problem.x0, xi[1:]]),
        eta=np.clip(eta, u_lo, u_hi),
        q=np.maximum(q, 0.0),
        z=np.maximum(z, 0.0),
    )
    return solution, result, steps, qp


def prox_linear_solve(
    initial: DiscreteTrajectory,
    problem: ShootingProblem,
    settings: Optional[ScpSettings] = None,
    progress: Optional[ProgressCallback] = None,
    scheduler: Optional[Scheduler] = None,
) -> Tuple[DiscreteTrajectory, SolveReport, List[IterationRecord]]:
    settings = (settings or ScpSettings()).validate()
    reference = initial.copy().check(problem.cfg, problem.grid)
    scheduler = scheduler or Scheduler()
    scheduler.start(settings.budget_seconds)
    history: List[IterationRecord] = []
    warm: Optional[QpResult] = None
    termination = "max_iterations"

    for iteration in range(1, settings.max_iterations + 1):
        try:
            solution, result, steps, _ = solve_subproblem(problem, reference, settings, warm)
            elapsed = scheduler.elapsed()
            x_final = terminal_state(problem, solution.eta)
        except QuadScpError as exc:
            raise SolverError(iteration, exc) from exc
        if result.status == MAX_ITER:
            logger.warning("iteration %d: subproblem not solved to tolerance, using last iterate", iteration)

        new_reference = solution.trajectory
        record = IterationRecord(
            iteration=iteration,
            time_s=elapsed,
            objective=float(x_final[problem.cfg.n_x + 1]),
            violation=violation_metric(problem, x_final, solution.eta),
            displacement=squared_displacement(reference, new_reference),
            slack_mass=solution.slack_mass,
            qp_status=result.status,
            qp_iterations=result.iterations,
            subproblem_objective=subproblem_objective(solution, reference, settings),
            reference_objective=reference_objective(steps, reference, settings),
        )
        history.append(record)
        logger.info(
            "scp %d: objective %.6g violation %.3e displacement %.3e slack %.3e (qp %s, %d it)",
            iteration,
            record.objective,
            record.violation,
            record.displacement,
            record.slack_mass,
            record.qp_status,
            record.qp_iterations,
        )
        with_progress(
            progress,
            "scp",
            int(100 * iteration / settings.max_iterations),
            f"iteration {iteration}: objective {record.objective:.4g}, violation {record.violation:.2e}",
        )

        reference = new_reference
        warm = result
        if record.displacement <= settings.eps_tol:
            termination = "converged"
            break
        if scheduler.checkpoint():
            termination = "budget"
            break
    scheduler.stop()

    _, report = rollout_and_report(problem, reference.eta, SAMPLES_PER_INTERVAL)
    report.iterations = len(history)
    report.status = termination
    report.history = [r.to_dict() for r in history]
    logger.info(
        "scp finished (%s) after %d iterations: objective %.6g violation %.3e t_f %.3f s",
        termination,
        report.iterations,
        report.objective,
        report.violation,
        report.final_time,
    )
    return reference, report, history
