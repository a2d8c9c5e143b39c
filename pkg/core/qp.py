"""Operator-splitting (ADMM) solver for convex quadratic programs.

    minimize    ½ zᵀ P z + qᵀ z
    subject to  A_eq z = b_eq
                l_in ≤ A_in z ≤ u_in

Internally the equality and inequality rows are stacked into one constraint
l ≤ A z ≤ u. The iteration, scaling, step-size adaptation, infeasibility
certificates and solution polishing follow the OSQP scheme. Duals use the
convention P z + q + Aᵀ y = 0, with y > 0 on active upper bounds.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from core.errors import ConfigError, QpError
from utils.constants import QP_ABS_TOL, QP_MAX_ITER, QP_REL_TOL

logger = logging.getLogger(__name__)

SOLVED = "solved"
MAX_ITER = "max_iter"
PRIMAL_INFEASIBLE = "primal_infeasible"
DUAL_INFEASIBLE = "dual_infeasible"

QP_INFTY = 1e20
RHO_MIN = 1e-6
RHO_MAX = 1e6
RHO_EQ_FACTOR = 1e3
MIN_SCALING = 1e-4
MAX_SCALING = 1e4


@dataclass
class QpProblem:
    P: sp.spmatrix
    q: np.ndarray
    A_eq: sp.spmatrix
    b_eq: np.ndarray
    A_in: sp.spmatrix
    l_in: np.ndarray
    u_in: np.ndarray

    def __post_init__(self) -> None:
        self.P = sp.csc_matrix(self.P, dtype=float)
        self.A_eq = sp.csc_matrix(self.A_eq, dtype=float)
        self.A_in = sp.csc_matrix(self.A_in, dtype=float)
        self.q = np.asarray(self.q, dtype=float).ravel()
        self.b_eq = np.asarray(self.b_eq, dtype=float).ravel()
        self.l_in = np.asarray(self.l_in, dtype=float).ravel()
        self.u_in = np.asarray(self.u_in, dtype=float).ravel()

    @property
    def n(self) -> int:
        return self.P.shape[1]

    @property
    def m_eq(self) -> int:
        return self.A_eq.shape[0]

    @property
    def m_in(self) -> int:
        return self.A_in.shape[0]

    def check(self) -> "QpProblem":
        n = self.n
        if self.P.shape != (n, n) or self.q.shape != (n,):
            raise QpError(f"dimension mismatch: P {self.P.shape}, q {self.q.shape}")
        if self.A_eq.shape[1] != n or self.b_eq.shape != (self.m_eq,):
            raise QpError(f"dimension mismatch: A_eq {self.A_eq.shape}, b_eq {self.b_eq.shape}")
        if self.A_in.shape[1] != n or self.l_in.shape != (self.m_in,) or self.u_in.shape != (self.m_in,):
            raise QpError(
                f"dimension mismatch: A_in {self.A_in.shape}, l_in {self.l_in.shape}, u_in {self.u_in.shape}"
            )
        if np.any(self.l_in > self.u_in):
            raise QpError("inequality bounds must satisfy l_in <= u_in")
        if abs(self.P - self.P.T).max() > 1e-12 * max(1.0, abs(self.P).max()):
            raise QpError("P must be symmetric")
        return self

    def stacked(self) -> Tuple[sp.csc_matrix, np.ndarray, np.ndarray]:
        A = sp.vstack([self.A_eq, self.A_in], format="csc")
        lower = np.concatenate([self.b_eq, self.l_in])
        upper = np.concatenate([self.b_eq, self.u_in])
        return A, lower, upper

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ (self.P @ x) + self.q @ x)


@dataclass(frozen=True)
class QpSettings:
    abs_tol: float = QP_ABS_TOL
    rel_tol: float = QP_REL_TOL
    max_iter: int = QP_MAX_ITER
    rho: float = 0.1
    sigma: float = 1e-6
    alpha: float = 1.6
    scaling_iter: int = 10
    adaptive_rho: bool = True
    adaptive_rho_interval: int = 25
    adaptive_rho_tolerance: float = 5.0
    eps_prim_inf: float = 1e-5
    eps_dual_inf: float = 1e-5
    polish: bool = False
    polish_delta: float = 1e-6
    polish_refine_iter: int = 3

    def validate(self) -> "QpSettings":
        if self.abs_tol <= 0.0 or self.rel_tol < 0.0:
            raise ConfigError("qp tolerances must be positive")
        if self.max_iter < 1:
            raise ConfigError("qp max_iter must be at least 1")
        if not 0.0 < self.alpha < 2.0:
            raise ConfigError("qp relaxation alpha must lie in (0, 2)")
        if self.rho <= 0.0 or self.sigma <= 0.0:
            raise ConfigError("qp rho and sigma must be positive")
        return self


@dataclass
class QpResult:
    x: np.ndarray
    y: np.ndarray  # stacked duals, equality rows first
    status: str
    iterations: int
    objective: float
    pri_res: float
    dua_res: float
    polished: bool = False
    m_eq: int = 0
    info: Dict[str, float] = field(default_factory=dict)

    @property
    def y_eq(self) -> np.ndarray:
        return self.y[: self.m_eq]

    @property
    def y_in(self) -> np.ndarray:
        return self.y[self.m_eq :]

    @property
    def solved(self) -> bool:
        return self.status == SOLVED


def _col_inf(M: sp.spmatrix) -> np.ndarray:
    if M.shape[0] == 0 or M.nnz == 0:
        return np.zeros(M.shape[1])
    return np.asarray(abs(M).max(axis=0).todense()).ravel()


def _row_inf(M: sp.spmatrix) -> np.ndarray:
    if M.shape[1] == 0 or M.nnz == 0:
        return np.zeros(M.shape[0])
    return np.asarray(abs(M).max(axis=1).todense()).ravel()


def _limit(norms: np.ndarray) -> np.ndarray:
    norms = np.where(norms < MIN_SCALING, 1.0, norms)
    return np.minimum(norms, MAX_SCALING)


@dataclass
class _Scaling:
    D: np.ndarray
    E: np.ndarray
    c: float


def _ruiz_equilibrate(
    P: sp.csc_matrix, q: np.ndarray, A: sp.csc_matrix, iterations: int
) -> Tuple[sp.csc_matrix, np.ndarray, sp.csc_matrix, _Scaling]:
    """Modified Ruiz equilibration of the KKT matrix plus cost scaling."""
    n, m = P.shape[0], A.shape[0]
    D, E, c = np.ones(n), np.ones(m), 1.0
    for _ in range(iterations):
        d = 1.0 / np.sqrt(_limit(np.maximum(_col_inf(P), _col_inf(A))))
        e = 1.0 / np.sqrt(_limit(_row_inf(A))) if m else np.ones(0)
        Dd, Ed = sp.diags(d), sp.diags(e)
        P = (Dd @ P @ Dd).tocsc()
        A = (Ed @ A @ Dd).tocsc()
        q = d * q
        D *= d
        E *= e

        cost = max(float(np.mean(_col_inf(P))) if n else 0.0, float(np.max(np.abs(q))) if n else 0.0)
        cost = float(_limit(np.array([cost]))[0])
        P = (P / cost).tocsc()
        q = q / cost
        c /= cost
    return P, q, A, _Scaling(D=D, E=E, c=c)


def _rho_vector(lower: np.ndarray, upper: np.ndarray, rho: float) -> np.ndarray:
    rho_vec = np.full(lower.shape, rho)
    loose = (lower <= -QP_INFTY) & (upper >= QP_INFTY)
    rho_vec[loose] = RHO_MIN
    rho_vec[np.abs(upper - lower) < 1e-12] = RHO_EQ_FACTOR * rho
    return np.clip(rho_vec, RHO_MIN, RHO_MAX * RHO_EQ_FACTOR)


def _factor(matrix: sp.spmatrix):
    try:
        return splu(sp.csc_matrix(matrix))
    except RuntimeError as exc:
        raise QpError(f"KKT factorization failed: {exc}") from exc


def _kkt_matrix(P: sp.csc_matrix, A: sp.csc_matrix, sigma: float, rho_vec: np.ndarray) -> sp.csc_matrix:
    n = P.shape[0]
    return sp.bmat(
        [[P + sigma * sp.identity(n, format="csc"), A.T], [A, -sp.diags(1.0 / rho_vec)]],
        format="csc",
    )


def solve_qp(
    problem: QpProblem,
    settings: Optional[QpSettings] = None,
    warm_x: Optional[np.ndarray] = None,
    warm_y: Optional[np.ndarray] = None,
) -> QpResult:
    settings = (settings or QpSettings()).validate()
    problem.check()
    A_raw, l_raw, u_raw = problem.stacked()
    n, m = problem.n, A_raw.shape[0]
    l_raw = np.maximum(l_raw, -QP_INFTY)
    u_raw = np.minimum(u_raw, QP_INFTY)

    P, q, A, scaling = _ruiz_equilibrate(problem.P.copy(), problem.q.copy(), A_raw.copy(), settings.scaling_iter)
    D, E, c = scaling.D, scaling.E, scaling.c
    Dinv, Einv = 1.0 / D, 1.0 / E
    lower = np.where(l_raw <= -QP_INFTY, -np.inf, E * l_raw)
    upper = np.where(u_raw >= QP_INFTY, np.inf, E * u_raw)
    eq_rows = np.abs(upper - lower) < 1e-12

    rho = settings.rho
    rho_vec = _rho_vector(lower, upper, rho)
    lu = _factor(_kkt_matrix(P, A, settings.sigma, rho_vec))

    if warm_x is not None:
        x = Dinv * np.asarray(warm_x, dtype=float)
        z = np.clip(A @ x, lower, upper)
    else:
        x = np.zeros(n)
        z = np.zeros(m)
    y = c * Einv * np.asarray(warm_y, dtype=float) if warm_y is not None else np.zeros(m)

    status = MAX_ITER
    pri_res = dua_res = np.inf
    alpha, sigma = settings.alpha, settings.sigma
    iteration = 0
    for iteration in range(1, settings.max_iter + 1):
        rhs = np.concatenate([sigma * x - q, z - y / rho_vec])
        sol = lu.solve(rhs)
        x_tilde = sol[:n]
        z_tilde = z + (sol[n:] - y) / rho_vec

        x_new = alpha * x_tilde + (1.0 - alpha) * x
        z_relaxed = alpha * z_tilde + (1.0 - alpha) * z
        z_new = np.clip(z_relaxed + y / rho_vec, lower, upper)
        y_new = y + rho_vec * (z_relaxed - z_new)
        delta_x, delta_y = x_new - x, y_new - y
        x, z, y = x_new, z_new, y_new
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise QpError(f"numerical breakdown: non-finite iterate at iteration {iteration}")

        Ax = A @ x
        Px = P @ x
        Aty = A.T @ y
        pri_res = float(np.max(np.abs(Einv * (Ax - z)))) if m else 0.0
        dua_res = float(np.max(np.abs(Dinv * (Px + q + Aty)))) / c
        pri_scale = max(float(np.max(np.abs(Einv * Ax))), float(np.max(np.abs(Einv * z)))) if m else 0.0
        dua_scale = max(
            float(np.max(np.abs(Dinv * Px))),
            float(np.max(np.abs(Dinv * Aty))),
            float(np.max(np.abs(Dinv * q))),
        ) / c
        eps_pri = settings.abs_tol + settings.rel_tol * pri_scale
        eps_dua = settings.abs_tol + settings.rel_tol * dua_scale

        if pri_res < eps_pri and dua_res < eps_dua:
            status = SOLVED
            break
        if pri_res >= eps_pri and _primal_infeasible(delta_y, A, lower, upper, D, E, settings.eps_prim_inf):
            status = PRIMAL_INFEASIBLE
            break
        if dua_res >= eps_dua and _dual_infeasible(delta_x, P, q, A, lower, upper, D, E, c, settings.eps_dual_inf):
            status = DUAL_INFEASIBLE
            break

        if settings.adaptive_rho and iteration % settings.adaptive_rho_interval == 0:
            scaled_pri = float(np.max(np.abs(Ax - z))) / max(float(np.max(np.abs(Ax))), float(np.max(np.abs(z))), 1e-10) if m else 0.0
            scaled_dua = float(np.max(np.abs(Px + q + Aty))) / max(
                float(np.max(np.abs(Px))), float(np.max(np.abs(Aty))), float(np.max(np.abs(q))), 1e-10
            )
            new_rho = float(np.clip(rho * np.sqrt(scaled_pri / max(scaled_dua, 1e-10)), RHO_MIN, RHO_MAX))
            if new_rho > settings.adaptive_rho_tolerance * rho or new_rho < rho / settings.adaptive_rho_tolerance:
                logger.debug("qp rho %.3e -> %.3e at iteration %d", rho, new_rho, iteration)
                rho = new_rho
                rho_vec = _rho_vector(lower, upper, rho)
                lu = _factor(_kkt_matrix(P, A, sigma, rho_vec))

    polished = False
    if status == SOLVED and settings.polish and m:
        polished_xy = _polish(P, q, A, lower, upper, eq_rows, z, y, settings)
        if polished_xy is not None:
            x_pol, y_pol = polished_xy
            z_pol = A @ x_pol
            pol_pri = float(np.max(np.abs(Einv * (np.clip(z_pol, lower, upper) - z_pol))))
            pol_dua = float(np.max(np.abs(Dinv * (P @ x_pol + q + A.T @ y_pol)))) / c
            if pol_pri <= max(pri_res, 1e-10) and pol_dua <= max(dua_res, 1e-10):
                x, y, z = x_pol, y_pol, z_pol
                pri_res, dua_res = pol_pri, pol_dua
                polished = True

    x_out = D * x
    y_out = E * y / c
    if status == PRIMAL_INFEASIBLE:
        objective = np.inf
    elif status == DUAL_INFEASIBLE:
        objective = -np.inf
    else:
        objective = problem.objective(x_out)
    if status == MAX_ITER:
        logger.warning("qp stopped at max_iter=%d (pri %.2e, dua %.2e)", settings.max_iter, pri_res, dua_res)
    logger.debug("qp %s after %d iterations%s", status, iteration, " (polished)" if polished else "")
    return QpResult(
        x=x_out,
        y=y_out,
        status=status,
        iterations=iteration,
        objective=objective,
        pri_res=pri_res,
        dua_res=dua_res,
        polished=polished,
        m_eq=problem.m_eq,
        info={"rho": rho},
    )


def _primal_infeasible(
    delta_y: np.ndarray,
    A: sp.csc_matrix,
    lower: np.ndarray,
    upper: np.ndarray,
    D: np.ndarray,
    E: np.ndarray,
    eps: float,
) -> bool:
    dy = E * delta_y
    norm_dy = float(np.max(np.abs(dy))) if dy.size else 0.0
    if norm_dy <= eps:
        return False
    v = delta_y / norm_dy
    if np.any((v > eps) & np.isinf(upper)) or np.any((v < -eps) & np.isinf(lower)):
        return False
    support = np.where(v > 0, np.where(np.isinf(upper), 0.0, upper), 0.0) @ v + np.where(
        v < 0, np.where(np.isinf(lower), 0.0, lower), 0.0
    ) @ v
    if support >= -eps:
        return False
    return float(np.max(np.abs((A.T @ v) / D))) < eps


def _dual_infeasible(
    delta_x: np.ndarray,
    P: sp.csc_matrix,
    q: np.ndarray,
    A: sp.csc_matrix,
    lower: np.ndarray,
    upper: np.ndarray,
    D: np.ndarray,
    E: np.ndarray,
    c: float,
    eps: float,
) -> bool:
    dx = D * delta_x
    norm_dx = float(np.max(np.abs(dx)))
    if norm_dx <= eps:
        return False
    v = delta_x / norm_dx
    if float(q @ v) / c >= -eps:
        return False
    if float(np.max(np.abs((P @ v) / D))) / c >= eps:
        return False
    Av = (A @ v) / E
    finite_upper = ~np.isinf(upper)
    finite_lower = ~np.isinf(lower)
    if np.any(Av[finite_upper] > eps) or np.any(Av[finite_lower] < -eps):
        return False
    return True


def _polish(
    P: sp.csc_matrix,
    q: np.ndarray,
    A: sp.csc_matrix,
    lower: np.ndarray,
    upper: np.ndarray,
    eq_rows: np.ndarray,
    z: np.ndarray,
    y: np.ndarray,
    settings: QpSettings,
) -> Optional[Tuple[np.ndarray, np.ndarray]]:
    """Solve the equality-constrained QP on the guessed active set; None if the guess is inconsistent."""
    n, m = P.shape[0], A.shape[0]
    lower_active = ((z - lower) < -y) & ~eq_rows
    upper_active = ((upper - z) < y) & ~eq_rows
    active = lower_active | upper_active | eq_rows
    A_red = A[np.flatnonzero(active), :]
    bound = np.where(upper_active, upper, lower)[active]
    k = A_red.shape[0]
    delta = settings.polish_delta
    if k:
        K_reg = sp.bmat(
            [[P + delta * sp.identity(n, format="csc"), A_red.T], [A_red, -delta * sp.identity(k, format="csc")]],
            format="csc",
        )
        K = sp.bmat([[P, A_red.T], [A_red, None]], format="csc")
    else:
        K_reg = (P + delta * sp.identity(n, format="csc")).tocsc()
        K = P.tocsc()
    try:
        lu = splu(K_reg)
    except RuntimeError:
        logger.debug("qp polish factorization failed")
        return None
    rhs = np.concatenate([-q, bound])
    sol = lu.solve(rhs)
    for _ in range(settings.polish_refine_iter):
        sol = sol + lu.solve(rhs - K @ sol)
    if not np.all(np.isfinite(sol)):
        return None
    x_pol = sol[:n]
    y_pol = np.zeros(m)
    y_pol[active] = sol[n:]
    sign_tol = 1e-8 * max(1.0, float(np.max(np.abs(y_pol))) if m else 1.0)
    if np.any(y_pol[lower_active] > sign_tol) or np.any(y_pol[upper_active] < -sign_tol):
        return None
    return x_pol, y_pol


def kkt_residuals(problem: QpProblem, x: np.ndarray, y_eq: np.ndarray, y_in: np.ndarray) -> Dict[str, float]:
    """Unscaled KKT residuals by direct substitution."""
    x = np.asarray(x, dtype=float)
    stationarity = problem.P @ x + problem.q + problem.A_eq.T @ y_eq + problem.A_in.T @ y_in
    Ax_in = problem.A_in @ x
    lower_gap = np.where(np.isinf(problem.l_in), np.inf, Ax_in - problem.l_in)
    upper_gap = np.where(np.isinf(problem.u_in), np.inf, problem.u_in - Ax_in)
    primal_in = np.maximum(np.maximum(-lower_gap, -upper_gap), 0.0)
    upper_mult = np.maximum(y_in, 0.0)
    lower_mult = np.maximum(-y_in, 0.0)
    comp = np.maximum(
        np.where(upper_mult > 0.0, upper_mult * np.minimum(np.abs(upper_gap), QP_INFTY), 0.0),
        np.where(lower_mult > 0.0, lower_mult * np.minimum(np.abs(lower_gap), QP_INFTY), 0.0),
    )
    return {
        "stationarity": float(np.max(np.abs(stationarity))) if stationarity.size else 0.0,
        "primal_eq": float(np.max(np.abs(problem.A_eq @ x - problem.b_eq))) if problem.m_eq else 0.0,
        "primal_in": float(np.max(primal_in)) if primal_in.size else 0.0,
        "complementarity": float(np.max(comp)) if comp.size else 0.0,
    }
