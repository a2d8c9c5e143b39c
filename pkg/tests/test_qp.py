from __future__ import annotations

import numpy as np
import pytest
import scipy.sparse as sp

from core.errors import ConfigError, QpError
from core.qp import (
    DUAL_INFEASIBLE,
    PRIMAL_INFEASIBLE,
    SOLVED,
    QpProblem,
    QpSettings,
    kkt_residuals,
    solve_qp,
)

POLISHED = QpSettings(polish=True)
TIGHT = QpSettings(abs_tol=1e-8, rel_tol=1e-8, polish=True)


def _empty(n):
    return sp.csc_matrix((0, n)), np.zeros(0)


def _random_qp(rng, n=50, m_eq=10, m_in=30):
    M = rng.normal(size=(n, n))
    P = M @ M.T / n + np.eye(n)
    x_feasible = rng.normal(size=n)
    A_eq = rng.normal(size=(m_eq, n))
    A_in = rng.normal(size=(m_in, n))
    slack = rng.uniform(0.0, 1.0, m_in)
    lower = A_in @ x_feasible - slack
    upper = np.where(rng.uniform(size=m_in) < 0.3, np.inf, A_in @ x_feasible + rng.uniform(0.0, 1.0, m_in))
    return QpProblem(
        P=P,
        q=rng.normal(size=n) * 5.0,
        A_eq=A_eq,
        b_eq=A_eq @ x_feasible,
        A_in=A_in,
        l_in=lower,
        u_in=upper,
    )


def test_active_lower_bound():
    A_eq, b_eq = _empty(1)
    problem = QpProblem(P=[[2.0]], q=[0.0], A_eq=A_eq, b_eq=b_eq, A_in=[[1.0]], l_in=[1.0], u_in=[np.inf])
    result = solve_qp(problem, POLISHED)
    assert result.status == SOLVED
    assert result.x[0] == pytest.approx(1.0, abs=1e-6)
    assert result.y_in[0] == pytest.approx(-2.0, abs=1e-5)


def test_symmetric_projection_onto_equality():
    a = np.array([1.0, 1.0])
    A_in, l_in = _empty(2)
    problem = QpProblem(
        P=2.0 * np.eye(2), q=-2.0 * a, A_eq=[[1.0, 1.0]], b_eq=[0.0], A_in=A_in, l_in=l_in, u_in=np.zeros(0)
    )
    result = solve_qp(problem, POLISHED)
    assert result.solved
    np.testing.assert_allclose(result.x, [0.0, 0.0], atol=1e-5)


def test_random_strictly_convex_qp_kkt(rng):
    for _ in range(3):
        problem = _random_qp(rng)
        result = solve_qp(problem, TIGHT)
        assert result.status == SOLVED
        residuals = kkt_residuals(problem, result.x, result.y_eq, result.y_in)
        for name, value in residuals.items():
            assert value < 1e-5, name


def test_warm_restart_is_fast(rng):
    problem = _random_qp(rng)
    first = solve_qp(problem, POLISHED)
    again = solve_qp(problem, POLISHED, warm_x=first.x, warm_y=first.y)
    assert again.status == SOLVED
    assert again.iterations <= 10


def test_primal_infeasibility_detected():
    A_eq, b_eq = _empty(1)
    problem = QpProblem(
        P=[[1.0]],
        q=[0.0],
        A_eq=A_eq,
        b_eq=b_eq,
        A_in=[[1.0], [1.0]],
        l_in=[1.0, -np.inf],
        u_in=[np.inf, 0.0],
    )
    result = solve_qp(problem)
    assert result.status == PRIMAL_INFEASIBLE
    assert result.objective == np.inf


def test_dual_infeasibility_detected():
    A_eq, b_eq = _empty(1)
    problem = QpProblem(
        P=sp.csc_matrix((1, 1)), q=[-1.0], A_eq=A_eq, b_eq=b_eq, A_in=[[1.0]], l_in=[0.0], u_in=[np.inf]
    )
    result = solve_qp(problem)
    assert result.status == DUAL_INFEASIBLE


def test_dimension_mismatch_is_reported():
    A_eq, b_eq = _empty(2)
    problem = QpProblem(P=np.eye(2), q=[0.0, 0.0, 0.0], A_eq=A_eq, b_eq=b_eq, A_in=[[1.0, 0.0]], l_in=[0.0], u_in=[1.0])
    with pytest.raises(QpError, match="dimension mismatch"):
        solve_qp(problem)


def test_asymmetric_cost_rejected():
    A_eq, b_eq = _empty(2)
    problem = QpProblem(P=[[1.0, 1.0], [0.0, 1.0]], q=[0.0, 0.0], A_eq=A_eq, b_eq=b_eq, A_in=[[1.0, 0.0]], l_in=[0.0], u_in=[1.0])
    with pytest.raises(QpError, match="symmetric"):
        solve_qp(problem)


def test_settings_validation():
    with pytest.raises(ConfigError):
        QpSettings(abs_tol=0.0).validate()
    with pytest.raises(ConfigError):
        QpSettings(alpha=2.0).validate()
