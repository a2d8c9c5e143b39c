from __future__ import annotations

import numpy as np
import pytest

from core.dynamics import (
    agent_dynamics,
    augmented_dynamics,
    augmented_jacobians,
    input_inequalities_G,
    selector_matrices,
    state_inequalities_g,
    state_inequalities_jacobian,
)
from core.scenario import Obstacle, ScenarioConfig, boundary_augmented_states, derive_weights, hover_thrust

FD_STEP = 1e-6


def _random_state(cfg, rng):
    """Random agent blocks with nonzero velocity and thrust, away from norm kinks."""
    agents = []
    for _ in range(cfg.num_agents):
        r = rng.uniform(1.0, 14.0, 3)
        v = rng.uniform(-2.0, 2.0, 3)
        T = np.array([rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(2.5, 4.5)])
        agents.append(np.concatenate([r, v, T]))
    return np.concatenate(agents + [rng.uniform(0.0, 1.0, 2)])


def _central_difference(f, x, step=FD_STEP):
    cols = []
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = step
        cols.append((f(x + e) - f(x - e)) / (2.0 * step))
    return np.column_stack(cols)


def test_hover_derivative_is_zero(two_agent_cfg):
    x = np.concatenate([np.zeros(6), hover_thrust(two_agent_cfg)])
    np.testing.assert_allclose(agent_dynamics(x, np.zeros(3), two_agent_cfg), np.zeros(9), atol=1e-12)


def test_thrust_rate_passthrough(two_agent_cfg):
    x = np.concatenate([np.zeros(6), hover_thrust(two_agent_cfg)])
    out = agent_dynamics(x, np.array([0.0, 0.0, 1.0]), two_agent_cfg)
    np.testing.assert_allclose(out[6:9], [0.0, 0.0, 1.0])
    np.testing.assert_allclose(out[0:6], np.zeros(6), atol=1e-12)


def test_vertical_acceleration_from_thrust(two_agent_cfg):
    x = np.concatenate([np.zeros(6), [0.0, 0.0, 5.0]])
    out = agent_dynamics(x, np.zeros(3), two_agent_cfg)
    assert out[5] == pytest.approx(5.0 / 0.35 - 9.81)


def test_agent_dynamics_broadcasts(two_agent_cfg, rng):
    x = rng.normal(size=(4, 3, 9))
    u = rng.normal(size=(4, 3, 3))
    out = agent_dynamics(x, u, two_agent_cfg)
    assert out.shape == (4, 3, 9)
    np.testing.assert_allclose(out[2, 1], agent_dynamics(x[2, 1], u[2, 1], two_agent_cfg))


def test_constraint_stack_entries(two_agent_cfg):
    cfg = two_agent_cfg
    x0, _ = boundary_augmented_states(cfg)
    x = x0.copy()
    x[0:3] = [5.0, 8.0, 4.0]  # agent 1 over obstacle 1
    x[9:12] = [5.0, 8.0, 5.0]  # agent 2 exactly d above it
    g = state_inequalities_g(x, cfg)
    per_agent = 10 + cfg.num_obstacles
    assert g.shape == (cfg.n_g,)
    assert g[10] == pytest.approx(2.0)
    T_z = x0[8]
    assert g[9] == pytest.approx((np.cos(cfg.tilt_max) - 1.0) * T_z)
    assert g[9] < 0.0
    assert g[2 * per_agent] == pytest.approx(0.0, abs=1e-12)


def test_boundary_states_strictly_feasible(two_agent_cfg):
    x0, xf = boundary_augmented_states(two_agent_cfg)
    assert np.all(state_inequalities_g(x0, two_agent_cfg) < 0.0)
    assert np.all(state_inequalities_g(xf, two_agent_cfg) < 0.0)


def test_augmented_dynamics_time_dilation(two_agent_cfg, rng):
    weights = derive_weights(two_agent_cfg)
    x = _random_state(two_agent_cfg, rng)
    u = np.concatenate([rng.uniform(-2, 2, two_agent_cfg.n_u), [0.0]])
    np.testing.assert_array_equal(augmented_dynamics(x, u, two_agent_cfg, weights), np.zeros(20))


def test_augmented_hover_rates(two_agent_cfg):
    cfg = two_agent_cfg
    weights = derive_weights(cfg)
    x0, _ = boundary_augmented_states(cfg)
    u = np.concatenate([np.zeros(cfg.n_u), [7.0]])
    f = augmented_dynamics(x0, u, cfg, weights)
    thrust_sq = cfg.num_agents * (0.35 * 9.81) ** 2
    assert f[cfg.n_x] == 0.0
    assert f[cfg.n_x + 1] == pytest.approx(7.0 * (cfg.num_agents * weights.alpha1 + weights.alpha3 * thrust_sq))


def test_state_jacobian_matches_finite_differences(two_agent_cfg, rng):
    cfg = two_agent_cfg
    for _ in range(20):
        x = _random_state(cfg, rng)
        analytic = state_inequalities_jacobian(x, cfg)
        numeric = _central_difference(lambda z: state_inequalities_g(z, cfg), x[: cfg.n_x])
        np.testing.assert_allclose(analytic, numeric, rtol=1e-6, atol=1e-6)


def test_augmented_jacobians_match_finite_differences(two_agent_cfg, rng):
    cfg = two_agent_cfg
    weights = derive_weights(cfg)
    for _ in range(20):
        x = _random_state(cfg, rng)
        u = np.concatenate([rng.uniform(-2.0, 2.0, cfg.n_u), [rng.uniform(7.0, 28.0)]])
        dfdx, dfdu = augmented_jacobians(x, u, cfg, weights)
        fd_x = _central_difference(lambda z: augmented_dynamics(z, u, cfg, weights), x)
        fd_u = _central_difference(lambda v: augmented_dynamics(x, v, cfg, weights), u)
        scale_x = max(1.0, float(np.max(np.abs(fd_x))))
        scale_u = max(1.0, float(np.max(np.abs(fd_u))))
        assert np.max(np.abs(dfdx - fd_x)) / scale_x < 1e-6
        assert np.max(np.abs(dfdu - fd_u)) / scale_u < 1e-6


def test_selectors_extract_positions_and_thrusts(two_agent_cfg):
    sel = selector_matrices(two_agent_cfg)
    x0, _ = boundary_augmented_states(two_agent_cfg)
    np.testing.assert_array_equal(sel.M_x @ x0, [2, 2, 2, 14, 2, 2])
    np.testing.assert_allclose(sel.M_T @ x0, np.tile(hover_thrust(two_agent_cfg), 2))
    for M in (sel.M_x, sel.M_T):
        assert np.all(M.sum(axis=1) == 1.0)
    np.testing.assert_array_equal(sel.M_o, [[1, 0, 0], [0, 1, 0]])


def test_input_inequalities_layout(two_agent_cfg):
    cfg = two_agent_cfg
    xi = np.zeros(cfg.state_dim)
    xi[cfg.n_x] = 0.5
    eta = np.concatenate([np.full(cfg.n_u, 3.0), [5.0]])
    G = input_inequalities_G(xi, eta, cfg, gamma=0.25)
    assert G.shape == (cfg.n_G,)
    assert G[0] == pytest.approx(0.25)
    np.testing.assert_allclose(G[1 : 1 + cfg.input_dim], np.concatenate([np.full(cfg.n_u, 1.0), [-23.0]]))
    np.testing.assert_allclose(G[1 + cfg.input_dim :], np.concatenate([np.full(cfg.n_u, -5.0), [2.0]]))


def _line_config(m, n_o):
    """m agents hovering along y = 1, n_o cylinders along x = 18."""
    hover = [0.0, 0.0, 0.35 * 9.81]
    states = np.array([[1.0 + 2.0 * i, 1.0, 1.0, 0.0, 0.0, 0.0, *hover] for i in range(m)])
    return ScenarioConfig(
        num_agents=m,
        agent_mass=0.35,
        obstacles=tuple(Obstacle(center=np.array([18.0, 4.0 + 4.0 * l]), radius=1.0) for l in range(n_o)),
        inter_agent_distance=1.0,
        position_min=[0.0, 0.0, 0.0],
        position_max=[20.0, 20.0, 20.0],
        velocity_max=3.0,
        thrust_min=2.0,
        thrust_max=5.0,
        tilt_max=np.pi / 4,
        thrust_rate_min=[-2.0, -2.0, -2.0],
        thrust_rate_max=[2.0, 2.0, 2.0],
        time_min=7.0,
        time_max=28.0,
        normalized_weights=[0.1, 0.8, 0.1],
        initial_states=states,
        final_states=states,
    ).validate()


@pytest.mark.parametrize("n_o", range(5))
@pytest.mark.parametrize("m", range(1, 9))
def test_constraint_counts(m, n_o):
    cfg = _line_config(m, n_o)
    assert cfg.n_g == m * (10 + n_o) + m * (m - 1) // 2
    assert cfg.n_G == 2 * cfg.n_u + 3 == 6 * m + 3
    x0, _ = boundary_augmented_states(cfg)
    assert state_inequalities_g(x0, cfg).shape == (cfg.n_g,)
    assert state_inequalities_jacobian(x0, cfg).shape == (cfg.n_g, cfg.n_x)
    eta = np.concatenate([np.zeros(cfg.n_u), [cfg.time_min]])
    assert input_inequalities_G(x0, eta, cfg, gamma=1e-6).shape == (cfg.n_G,)


def _permute_agents(z, perm, block, tail):
    head = z[: len(perm) * block].reshape(len(perm), block)[list(perm)].reshape(-1)
    return np.concatenate([head, z[len(perm) * block : len(perm) * block + tail]])


@pytest.mark.parametrize("perm", [(1, 0, 2), (2, 0, 1), (2, 1, 0)])
def test_constraints_are_permutation_equivariant(perm, rng):
    cfg = _line_config(3, 2)
    rows = 10 + cfg.num_obstacles
    pairs = list(zip(*np.triu_indices(3, k=1)))
    for _ in range(5):
        x = _random_state(cfg, rng)
        g = state_inequalities_g(x, cfg)
        g_perm = state_inequalities_g(_permute_agents(x, perm, 9, 2), cfg)
        for i in range(3):
            np.testing.assert_allclose(g_perm[rows * i : rows * (i + 1)], g[rows * perm[i] : rows * (perm[i] + 1)])
        h, h_perm = g[3 * rows :], g_perm[3 * rows :]
        for p, (i, j) in enumerate(pairs):
            q = pairs.index(tuple(sorted((perm[i], perm[j]))))
            assert h_perm[p] == pytest.approx(h[q], rel=1e-12, abs=1e-12)


@pytest.mark.parametrize("perm", [(1, 0, 2), (2, 0, 1)])
def test_augmented_dynamics_is_permutation_equivariant(perm, rng):
    cfg = _line_config(3, 2)
    weights = derive_weights(cfg)
    x = _random_state(cfg, rng)
    u = np.concatenate([rng.uniform(-2.0, 2.0, cfg.n_u), [12.0]])
    f = augmented_dynamics(x, u, cfg, weights)
    f_perm = augmented_dynamics(_permute_agents(x, perm, 9, 2), _permute_agents(u, perm, 3, 1), cfg, weights)
    np.testing.assert_allclose(f_perm, _permute_agents(f, perm, 9, 2), rtol=1e-12)


@pytest.mark.parametrize("scale", [0.5, 2.0, 3.7])
def test_augmented_dynamics_is_homogeneous_in_dilation(scale, two_agent_cfg, rng):
    cfg = two_agent_cfg
    weights = derive_weights(cfg)
    for _ in range(5):
        x = _random_state(cfg, rng)
        u = np.concatenate([rng.uniform(-2.0, 2.0, cfg.n_u), [rng.uniform(7.0, 28.0)]])
        scaled = u.copy()
        scaled[cfg.n_u] *= scale
        np.testing.assert_allclose(
            augmented_dynamics(x, scaled, cfg, weights), scale * augmented_dynamics(x, u, cfg, weights), rtol=1e-12
        )


def test_violation_rate_is_nonnegative(two_agent_cfg, rng):
    cfg = two_agent_cfg
    weights = derive_weights(cfg)
    x = rng.uniform(-5.0, 20.0, size=(50, cfg.state_dim))
    u = np.concatenate([rng.uniform(-2.0, 2.0, (50, cfg.n_u)), rng.uniform(7.0, 28.0, (50, 1))], axis=1)
    rates = augmented_dynamics(x, u, cfg, weights)[:, cfg.n_x]
    assert np.all(rates >= 0.0)
    assert np.any(rates > 0.0)
