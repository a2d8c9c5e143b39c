from __future__ import annotations

import numpy as np
import pytest
from scipy.linalg import expm

from core.dynamics import agent_matrices, augmented_jacobians
from core.errors import ConfigError, IntegrationError
from core.integrator import (
    IntegratorSettings,
    integrate_batch,
    integrate_samples,
    integrate_sensitivities,
    integrate_state,
)
from core.scenario import boundary_augmented_states, derive_weights

TIGHT = IntegratorSettings(rel_tol=1e-10, abs_tol=1e-10)


def _speeding_state(cfg):
    """Boundary state with agent 1 moving faster than v_max, so y grows smoothly."""
    x0, _ = boundary_augmented_states(cfg)
    x = x0.copy()
    x[3:6] = [3.5, 0.2, 0.1]
    return x


def _input(cfg, s, rates=None):
    rates = np.zeros(cfg.n_u) if rates is None else rates
    return np.concatenate([rates, [s]])


def test_settings_validation():
    with pytest.raises(ConfigError):
        IntegratorSettings(rel_tol=0.1).validate()
    with pytest.raises(ConfigError):
        IntegratorSettings(max_steps=0).validate()
    assert IntegratorSettings().validate().rel_tol == 1e-9


def test_agent_block_matches_matrix_exponential(two_agent_cfg, rng):
    cfg = two_agent_cfg
    weights = derive_weights(cfg)
    A, B, e = agent_matrices(cfg)
    x0, _ = boundary_augmented_states(cfg)
    for _ in range(50):
        s = rng.uniform(cfg.time_min, cfg.time_max)
        rates = rng.uniform(-2.0, 2.0, cfg.n_u)
        tau_a = rng.uniform(0.0, 0.8)
        dtau = rng.uniform(0.01, 0.2)
        x_end = integrate_state(x0, _input(cfg, s, rates), (tau_a, tau_a + dtau), cfg, weights, TIGHT)

        M = np.zeros((10, 10))
        M[:9, :9] = s * A
        M[:9, 9] = s * (B @ rates[0:3] + e)
        exact = (expm(dtau * M) @ np.concatenate([x0[0:9], [1.0]]))[:9]
        np.testing.assert_allclose(x_end[0:9], exact, rtol=0.0, atol=1e-8)


def test_chain_property(two_agent_cfg):
    cfg = two_agent_cfg
    weights = derive_weights(cfg)
    settings = IntegratorSettings()
    x = _speeding_state(cfg)
    eta = _input(cfg, 10.0, np.full(cfg.n_u, 0.3))
    mid = integrate_state(x, eta, (0.0, 0.1), cfg, weights, settings)
    split = integrate_state(mid, eta, (0.1, 0.25), cfg, weights, settings)
    whole = integrate_state(x, eta, (0.0, 0.25), cfg, weights, settings)
    np.testing.assert_allclose(split, whole, rtol=10 * settings.rel_tol, atol=10 * settings.abs_tol)


def test_tightening_tolerances_converges(two_agent_cfg):
    cfg = two_agent_cfg
    weights = derive_weights(cfg)
    x = _speeding_state(cfg)
    eta = _input(cfg, 12.0, np.full(cfg.n_u, -0.4))
    loose = IntegratorSettings(rel_tol=1e-7, abs_tol=1e-7)
    tight = IntegratorSettings(rel_tol=1e-8, abs_tol=1e-8)
    a = integrate_state(x, eta, (0.0, 0.3), cfg, weights, loose)
    b = integrate_state(x, eta, (0.0, 0.3), cfg, weights, tight)
    assert np.max(np.abs(a - b) / (1.0 + np.abs(b))) < 10 * loose.rel_tol


def test_sensitivities_match_finite_differences(two_agent_cfg):
    cfg = two_agent_cfg
    weights = derive_weights(cfg)
    span = (0.0, 1.0 / 7.0)
    xi = _speeding_state(cfg)
    xi[cfg.n_x] = 0.01
    eta = _input(cfg, 9.0, np.array([0.0, 0.0, 0.5, 0.2, 0.6, 1.0]))
    bundle = integrate_sensitivities(xi, eta, span, cfg, weights, TIGHT)
    np.testing.assert_allclose(bundle.x_bar, integrate_state(xi, eta, span, cfg, weights, TIGHT), atol=1e-8)

    h = 1e-5

    def fd(base, j, shift):
        plus, minus = base.copy(), base.copy()
        plus[j] += h
        minus[j] -= h
        return (shift(plus) - shift(minus)) / (2.0 * h)

    phi_x = np.column_stack(
        [fd(xi, j, lambda z: integrate_state(z, eta, span, cfg, weights, TIGHT)) for j in range(xi.size)]
    )
    phi_u = np.column_stack(
        [fd(eta, j, lambda v: integrate_state(xi, v, span, cfg, weights, TIGHT)) for j in range(eta.size)]
    )
    np.testing.assert_allclose(bundle.phi_x, phi_x, rtol=1e-5, atol=1e-4)
    np.testing.assert_allclose(bundle.phi_u, phi_u, rtol=1e-5, atol=1e-4)


def test_sensitivity_first_order_limit(two_agent_cfg):
    cfg = two_agent_cfg
    weights = derive_weights(cfg)
    xi = _speeding_state(cfg)
    eta = _input(cfg, 20.0, np.full(cfg.n_u, 0.5))
    dtau = 1e-8
    bundle = integrate_sensitivities(xi, eta, (0.0, dtau), cfg, weights)
    dfdx, _ = augmented_jacobians(xi, eta, cfg, weights)
    expected = np.eye(cfg.state_dim) + dtau * dfdx
    assert np.max(np.abs(bundle.phi_x - expected)) < 1e-12


def test_batch_matches_single_rows(two_agent_cfg, rng):
    cfg = two_agent_cfg
    weights = derive_weights(cfg)
    x = _speeding_state(cfg)
    rows = np.tile(x, (3, 1)) + rng.normal(scale=0.05, size=(3, cfg.state_dim))
    etas = np.array([_input(cfg, s, rng.uniform(-1, 1, cfg.n_u)) for s in (7.0, 14.0, 21.0)])
    batch = integrate_batch(rows, etas, (0.0, 0.2), cfg, weights)
    for row, eta, out in zip(rows, etas, batch):
        np.testing.assert_allclose(out, integrate_state(row, eta, (0.0, 0.2), cfg, weights), rtol=1e-7, atol=1e-7)


def test_dense_samples_hit_interval_ends(two_agent_cfg):
    cfg = two_agent_cfg
    weights = derive_weights(cfg)
    x = _speeding_state(cfg)
    eta = _input(cfg, 8.0, np.full(cfg.n_u, 1.0))
    span = (0.2, 0.4)
    samples, x_end = integrate_samples(x, eta, span, [0.2, 0.3, 0.4], cfg, weights)
    assert samples.shape == (3, cfg.state_dim)
    np.testing.assert_allclose(samples[0], x, atol=1e-12)
    np.testing.assert_allclose(samples[-1], x_end, atol=1e-9)
    np.testing.assert_allclose(samples[1], integrate_state(x, eta, (0.2, 0.3), cfg, weights), rtol=1e-6, atol=1e-6)


def test_step_budget_is_reported(two_agent_cfg):
    cfg = two_agent_cfg
    weights = derive_weights(cfg)
    x = _speeding_state(cfg)
    with pytest.raises(IntegrationError, match="step budget"):
        integrate_state(x, _input(cfg, 28.0), (0.0, 1.0), cfg, weights, IntegratorSettings(max_steps=1))


def test_non_finite_initial_state(two_agent_cfg):
    cfg = two_agent_cfg
    x = _speeding_state(cfg)
    x[0] = np.nan
    with pytest.raises(IntegrationError):
        integrate_state(x, _input(cfg, 7.0), (0.0, 0.1), cfg, derive_weights(cfg))
