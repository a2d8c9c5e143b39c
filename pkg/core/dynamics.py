"""Quadrotor point-mass dynamics, constraint stacks and the time-scaled augmented system.

State layout per agent is (r, v, T); the augmented state appends (y, w) where
y accumulates squared constraint violation and w the running cost. The
augmented input is the stacked thrust rates followed by the time dilation s.

Evaluation functions accept arbitrary leading batch axes. Jacobians are for a
single point.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Tuple

import numpy as np

from core.scenario import DerivedWeights, ScenarioConfig, input_bounds
from utils.constants import (
    AGENT_FIXED_CONSTRAINTS,
    AGENT_INPUT_DIM,
    AGENT_STATE_DIM,
    POSITION_SLICE,
    THRUST_SLICE,
    VELOCITY_SLICE,
    VERTICAL,
)
from utils.helpers import positive_part, safe_unit


@dataclass(frozen=True)
class SelectorMatrices:
    M_o: np.ndarray  # (2, 3) planar extractor
    M_x: np.ndarray  # (3m, n_x+2) stacked positions
    M_T: np.ndarray  # (3m, n_x+2) stacked thrusts
    n_hat: np.ndarray


def selector_matrices(cfg: ScenarioConfig) -> SelectorMatrices:
    m = cfg.num_agents
    M_x = np.zeros((3 * m, cfg.state_dim))
    M_T = np.zeros((3 * m, cfg.state_dim))
    for i in range(m):
        base = AGENT_STATE_DIM * i
        M_x[3 * i : 3 * i + 3, base : base + 3] = np.eye(3)
        M_T[3 * i : 3 * i + 3, base + 6 : base + 9] = np.eye(3)
    return SelectorMatrices(
        M_o=np.eye(2, 3),
        M_x=M_x,
        M_T=M_T,
        n_hat=np.array(VERTICAL, dtype=float),
    )


@lru_cache(maxsize=32)
def _agent_matrices(mass: float, gravity: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    A = np.zeros((AGENT_STATE_DIM, AGENT_STATE_DIM))
    A[POSITION_SLICE, VELOCITY_SLICE] = np.eye(3)
    A[VELOCITY_SLICE, THRUST_SLICE] = np.eye(3) / mass
    B = np.zeros((AGENT_STATE_DIM, AGENT_INPUT_DIM))
    B[THRUST_SLICE, :] = np.eye(3)
    e = np.zeros(AGENT_STATE_DIM)
    e[VELOCITY_SLICE] = -gravity * np.array(VERTICAL)
    for arr in (A, B, e):
        arr.flags.writeable = False
    return A, B, e


def agent_matrices(cfg: ScenarioConfig) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(A, B, e) with ẋ = A x + B u + e for a single agent."""
    return _agent_matrices(cfg.agent_mass, cfg.gravity)


def agent_dynamics(x: np.ndarray, u: np.ndarray, cfg: ScenarioConfig) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    out = np.empty(np.broadcast_shapes(x.shape[:-1], u.shape[:-1]) + (AGENT_STATE_DIM,))
    out[..., POSITION_SLICE] = x[..., VELOCITY_SLICE]
    out[..., VELOCITY_SLICE] = x[..., THRUST_SLICE] / cfg.agent_mass - cfg.gravity * np.array(VERTICAL)
    out[..., THRUST_SLICE] = u
    return out


def _agent_view(x: np.ndarray, cfg: ScenarioConfig) -> np.ndarray:
    x = np.asarray(x, dtype=float)[..., : cfg.n_x]
    return x.reshape(x.shape[:-1] + (cfg.num_agents, AGENT_STATE_DIM))


def state_inequalities_g(x: np.ndarray, cfg: ScenarioConfig) -> np.ndarray:
    """Stacked g: every agent block (box, speed, thrust max/min, tilt, obstacles), then pairwise h.

    Only the first n_x entries of ``x`` are read, so augmented states may be passed directly.
    """
    agents = _agent_view(x, cfg)
    r = agents[..., POSITION_SLICE]
    v = agents[..., VELOCITY_SLICE]
    T = agents[..., THRUST_SLICE]
    thrust_norm = np.linalg.norm(T, axis=-1, keepdims=True)
    blocks = [
        r - cfg.position_max,
        cfg.position_min - r,
        np.linalg.norm(v, axis=-1, keepdims=True) - cfg.velocity_max,
        thrust_norm - cfg.thrust_max,
        cfg.thrust_min - thrust_norm,
        np.cos(cfg.tilt_max) * thrust_norm - T[..., 2:3],
    ]
    if cfg.num_obstacles:
        offsets = r[..., None, 0:2] - cfg.obstacle_centers
        blocks.append(cfg.obstacle_radii - np.linalg.norm(offsets, axis=-1))
    per_agent = np.concatenate(blocks, axis=-1)
    per_agent = per_agent.reshape(per_agent.shape[:-2] + (-1,))

    i_idx, j_idx = np.triu_indices(cfg.num_agents, k=1)
    pair_dist = np.linalg.norm(r[..., i_idx, :] - r[..., j_idx, :], axis=-1)
    return np.concatenate([per_agent, cfg.inter_agent_distance - pair_dist], axis=-1)


def state_inequalities_jacobian(x: np.ndarray, cfg: ScenarioConfig) -> np.ndarray:
    """∂g/∂x, shape (n_g, n_x); norm gradients are taken as 0 at the origin."""
    agents = _agent_view(x, cfg)
    m = cfg.num_agents
    rows_per_agent = AGENT_FIXED_CONSTRAINTS + cfg.num_obstacles
    J = np.zeros((cfg.n_g, cfg.n_x))
    n_hat = np.array(VERTICAL)
    cos_tilt = np.cos(cfg.tilt_max)
    for i in range(m):
        row = rows_per_agent * i
        col = AGENT_STATE_DIM * i
        r, v, T = agents[i, POSITION_SLICE], agents[i, VELOCITY_SLICE], agents[i, THRUST_SLICE]
        unit_T = safe_unit(T)
        J[row : row + 3, col : col + 3] = np.eye(3)
        J[row + 3 : row + 6, col : col + 3] = -np.eye(3)
        J[row + 6, col + 3 : col + 6] = safe_unit(v)
        J[row + 7, col + 6 : col + 9] = unit_T
        J[row + 8, col + 6 : col + 9] = -unit_T
        J[row + 9, col + 6 : col + 9] = cos_tilt * unit_T - n_hat
        for l, center in enumerate(cfg.obstacle_centers):
            J[row + AGENT_FIXED_CONSTRAINTS + l, col : col + 2] = -safe_unit(r[0:2] - center)

    pair_row = rows_per_agent * m
    for p, (i, j) in enumerate(zip(*np.triu_indices(m, k=1))):
        e = safe_unit(agents[i, POSITION_SLICE] - agents[j, POSITION_SLICE])
        J[pair_row + p, AGENT_STATE_DIM * i : AGENT_STATE_DIM * i + 3] = -e
        J[pair_row + p, AGENT_STATE_DIM * j : AGENT_STATE_DIM * j + 3] = e
    return J


def _unscaled_rates(x_bar: np.ndarray, u_bar: np.ndarray, cfg: ScenarioConfig, weights: DerivedWeights) -> np.ndarray:
    m = cfg.num_agents
    agents = _agent_view(x_bar, cfg)
    thrust_rates = np.asarray(u_bar, dtype=float)[..., : cfg.n_u]
    rates = thrust_rates.reshape(thrust_rates.shape[:-1] + (m, AGENT_INPUT_DIM))
    agent_rates = agent_dynamics(agents, rates, cfg)
    lead = agent_rates.shape[:-2]
    violation = positive_part(state_inequalities_g(x_bar, cfg))
    y_rate = np.sum(violation**2, axis=-1)
    w_rate = (
        m * weights.alpha1
        + weights.alpha2 * np.sum(thrust_rates**2, axis=-1)
        + weights.alpha3 * np.sum(agents[..., THRUST_SLICE] ** 2, axis=(-2, -1))
    )
    return np.concatenate(
        [agent_rates.reshape(lead + (cfg.n_x,)), y_rate[..., None], np.broadcast_to(w_rate, lead)[..., None]],
        axis=-1,
    )


def augmented_dynamics(
    x_bar: np.ndarray, u_bar: np.ndarray, cfg: ScenarioConfig, weights: DerivedWeights
) -> np.ndarray:
    """f̄ = s · (stacked agent dynamics; ‖[g]_+‖²; running cost rate)."""
    u_bar = np.asarray(u_bar, dtype=float)
    return u_bar[..., cfg.n_u, None] * _unscaled_rates(x_bar, u_bar, cfg, weights)


def augmented_jacobians(
    x_bar: np.ndarray, u_bar: np.ndarray, cfg: ScenarioConfig, weights: DerivedWeights
) -> Tuple[np.ndarray, np.ndarray]:
    x_bar = np.asarray(x_bar, dtype=float)
    u_bar = np.asarray(u_bar, dtype=float)
    m, n_x, n_u = cfg.num_agents, cfg.n_x, cfg.n_u
    s = float(u_bar[n_u])
    A, B, _ = agent_matrices(cfg)

    dfdx = np.zeros((n_x + 2, n_x + 2))
    dfdx[:n_x, :n_x] = np.kron(np.eye(m), A)
    violation = positive_part(state_inequalities_g(x_bar, cfg))
    dfdx[n_x, :n_x] = 2.0 * violation @ state_inequalities_jacobian(x_bar, cfg)
    thrust_mask = np.zeros(n_x)
    for i in range(m):
        thrust_mask[AGENT_STATE_DIM * i + 6 : AGENT_STATE_DIM * i + 9] = 1.0
    dfdx[n_x + 1, :n_x] = 2.0 * weights.alpha3 * thrust_mask * x_bar[:n_x]
    dfdx *= s

    dfdu = np.zeros((n_x + 2, n_u + 1))
    dfdu[:n_x, :n_u] = s * np.kron(np.eye(m), B)
    dfdu[n_x + 1, :n_u] = s * 2.0 * weights.alpha2 * u_bar[:n_u]
    dfdu[:, n_u] = _unscaled_rates(x_bar, u_bar, cfg, weights)
    return dfdx, dfdu


def input_inequalities_G(xi: np.ndarray, eta: np.ndarray, cfg: ScenarioConfig, gamma: float) -> np.ndarray:
    """(y − γ; η − ū_max; −η + ū_min), length 2 n_u + 3."""
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    lower, upper = input_bounds(cfg)
    y = xi[..., cfg.n_x, None] - gamma
    lead = np.broadcast_shapes(y.shape[:-1], eta.shape[:-1])
    return np.concatenate(
        [np.broadcast_to(y, lead + (1,)), np.broadcast_to(eta - upper, lead + (cfg.input_dim,)),
         np.broadcast_to(lower - eta, lead + (cfg.input_dim,))],
        axis=-1,
    )
