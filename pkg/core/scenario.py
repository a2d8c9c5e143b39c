"""Problem parameters: validation, JSON I/O, boundary states and derived dimensions.

A scenario file is a JSON object whose field names carry their units
(see ``data/scenarios/SCHEMA.md``). Loading validates every invariant and
returns an immutable :class:`ScenarioConfig`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import Any, Dict, Tuple

import numpy as np

from core.errors import ConfigError
from utils.constants import (
    AGENT_FIXED_CONSTRAINTS,
    AGENT_INPUT_DIM,
    AGENT_STATE_DIM,
    GRAVITY,
    POSITION_SLICE,
    THRUST_SLICE,
    VELOCITY_SLICE,
)
from utils.state_store import save_json

WEIGHT_SUM_TOL = 1e-9


def _frozen(values: Any, shape: Tuple[int, ...] | None = None) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if shape is not None and arr.shape != shape:
        raise ConfigError("malformed scenario file", f"expected shape {shape}, got {arr.shape}")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Obstacle:
    center: np.ndarray  # planar, m
    radius: float  # m


@dataclass(frozen=True)
class DerivedWeights:
    alpha1: float  # 1/s
    alpha2: float  # s/N^2
    alpha3: float  # 1/(s N^2)


@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    num_agents: int
    agent_mass: float
    obstacles: Tuple[Obstacle, ...]
    inter_agent_distance: float
    position_min: np.ndarray
    position_max: np.ndarray
    velocity_max: float
    thrust_min: float
    thrust_max: float
    tilt_max: float
    thrust_rate_min: np.ndarray
    thrust_rate_max: np.ndarray
    time_min: float
    time_max: float
    normalized_weights: np.ndarray
    initial_states: np.ndarray  # (m, 9): position, velocity, thrust
    final_states: np.ndarray
    gravity: float = GRAVITY
    name: str = ""

    def __post_init__(self) -> None:
        m = int(self.num_agents)
        object.__setattr__(self, "num_agents", m)
        object.__setattr__(self, "position_min", _frozen(self.position_min, (3,)))
        object.__setattr__(self, "position_max", _frozen(self.position_max, (3,)))
        object.__setattr__(self, "thrust_rate_min", _frozen(self.thrust_rate_min, (3,)))
        object.__setattr__(self, "thrust_rate_max", _frozen(self.thrust_rate_max, (3,)))
        object.__setattr__(self, "normalized_weights", _frozen(self.normalized_weights, (3,)))
        object.__setattr__(self, "initial_states", _frozen(self.initial_states, (m, AGENT_STATE_DIM)))
        object.__setattr__(self, "final_states", _frozen(self.final_states, (m, AGENT_STATE_DIM)))
        obstacles = tuple(
            Obstacle(center=_frozen(o.center, (2,)), radius=float(o.radius)) for o in self.obstacles
        )
        object.__setattr__(self, "obstacles", obstacles)
        for field_name in (
            "agent_mass",
            "inter_agent_distance",
            "velocity_max",
            "thrust_min",
            "thrust_max",
            "tilt_max",
            "time_min",
            "time_max",
            "gravity",
        ):
            object.__setattr__(self, field_name, float(getattr(self, field_name)))

    # Derived dimensions

    @property
    def num_obstacles(self) -> int:
        return len(self.obstacles)

    @property
    def num_pairs(self) -> int:
        return self.num_agents * (self.num_agents - 1) // 2

    @property
    def n_x(self) -> int:
        return AGENT_STATE_DIM * self.num_agents

    @property
    def n_u(self) -> int:
        return AGENT_INPUT_DIM * self.num_agents

    @property
    def n_g(self) -> int:
        return self.num_agents * (AGENT_FIXED_CONSTRAINTS + self.num_obstacles) + self.num_pairs

    @property
    def n_G(self) -> int:
        return 2 * self.n_u + 3

    @property
    def state_dim(self) -> int:
        return self.n_x + 2

    @property
    def input_dim(self) -> int:
        return self.n_u + 1

    @property
    def obstacle_centers(self) -> np.ndarray:
        return np.array([o.center for o in self.obstacles], dtype=float).reshape(-1, 2)

    @property
    def obstacle_radii(self) -> np.ndarray:
        return np.array([o.radius for o in self.obstacles], dtype=float)

    def validate(self) -> "ScenarioConfig":
        arrays = (
            self.position_min,
            self.position_max,
            self.thrust_rate_min,
            self.thrust_rate_max,
            self.normalized_weights,
            self.initial_states,
            self.final_states,
        )
        scalars = (
            self.agent_mass,
            self.inter_agent_distance,
            self.velocity_max,
            self.thrust_min,
            self.thrust_max,
            self.tilt_max,
            self.time_min,
            self.time_max,
            self.gravity,
        )
        if not all(np.all(np.isfinite(a)) for a in arrays) or not all(math.isfinite(s) for s in scalars):
            raise ConfigError("all numeric fields must be finite")
        if self.num_agents < 1:
            raise ConfigError("num_agents must be positive")
        if self.agent_mass <= 0.0:
            raise ConfigError("agent_mass must be positive")
        if self.gravity <= 0.0:
            raise ConfigError("gravity must be positive")
        if not np.all(self.position_min < self.position_max):
            raise ConfigError("position bounds must satisfy r_min < r_max")
        if not np.all(self.thrust_rate_min < self.thrust_rate_max):
            raise ConfigError("thrust-rate bounds must satisfy u_min < u_max")
        if not 0.0 < self.thrust_min < self.thrust_max:
            raise ConfigError("thrust bounds must satisfy 0 < T_min < T_max")
        if not 0.0 < self.time_min < self.time_max:
            raise ConfigError("time bounds must satisfy 0 < t_min < t_max")
        if not 0.0 <= self.tilt_max <= math.pi / 2:
            raise ConfigError("tilt_max must lie in [0, pi/2]")
        if self.velocity_max <= 0.0:
            raise ConfigError("velocity_max must be positive")
        if self.inter_agent_distance < 0.0:
            raise ConfigError("inter_agent_distance must be nonnegative")
        if any(o.radius <= 0.0 for o in self.obstacles):
            raise ConfigError("obstacle radii must be positive")
        if np.any(self.normalized_weights < 0.0):
            raise ConfigError("weights must be nonnegative")
        if abs(float(np.sum(self.normalized_weights)) - 1.0) > WEIGHT_SUM_TOL:
            raise ConfigError("weights must sum to 1", f"sum = {float(np.sum(self.normalized_weights))!r}")
        if self.normalized_weights[1] > 0.0 and not np.any(self.thrust_rate_max):
            raise ConfigError("thrust-rate upper bound must be nonzero when its weight is positive")

        for label, states in (("initial", self.initial_states), ("final", self.final_states)):
            positions = states[:, POSITION_SLICE]
            if np.any(positions < self.position_min) or np.any(positions > self.position_max):
                raise ConfigError("boundary position outside position bounds", label)
            for i, j in combinations(range(self.num_agents), 2):
                if np.linalg.norm(positions[i] - positions[j]) < self.inter_agent_distance:
                    raise ConfigError(f"{label} separation < d", f"agents {i + 1} and {j + 1}")
            for idx, obstacle in enumerate(self.obstacles, start=1):
                planar = np.linalg.norm(positions[:, 0:2] - obstacle.center, axis=1)
                if np.any(planar < obstacle.radius):
                    raise ConfigError("boundary position inside obstacle", f"{label} state, obstacle {idx}")
        return self


# Derived quantities


def hover_thrust(cfg: ScenarioConfig) -> np.ndarray:
    return np.array([0.0, 0.0, cfg.agent_mass * cfg.gravity])


def derive_weights(cfg: ScenarioConfig) -> DerivedWeights:
    """Dimensional cost weights; a zero normalized weight yields a zero term."""
    a1, a2, a3 = (float(a) for a in cfg.normalized_weights)
    u_max_sq = float(np.dot(cfg.thrust_rate_max, cfg.thrust_rate_max))
    return DerivedWeights(
        alpha1=a1 / cfg.time_max,
        alpha2=a2 / (cfg.time_max * u_max_sq) if a2 > 0.0 else 0.0,
        alpha3=a3 / (cfg.time_max * cfg.thrust_max**2) if a3 > 0.0 else 0.0,
    )


def boundary_augmented_states(cfg: ScenarioConfig) -> Tuple[np.ndarray, np.ndarray]:
    x0 = np.concatenate([cfg.initial_states.reshape(-1), np.zeros(2)])
    xf = np.concatenate([cfg.final_states.reshape(-1), np.zeros(2)])
    return x0, xf


def input_bounds(cfg: ScenarioConfig) -> Tuple[np.ndarray, np.ndarray]:
    """(ū_min, ū_max): thrust-rate boxes tiled over agents, then the time-dilation bounds."""
    m = cfg.num_agents
    lower = np.concatenate([np.tile(cfg.thrust_rate_min, m), [cfg.time_min]])
    upper = np.concatenate([np.tile(cfg.thrust_rate_max, m), [cfg.time_max]])
    return lower, upper


# JSON I/O


def _parse_boundary(raw: Dict[str, Any], hover: np.ndarray) -> np.ndarray:
    position = np.asarray(raw["position_m"], dtype=float)
    velocity = np.asarray(raw.get("velocity_m_s", [0.0, 0.0, 0.0]), dtype=float)
    thrust_raw = raw.get("thrust_N", "hover")
    thrust = hover.copy() if thrust_raw == "hover" else np.asarray(thrust_raw, dtype=float)
    if position.shape != (3,) or velocity.shape != (3,) or thrust.shape != (3,):
        raise ConfigError("malformed scenario file", "boundary vectors must have 3 entries")
    return np.concatenate([position, velocity, thrust])


def scenario_from_dict(data: Dict[str, Any]) -> ScenarioConfig:
    try:
        num_agents = int(data["num_agents"])
        mass = float(data["agent_mass_kg"])
        gravity = float(data.get("gravity_m_s2", GRAVITY))
        hover = np.array([0.0, 0.0, mass * gravity])
        agents = data["agents"]
        if len(agents) != num_agents:
            raise ConfigError("agent count mismatch", f"num_agents={num_agents}, agents listed={len(agents)}")
        cfg = ScenarioConfig(
            num_agents=num_agents,
            agent_mass=mass,
            obstacles=tuple(
                Obstacle(center=np.asarray(o["center_m"], dtype=float), radius=float(o["radius_m"]))
                for o in data.get("obstacles", [])
            ),
            inter_agent_distance=float(data["inter_agent_distance_m"]),
            position_min=data["position_bounds_m"]["min"],
            position_max=data["position_bounds_m"]["max"],
            velocity_max=float(data["velocity_max_m_s"]),
            thrust_min=float(data["thrust_bounds_N"]["min"]),
            thrust_max=float(data["thrust_bounds_N"]["max"]),
            tilt_max=float(data["tilt_max_rad"]),
            thrust_rate_min=data["thrust_rate_bounds_N_s"]["min"],
            thrust_rate_max=data["thrust_rate_bounds_N_s"]["max"],
            time_min=float(data["time_bounds_s"]["min"]),
            time_max=float(data["time_bounds_s"]["max"]),
            normalized_weights=data["normalized_weights"],
            initial_states=np.array([_parse_boundary(a["initial"], hover) for a in agents]).reshape(num_agents, 9),
            final_states=np.array([_parse_boundary(a["final"], hover) for a in agents]).reshape(num_agents, 9),
            gravity=gravity,
            name=str(data.get("name", "")),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError("malformed scenario file", f"{type(exc).__name__}: {exc}") from exc
    return cfg.validate()


def scenario_to_dict(cfg: ScenarioConfig) -> Dict[str, Any]:
    def boundary(state: np.ndarray) -> Dict[str, Any]:
        return {
            "position_m": state[POSITION_SLICE].tolist(),
            "velocity_m_s": state[VELOCITY_SLICE].tolist(),
            "thrust_N": state[THRUST_SLICE].tolist(),
        }

    return {
        "name": cfg.name,
        "num_agents": cfg.num_agents,
        "agent_mass_kg": cfg.agent_mass,
        "gravity_m_s2": cfg.gravity,
        "obstacles": [{"center_m": o.center.tolist(), "radius_m": o.radius} for o in cfg.obstacles],
        "inter_agent_distance_m": cfg.inter_agent_distance,
        "position_bounds_m": {"min": cfg.position_min.tolist(), "max": cfg.position_max.tolist()},
        "velocity_max_m_s": cfg.velocity_max,
        "thrust_bounds_N": {"min": cfg.thrust_min, "max": cfg.thrust_max},
        "tilt_max_rad": cfg.tilt_max,
        "thrust_rate_bounds_N_s": {"min": cfg.thrust_rate_min.tolist(), "max": cfg.thrust_rate_max.tolist()},
        "time_bounds_s": {"min": cfg.time_min, "max": cfg.time_max},
        "normalized_weights": cfg.normalized_weights.tolist(),
        "agents": [
            {"initial": boundary(x0), "final": boundary(xf)}
            for x0, xf in zip(cfg.initial_states, cfg.final_states)
        ],
    }


def load_scenario(path: str | Path) -> ScenarioConfig:
    file_path = Path(path)
    if not file_path.exists():
        raise FileNotFoundError(f"scenario not found: {file_path}")
    try:
        with file_path.open("r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as exc:
        raise ConfigError("malformed scenario file", str(exc)) from exc
    if not isinstance(data, dict):
        raise ConfigError("malformed scenario file", "top level must be an object")
    return scenario_from_dict(data)


def save_scenario(cfg: ScenarioConfig, path: str | Path) -> Path:
    return save_json(path, scenario_to_dict(cfg))


# Demo scenarios. Endpoints are vertices / edge midpoints of the box (2,2,2)-(14,14,14);
# each agent crosses to the diagonally opposite point.
DEMO_ENDPOINTS = {
    2: [((2, 2, 2), (14, 14, 14)), ((14, 2, 2), (2, 14, 14))],
    4: [
        ((2, 2, 2), (14, 14, 14)),
        ((14, 2, 2), (2, 14, 14)),
        ((2, 14, 2), (14, 2, 14)),
        ((14, 14, 2), (2, 2, 14)),
    ],
    6: [
        ((2, 2, 2), (14, 14, 14)),
        ((14, 2, 2), (2, 14, 14)),
        ((2, 14, 2), (14, 2, 14)),
        ((14, 14, 2), (2, 2, 14)),
        ((8, 2, 2), (8, 14, 14)),
        ((8, 14, 2), (8, 2, 14)),
    ],
}


def demo_scenario(num_agents: int = 2) -> ScenarioConfig:
    """Reference scenario parameters with the box-diagonal endpoint assignment for 2, 4 or 6 agents."""
    if num_agents not in DEMO_ENDPOINTS:
        raise ConfigError("demo scenarios exist for 2, 4 or 6 agents", f"got {num_agents}")
    mass = 0.35
    hover = np.array([0.0, 0.0, mass * GRAVITY])
    zeros = np.zeros(3)
    endpoints = DEMO_ENDPOINTS[num_agents]
    initial = np.array([np.concatenate([start, zeros, hover]) for start, _ in endpoints], dtype=float)
    final = np.array([np.concatenate([end, zeros, hover]) for _, end in endpoints], dtype=float)
    return ScenarioConfig(
        num_agents=num_agents,
        agent_mass=mass,
        obstacles=(
            Obstacle(center=np.array([5.0, 8.0]), radius=2.0),
            Obstacle(center=np.array([9.0, 5.0]), radius=1.5),
        ),
        inter_agent_distance=1.0,
        position_min=[0.0, 0.0, 0.0],
        position_max=[15.0, 15.0, 15.0],
        velocity_max=3.0,
        thrust_min=2.0,
        thrust_max=5.0,
        tilt_max=math.pi / 4,
        thrust_rate_min=[-2.0, -2.0, -2.0],
        thrust_rate_max=[2.0, 2.0, 2.0],
        time_min=7.0,
        time_max=28.0,
        normalized_weights=[0.1, 0.8, 0.1],
        initial_states=initial,
        final_states=final,
        gravity=GRAVITY,
        name={2: "two_agent", 4: "four_agent", 6: "six_agent"}[num_agents],
    ).validate()
