from __future__ import annotations

import copy
from pathlib import Path
from typing import Any, Dict

import numpy as np
import pytest

from core.scenario import ScenarioConfig, demo_scenario, save_scenario, scenario_from_dict, scenario_to_dict
from core.transcription import ShootingProblem

HOVER_POINT = [3.0, 3.0, 3.0]


def hover_in_place_dict() -> Dict[str, Any]:
    """One agent that starts and ends hovering at the same point, no obstacles."""
    data = scenario_to_dict(demo_scenario(2))
    boundary = {"position_m": list(HOVER_POINT), "velocity_m_s": [0.0, 0.0, 0.0], "thrust_N": "hover"}
    data.update(
        name="hover_in_place",
        num_agents=1,
        obstacles=[],
        agents=[{"initial": copy.deepcopy(boundary), "final": copy.deepcopy(boundary)}],
    )
    return data


def hover_inputs(cfg: ScenarioConfig, N: int, s: float = 7.0) -> np.ndarray:
    eta = np.zeros((N - 1, cfg.input_dim))
    eta[:, cfg.n_u] = s
    return eta


@pytest.fixture
def two_agent_cfg() -> ScenarioConfig:
    return demo_scenario(2)


@pytest.fixture
def scenario_dict() -> Dict[str, Any]:
    return scenario_to_dict(demo_scenario(2))


@pytest.fixture
def hover_cfg() -> ScenarioConfig:
    return scenario_from_dict(hover_in_place_dict())


@pytest.fixture
def hover_problem(hover_cfg: ScenarioConfig) -> ShootingProblem:
    return ShootingProblem.build(hover_cfg, 3)


@pytest.fixture
def hover_scenario_path(tmp_path: Path, hover_cfg: ScenarioConfig) -> Path:
    return save_scenario(hover_cfg, tmp_path / "hover_in_place.json")


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)
