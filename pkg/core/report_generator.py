from __future__ import annotations

from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd

from core.scenario import ScenarioConfig
from core.transcription import SolveReport, TrajectorySamples
from utils.constants import (
    AGENT_STATE_DIM,
    AUDIT_COLUMNS,
    CONVERGENCE_COLUMNS,
    FILTER_DIAGNOSTIC_COLUMNS,
    PAIR_COLUMNS,
    SOLVE_TIMING_COLUMNS,
    TRAJECTORY_COLUMNS,
)


def _agent_blocks(cfg: ScenarioConfig, samples: TrajectorySamples) -> np.ndarray:
    return samples.states[:, : cfg.n_x].reshape(len(samples.times), cfg.num_agents, AGENT_STATE_DIM)


def trajectory_frame(cfg: ScenarioConfig, samples: TrajectorySamples) -> pd.DataFrame:
    agents = _agent_blocks(cfg, samples)
    rows = []
    for t, block in zip(samples.times, agents):
        for agent_id, x in enumerate(block, start=1):
            rows.append([float(t), agent_id, *map(float, x)])
    return pd.DataFrame(rows, columns=TRAJECTORY_COLUMNS)


def audit_frame(cfg: ScenarioConfig, samples: TrajectorySamples) -> pd.DataFrame:
    agents = _agent_blocks(cfg, samples)
    speed = np.linalg.norm(agents[..., 3:6], axis=-1)
    thrust = np.linalg.norm(agents[..., 6:9], axis=-1)
    tilt = np.arctan2(np.linalg.norm(agents[..., 6:8], axis=-1), agents[..., 8])
    rows = []
    for k, t in enumerate(samples.times):
        for i in range(cfg.num_agents):
            rows.append([float(t), i + 1, float(speed[k, i]), float(thrust[k, i]), float(tilt[k, i])])
    frame = pd.DataFrame(rows, columns=AUDIT_COLUMNS)
    for l, center in enumerate(cfg.obstacle_centers, start=1):
        planar = np.linalg.norm(agents[..., 0:2] - center, axis=-1)
        frame[f"obstacle_{l}_distance"] = planar.reshape(-1)
    return frame


def pair_frame(cfg: ScenarioConfig, samples: TrajectorySamples) -> pd.DataFrame:
    agents = _agent_blocks(cfg, samples)
    i_idx, j_idx = np.triu_indices(cfg.num_agents, k=1)
    dist = np.linalg.norm(agents[:, i_idx, 0:3] - agents[:, j_idx, 0:3], axis=-1)
    rows = []
    for k, t in enumerate(samples.times):
        for p, (i, j) in enumerate(zip(i_idx, j_idx)):
            rows.append([float(t), int(i) + 1, int(j) + 1, float(dist[k, p])])
    return pd.DataFrame(rows, columns=PAIR_COLUMNS)


def convergence_frame(history: Iterable[Any]) -> pd.DataFrame:
    rows = [h.to_dict() if hasattr(h, "to_dict") else dict(h) for h in history]
    df = pd.DataFrame(rows, columns=CONVERGENCE_COLUMNS)
    return df


def filter_frame(diagnostics: Sequence[Dict[str, Any]]) -> pd.DataFrame:
    return pd.DataFrame(list(diagnostics), columns=FILTER_DIAGNOSTIC_COLUMNS)


def report_payload(
    report: SolveReport,
    *,
    command: str,
    scenario: str,
    seed: Optional[int] = None,
    init: Optional[str] = None,
    extra: Optional[Dict[str, Any]] = None,
    include_timing: bool = False,
) -> Dict[str, Any]:
    """JSON body for report.json. Wall-clock fields are kept only when ``include_timing`` is set."""
    payload = report.to_dict()
    if not include_timing:
        payload["history"] = [{k: v for k, v in h.items() if k != "time_s"} for h in payload["history"]]
    payload.update({"command": command, "scenario": scenario, "seed": seed, "init": init})
    if extra:
        payload.update(extra)
    return payload


def timing_frame(history: Iterable[Any], warmstart_time_s: float = 0.0) -> pd.DataFrame:
    rows: List[Dict[str, Any]] = []
    for h in history:
        record = h.to_dict() if hasattr(h, "to_dict") else dict(h)
        rows.append({"iteration": record["iteration"], "time_s": record["time_s"], "warmstart_time_s": warmstart_time_s})
    return pd.DataFrame(rows, columns=SOLVE_TIMING_COLUMNS)
