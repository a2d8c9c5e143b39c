from __future__ import annotations

import itertools

import numpy as np
import pandas as pd
import pytest
from openpyxl import load_workbook

from conftest import hover_inputs
from core import report_generator
from core.scheduler import Scheduler
from core.transcription import ShootingProblem, rollout_and_report
from data.csv_manager import read_csv, write_csv, write_workbook
from utils.constants import AUDIT_COLUMNS, PAIR_COLUMNS, TRAJECTORY_COLUMNS
from utils.state_store import load_json, save_json


@pytest.fixture
def two_agent_samples(two_agent_cfg):
    problem = ShootingProblem.build(two_agent_cfg, 3)
    samples, report = rollout_and_report(problem, hover_inputs(two_agent_cfg, 3), sample_count=4)
    return samples, report


def test_trajectory_and_audit_frames(two_agent_cfg, two_agent_samples):
    samples, _ = two_agent_samples
    traj = report_generator.trajectory_frame(two_agent_cfg, samples)
    assert list(traj.columns) == TRAJECTORY_COLUMNS
    assert len(traj) == len(samples.times) * 2
    first = traj.iloc[0]
    assert (first["rx"], first["ry"], first["rz"]) == (2.0, 2.0, 2.0)

    audit = report_generator.audit_frame(two_agent_cfg, samples)
    assert list(audit.columns[: len(AUDIT_COLUMNS)]) == AUDIT_COLUMNS
    assert {"obstacle_1_distance", "obstacle_2_distance"} <= set(audit.columns)
    np.testing.assert_allclose(audit["thrust_norm"], 0.35 * 9.81, rtol=1e-9)
    np.testing.assert_allclose(audit["tilt_rad"], 0.0, atol=1e-12)


def test_pair_frame_distances(two_agent_cfg, two_agent_samples):
    samples, _ = two_agent_samples
    pairs = report_generator.pair_frame(two_agent_cfg, samples)
    assert list(pairs.columns) == PAIR_COLUMNS
    assert pairs[["agent_i", "agent_j"]].drop_duplicates().values.tolist() == [[1, 2]]
    assert pairs["distance"].iloc[0] == pytest.approx(12.0)


def test_report_payload_drops_wall_clock(two_agent_samples):
    _, report = two_agent_samples
    report.history = [{"iteration": 1, "objective": 1.0, "time_s": 0.3}]
    payload = report_generator.report_payload(report, command="solve", scenario="s.json", seed=3)
    assert payload["history"] == [{"iteration": 1, "objective": 1.0}]
    assert payload["seed"] == 3
    timed = report_generator.report_payload(report, command="solve", scenario="s.json", include_timing=True)
    assert timed["history"][0]["time_s"] == 0.3


def test_write_csv_orders_and_checks_columns(tmp_path):
    df = pd.DataFrame({"extra": [1], "distance": [2.0], "agent_j": [2], "agent_i": [1], "time_s": [0.0]})
    path = write_csv(df, tmp_path / "nested" / "pairs.csv", PAIR_COLUMNS)
    assert path.read_text(encoding="utf-8").splitlines()[0] == "time_s,agent_i,agent_j,distance,extra"
    with pytest.raises(ValueError, match="missing columns"):
        write_csv(df.drop(columns="distance"), tmp_path / "bad.csv", PAIR_COLUMNS)
    assert read_csv(tmp_path / "absent.csv", PAIR_COLUMNS).empty
    with pytest.raises(ValueError):
        read_csv(path, ["speed"])


def test_workbook_has_one_sheet_per_frame(tmp_path):
    frames = {"trajectory": pd.DataFrame({"a": [1]}), "convergence": pd.DataFrame({"b": [2.0]})}
    path = write_workbook(tmp_path / "tables.xlsx", frames)
    assert load_workbook(path).sheetnames == ["trajectory", "convergence"]
    with pytest.raises(ValueError):
        write_workbook(tmp_path / "tables.csv", frames)


def test_json_store_handles_numpy(tmp_path):
    path = save_json(tmp_path / "x.json", {"b": np.float64(1.5), "a": np.arange(2)})
    assert load_json(path) == {"a": [0, 1], "b": 1.5}
    assert path.read_text(encoding="utf-8").index('"a"') < path.read_text(encoding="utf-8").index('"b"')
    (tmp_path / "list.json").write_text("[1, 2]", encoding="utf-8")
    with pytest.raises(ValueError):
        load_json(tmp_path / "list.json")


def test_scheduler_countdown():
    ticks = itertools.count(step=1.0)
    seen = []
    scheduler = Scheduler(on_tick=seen.append, clock=lambda: next(ticks))
    assert not scheduler.running and scheduler.elapsed() == 0.0
    scheduler.start(2.5)  # clock reads 0
    assert scheduler.running
    assert not scheduler.checkpoint()  # clock reads 1 and 2
    assert scheduler.checkpoint()  # clock reads 3 and 4
    assert seen == [1.5, 0.0]
    scheduler.stop()
    assert not scheduler.running
    assert scheduler.elapsed() == scheduler.elapsed()
