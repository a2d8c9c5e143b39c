from __future__ import annotations

import numpy as np
import pandas as pd
import pytest

from conftest import hover_in_place_dict
from core import benchmark
from core.benchmark import (
    TIME_GRID_POINTS,
    BenchmarkSpec,
    ConvergenceCurve,
    _TrialTask,
    iteration_quantiles,
    median_realization,
    run_benchmark,
    run_trial,
    time_quantiles,
)
from core.errors import ConfigError
from core.scp import ScpSettings
from core.warmstart import FilterSettings
from utils.constants import ITERATION_QUANTILE_COLUMNS, TIME_QUANTILE_COLUMNS

QUICK_SCP = ScpSettings(N=3, max_iterations=2, budget_seconds=60.0)
QUICK_FILTER = FilterSettings(num_particles=2)


def _trials(rows):
    return pd.DataFrame(rows, columns=["trial", "seed", "mode", "iteration", "objective", "violation", "slack_mass"])


def _curve(trial, final_objective):
    return ConvergenceCurve(
        mode="random",
        trial=trial,
        seed=trial,
        iterations=[1],
        times=[0.1],
        objectives=[final_objective],
        violations=[0.0],
        slack_masses=[0.0],
    )


def test_spec_validation():
    with pytest.raises(ConfigError):
        BenchmarkSpec("s.json", trials=0).validate()
    with pytest.raises(ConfigError, match="one seed per trial"):
        BenchmarkSpec("s.json", trials=2, seeds=(1,)).validate()
    with pytest.raises(ConfigError):
        BenchmarkSpec("s.json", modes=("warmstart", "annealing")).validate()
    assert BenchmarkSpec("s.json", trials=3, base_seed=5).trial_seeds() == (5, 6, 7)
    assert BenchmarkSpec("s.json", workers=2).worker_count() == 2


def test_finished_trials_keep_contributing_to_iteration_quantiles():
    trials = _trials(
        [
            [0, 0, "random", 1, 3.0, 0.3, 0.0],
            [0, 0, "random", 2, 2.0, 0.2, 0.0],
            [0, 0, "random", 3, 1.0, 0.1, 0.0],
            [1, 1, "random", 1, 5.0, 0.5, 0.0],
        ]
    )
    table = iteration_quantiles(trials)
    assert list(table.columns) == ITERATION_QUANTILE_COLUMNS
    assert table["iteration"].tolist() == [1, 2, 3]
    first, last = table.iloc[0], table.iloc[-1]
    assert first["objective_median"] == pytest.approx(4.0)
    assert first["objective_lower"] == pytest.approx(3.5)
    assert first["objective_upper"] == pytest.approx(4.5)
    # trial 1 stopped after one iteration and is carried at 5.0
    assert last["objective_median"] == pytest.approx(3.0)
    assert last["violation_median"] == pytest.approx(0.3)


def test_quantiles_sorted_oracle(rng):
    values = rng.normal(size=7)
    trials = _trials([[i, i, "warmstart", 1, v, abs(v), 0.0] for i, v in enumerate(values)])
    table = iteration_quantiles(trials)
    np.testing.assert_allclose(
        table[["objective_lower", "objective_median", "objective_upper"]].to_numpy().ravel(),
        np.quantile(values, [0.25, 0.5, 0.75]),
    )


def test_empty_trials_give_empty_tables():
    empty = _trials([])
    assert list(iteration_quantiles(empty).columns) == ITERATION_QUANTILE_COLUMNS
    assert time_quantiles(empty, pd.DataFrame(), 10.0).empty


def test_time_quantiles_grid():
    trials = _trials([[0, 0, "random", 1, 4.0, 1.0, 0.0], [0, 0, "random", 2, 2.0, 0.5, 0.0]])
    timing = pd.DataFrame(
        [[0, 0, "random", 1, 0.5, 0.0], [0, 0, "random", 2, 1.0, 0.0]],
        columns=["trial", "seed", "mode", "iteration", "time_s", "warmstart_time_s"],
    )
    table = time_quantiles(trials, timing, budget_seconds=10.0)
    assert list(table.columns) == TIME_QUANTILE_COLUMNS
    assert len(table) == TIME_GRID_POINTS
    assert table["time_s"].iloc[0] == pytest.approx(0.5)
    assert table["time_s"].iloc[-1] == pytest.approx(10.0)
    assert table["objective_median"].iloc[0] == 4.0
    assert table["objective_median"].iloc[-1] == 2.0


def test_median_realization_takes_lower_median_and_lowest_index():
    assert median_realization([_curve(0, 3.0), _curve(1, 1.0), _curve(2, 2.0)]).trial == 2
    assert median_realization([_curve(0, 4.0), _curve(1, 1.0), _curve(2, 2.0), _curve(3, 3.0)]).trial == 2
    assert median_realization([_curve(4, 2.0), _curve(2, 2.0), _curve(0, 9.0)]).trial == 2
    failed = _curve(5, 0.0)
    failed.error = "SolverError: boom"
    assert median_realization([failed]) is None


def test_trial_failure_is_captured():
    scenario = hover_in_place_dict()
    scenario["normalized_weights"] = [0.5, 0.5, 0.5]
    curve = run_trial(_TrialTask(scenario, "random", 0, 1, QUICK_SCP, QUICK_FILTER))
    assert not curve.ok
    assert "weights must sum to 1" in curve.error


def test_unexpected_trial_exception_is_captured(monkeypatch, caplog):
    def crash(initial, problem, settings):
        raise ZeroDivisionError("float division by zero")

    monkeypatch.setattr("core.benchmark.prox_linear_solve", crash)
    curve = run_trial(_TrialTask(hover_in_place_dict(), "random", 0, 1, QUICK_SCP, QUICK_FILTER))
    assert not curve.ok
    assert curve.error == "ZeroDivisionError: float division by zero"
    assert any(record.exc_info for record in caplog.records)


def test_crashed_trial_does_not_stop_the_benchmark(monkeypatch, hover_cfg):
    original = benchmark.prox_linear_solve
    calls = []

    def crash_first(initial, problem, settings):
        calls.append(1)
        if len(calls) == 1:
            raise ZeroDivisionError("float division by zero")
        return original(initial, problem, settings)

    monkeypatch.setattr(benchmark, "prox_linear_solve", crash_first)
    spec = BenchmarkSpec("hover_in_place.json", trials=2, seeds=(3, 4), modes=("random",), workers=1)
    outcome = run_benchmark(spec, hover_cfg, QUICK_SCP, QUICK_FILTER)
    entry = outcome.summary["modes"]["random"]
    assert entry["completed"] == 1
    assert entry["failures"] == [{"trial": 0, "seed": 3, "error": "ZeroDivisionError: float division by zero"}]


def test_curve_times_must_increase():
    curve = _curve(0, 1.0)
    curve.times = [0.2, 0.2]
    with pytest.raises(ConfigError):
        curve.validate()


def test_equal_seeds_give_equal_trials(hover_cfg):
    spec = BenchmarkSpec("hover_in_place.json", trials=2, seeds=(3, 3), modes=("random",), workers=1)
    outcome = run_benchmark(spec, hover_cfg, QUICK_SCP, QUICK_FILTER)
    first = outcome.trials[outcome.trials["trial"] == 0].drop(columns="trial").reset_index(drop=True)
    second = outcome.trials[outcome.trials["trial"] == 1].drop(columns="trial").reset_index(drop=True)
    pd.testing.assert_frame_equal(first, second)
    entry = outcome.summary["modes"]["random"]
    assert entry["completed"] == 2
    assert entry["failures"] == []
    assert entry["median_trial"] == 0
    assert "random" in outcome.median_samples
    assert outcome.timing_summary["modes"]["random"]["median_warmstart_time_s"] == 0.0


def test_warmstart_mode_records_generation_time(hover_cfg):
    spec = BenchmarkSpec("hover_in_place.json", trials=1, modes=("warmstart",), workers=1)
    outcome = run_benchmark(spec, hover_cfg, QUICK_SCP, QUICK_FILTER)
    (curve,) = outcome.curves
    assert curve.ok
    assert curve.warmstart_time_s > 0.0
    assert set(outcome.timing["warmstart_time_s"]) == {curve.warmstart_time_s}
