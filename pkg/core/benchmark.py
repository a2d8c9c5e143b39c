"""Seeded Monte Carlo comparison of warm-started and randomly initialized solves."""

from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from core.errors import ConfigError, QuadScpError
from core.scenario import ScenarioConfig, scenario_from_dict, scenario_to_dict
from core.scp import ScpSettings, prox_linear_solve, random_initialization
from core.transcription import ShootingProblem, rollout_and_report
from core.warmstart import FilterSettings, generate_warmstart
from utils.constants import (
    ITERATION_QUANTILE_COLUMNS,
    QUANTILES,
    SAMPLES_PER_INTERVAL,
    TIME_QUANTILE_COLUMNS,
    TIMING_COLUMNS,
    TRIAL_COLUMNS,
)
from utils.helpers import ProgressCallback, quantile_table, with_progress

logger = logging.getLogger(__name__)

MODES = ("warmstart", "random")
TIME_GRID_POINTS = 50


@dataclass(frozen=True)
class BenchmarkSpec:
    scenario_path: str
    trials: int = 10
    base_seed: int = 0
    seeds: Tuple[int, ...] = ()
    budget_seconds: float = 120.0
    modes: Tuple[str, ...] = MODES
    out_dir: str = "out"
    workers: int = 0  # 0 means one per core

    def trial_seeds(self) -> Tuple[int, ...]:
        return tuple(self.seeds) if self.seeds else tuple(self.base_seed + i for i in range(self.trials))

    def worker_count(self) -> int:
        return self.workers if self.workers > 0 else (os.cpu_count() or 1)

    def validate(self) -> "BenchmarkSpec":
        if self.trials < 1:
            raise ConfigError("trial count must be at least 1")
        if not self.budget_seconds > 0.0:
            raise ConfigError("budget must be positive")
        if self.seeds and len(self.seeds) != self.trials:
            raise ConfigError("one seed per trial", f"{len(self.seeds)} seeds for {self.trials} trials")
        unknown = [m for m in self.modes if m not in MODES]
        if unknown or not self.modes:
            raise ConfigError("modes must be drawn from warmstart/random", f"got {list(self.modes)}")
        return self


@dataclass
class ConvergenceCurve:
    mode: str
    trial: int
    seed: int
    iterations: List[int] = field(default_factory=list)
    times: List[float] = field(default_factory=list)
    objectives: List[float] = field(default_factory=list)
    violations: List[float] = field(default_factory=list)
    slack_masses: List[float] = field(default_factory=list)
    warmstart_time_s: float = 0.0
    final_eta: Optional[List[List[float]]] = None
    final: Dict[str, Any] = field(default_factory=dict)
    error: Optional[str] = None

    def validate(self) -> "ConvergenceCurve":
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ConfigError("times must be strictly increasing within a trial", f"{self.mode} trial {self.trial}")
        return self

    @property
    def ok(self) -> bool:
        return self.error is None and bool(self.iterations)


@dataclass(frozen=True)
class _TrialTask:
    scenario: Dict[str, Any]
    mode: str
    trial: int
    seed: int
    scp: ScpSettings
    filter: FilterSettings


def run_trial(task: _TrialTask) -> ConvergenceCurve:
    """One seeded solve; failures are captured on the curve instead of raised."""
    curve = ConvergenceCurve(mode=task.mode, trial=task.trial, seed=task.seed)
    try:
        cfg = scenario_from_dict(task.scenario)
        problem = ShootingProblem.build(cfg, task.scp.N)
        if task.mode == "warmstart":
            warm = generate_warmstart(problem, task.filter, seed=task.seed, gamma=task.scp.gamma)
            initial = warm.trajectory
            curve.warmstart_time_s = warm.elapsed_s
        else:
            initial = random_initialization(problem, np.random.default_rng(task.seed))
        trajectory, report, history = prox_linear_solve(initial, problem, task.scp)
    except QuadScpError as exc:
        curve.error = f"{type(exc).__name__}: {exc}"
        logger.warning("%s trial %d (seed %d) failed: %s", task.mode, task.trial, task.seed, curve.error)
        return curve
    except Exception as exc:
        curve.error = f"{type(exc).__name__}: {exc}"
        logger.exception("%s trial %d (seed %d) crashed", task.mode, task.trial, task.seed)
        return curve
    for record in history:
        curve.iterations.append(record.iteration)
        curve.times.append(record.time_s)
        curve.objectives.append(record.objective)
        curve.violations.append(record.violation)
        curve.slack_masses.append(record.slack_mass)
    curve.final_eta = trajectory.eta.tolist()
    curve.final = {
        "objective": report.objective,
        "violation": report.violation,
        "final_time_s": report.final_time,
        "iterations": report.iterations,
        "status": report.status,
        "audit": report.audit,
    }
    logger.info(
        "%s trial %d (seed %d): objective %.6g violation %.3e after %d iterations",
        task.mode,
        task.trial,
        task.seed,
        report.objective,
        report.violation,
        report.iterations,
    )
    return curve.validate()


def trial_frame(curves: Sequence[ConvergenceCurve]) -> pd.DataFrame:
    rows = []
    for c in curves:
        for it, obj, vio, slack in zip(c.iterations, c.objectives, c.violations, c.slack_masses):
            rows.append([c.trial, c.seed, c.mode, it, obj, vio, slack])
    return pd.DataFrame(rows, columns=TRIAL_COLUMNS)


def timing_frame(curves: Sequence[ConvergenceCurve]) -> pd.DataFrame:
    rows = []
    for c in curves:
        for it, t in zip(c.iterations, c.times):
            rows.append([c.trial, c.seed, c.mode, it, t, c.warmstart_time_s])
    return pd.DataFrame(rows, columns=TIMING_COLUMNS)


def _quantile_columns(values: pd.DataFrame, by: List[str]) -> pd.DataFrame:
    merged = None
    for metric in ("objective", "violation"):
        table = quantile_table(values, by, metric, QUANTILES)
        table = table.rename(
            columns={
                f"q{QUANTILES[0]:g}": f"{metric}_lower",
                f"q{QUANTILES[1]:g}": f"{metric}_median",
                f"q{QUANTILES[2]:g}": f"{metric}_upper",
            }
        )
        merged = table if merged is None else merged.merge(table, on=by)
    return merged


def iteration_quantiles(trials: pd.DataFrame) -> pd.DataFrame:
    """Quantiles across trials per iteration; a finished trial keeps contributing its last values."""
    if trials.empty:
        return pd.DataFrame(columns=ITERATION_QUANTILE_COLUMNS)
    filled = []
    for mode, group in trials.groupby("mode", sort=True):
        last = int(group["iteration"].max())
        for _, one in group.groupby("trial", sort=True):
            one = one.set_index("iteration").reindex(range(1, last + 1)).ffill()
            one["mode"] = mode
            filled.append(one.rename_axis("iteration").reset_index())
    full = pd.concat(filled, ignore_index=True)
    return _quantile_columns(full, ["mode", "iteration"])[ITERATION_QUANTILE_COLUMNS]


def time_quantiles(trials: pd.DataFrame, timing: pd.DataFrame, budget_seconds: float) -> pd.DataFrame:
    """Quantiles across trials on a log-spaced wall-clock grid; warm-start generation time counts toward a run."""
    if trials.empty:
        return pd.DataFrame(columns=TIME_QUANTILE_COLUMNS)
    joined = trials.merge(timing, on=["trial", "seed", "mode", "iteration"])
    joined["elapsed"] = joined["time_s"] + joined["warmstart_time_s"]
    start = max(float(joined["elapsed"].min()), 1e-3)
    stop = max(float(joined["elapsed"].max()), budget_seconds if np.isfinite(budget_seconds) else start)
    grid = np.geomspace(start, max(stop, start * (1.0 + 1e-9)), TIME_GRID_POINTS)
    rows = []
    for (mode, trial), one in joined.groupby(["mode", "trial"], sort=True):
        one = one.sort_values("elapsed")
        idx = np.searchsorted(one["elapsed"].to_numpy(), grid, side="right") - 1
        for t, i in zip(grid, idx):
            if i >= 0:
                rows.append({"mode": mode, "time_s": float(t), "objective": one["objective"].iloc[i], "violation": one["violation"].iloc[i]})
    sampled = pd.DataFrame(rows)
    if sampled.empty:
        return pd.DataFrame(columns=TIME_QUANTILE_COLUMNS)
    return _quantile_columns(sampled, ["mode", "time_s"])[TIME_QUANTILE_COLUMNS]


def median_realization(curves: Sequence[ConvergenceCurve]) -> Optional[ConvergenceCurve]:
    """Trial whose final objective is the (lower) median; ties go to the lowest trial index."""
    finished = sorted((c for c in curves if c.ok), key=lambda c: (c.objectives[-1], c.trial))
    if not finished:
        return None
    value = finished[(len(finished) - 1) // 2].objectives[-1]
    return next(c for c in finished if c.objectives[-1] == value)


@dataclass
class BenchmarkOutcome:
    spec: BenchmarkSpec
    curves: List[ConvergenceCurve]
    trials: pd.DataFrame
    timing: pd.DataFrame
    iteration_quantiles: pd.DataFrame
    time_quantiles: pd.DataFrame
    summary: Dict[str, Any]
    timing_summary: Dict[str, Any]
    median_samples: Dict[str, Any] = field(default_factory=dict)


def run_benchmark(
    spec: BenchmarkSpec,
    cfg: ScenarioConfig,
    scp: ScpSettings,
    filter_settings: FilterSettings,
    progress: Optional[ProgressCallback] = None,
) -> BenchmarkOutcome:
    spec = spec.validate()
    scp = scp.validate()
    filter_settings = filter_settings.validate()
    scenario = scenario_to_dict(cfg)
    tasks = [
        _TrialTask(scenario=scenario, mode=mode, trial=i, seed=seed, scp=scp, filter=filter_settings)
        for mode in spec.modes
        for i, seed in enumerate(spec.trial_seeds())
    ]
    workers = min(spec.worker_count(), len(tasks))
    logger.info("benchmark: %d trials x %d modes on %d workers", spec.trials, len(spec.modes), workers)

    curves: List[ConvergenceCurve] = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for done, curve in enumerate(pool.map(run_trial, tasks), start=1):
                curves.append(curve)
                with_progress(progress, "benchmark", int(100 * done / len(tasks)), f"{curve.mode} trial {curve.trial}")
    else:
        for done, task in enumerate(tasks, start=1):
            curves.append(run_trial(task))
            with_progress(progress, "benchmark", int(100 * done / len(tasks)), f"{task.mode} trial {task.trial}")

    trials = trial_frame(curves)
    timing = timing_frame(curves)
    problem = ShootingProblem.build(cfg, scp.N)
    summary: Dict[str, Any] = {
        "scenario": spec.scenario_path,
        "trials": spec.trials,
        "seeds": list(spec.trial_seeds()),
        "modes": {},
        "settings": {"beta": scp.beta, "rho": scp.rho, "gamma": scp.gamma, "N": scp.N,
                     "max_iterations": scp.max_iterations, "eps_tol": scp.eps_tol,
                     "num_particles": filter_settings.num_particles},
    }
    timing_summary: Dict[str, Any] = {"budget_seconds": spec.budget_seconds, "modes": {}}
    median_samples: Dict[str, Any] = {}
    for mode in spec.modes:
        mode_curves = [c for c in curves if c.mode == mode]
        ok = [c for c in mode_curves if c.ok]
        median = median_realization(mode_curves)
        entry: Dict[str, Any] = {
            "completed": len(ok),
            "failures": [{"trial": c.trial, "seed": c.seed, "error": c.error} for c in mode_curves if not c.ok],
            "final_objective_median": float(np.median([c.objectives[-1] for c in ok])) if ok else None,
            "final_violation_median": float(np.median([c.violations[-1] for c in ok])) if ok else None,
            "median_trial": median.trial if median else None,
            "median_final": median.final if median else None,
        }
        summary["modes"][mode] = entry
        timing_summary["modes"][mode] = {
            "median_warmstart_time_s": float(np.median([c.warmstart_time_s for c in ok])) if ok else None,
            "median_solve_time_s": float(np.median([c.times[-1] for c in ok])) if ok else None,
        }
        if median is not None and median.final_eta is not None:
            samples, _ = rollout_and_report(problem, np.asarray(median.final_eta), SAMPLES_PER_INTERVAL)
            median_samples[mode] = samples

    return BenchmarkOutcome(
        spec=spec,
        curves=curves,
        trials=trials,
        timing=timing,
        iteration_quantiles=iteration_quantiles(trials),
        time_quantiles=time_quantiles(trials, timing, scp.budget_seconds),
        summary=summary,
        timing_summary=timing_summary,
        median_samples=median_samples,
    )
