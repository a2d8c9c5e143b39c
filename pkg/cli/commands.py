from __future__ import annotations

import argparse
import logging
from dataclasses import replace
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Sequence

import numpy as np

from cli.parser import build_parser
from core import report_generator
from core.benchmark import BenchmarkSpec, run_benchmark
from core.errors import ConfigError, QuadScpError
from core.scenario import ScenarioConfig, load_scenario
from core.scp import ScpSettings, prox_linear_solve, random_initialization
from core.transcription import DiscreteTrajectory, ShootingProblem, rollout_and_report
from core.warmstart import FilterSettings, generate_warmstart
from data.csv_manager import write_csv, write_workbook
from utils.constants import (
    AUDIT_COLUMNS,
    CONVERGENCE_COLUMNS,
    DEFAULT_BETA,
    DEFAULT_BUDGET_SECONDS,
    DEFAULT_EPS_TOL,
    DEFAULT_GAMMA,
    DEFAULT_MAX_ITERATIONS,
    DEFAULT_N,
    DEFAULT_NUM_PARTICLES,
    DEFAULT_RHO,
    DEFAULT_SCENARIO,
    FILTER_DIAGNOSTIC_COLUMNS,
    ITERATION_QUANTILE_COLUMNS,
    PAIR_COLUMNS,
    SOLVE_TIMING_COLUMNS,
    STATUS_PHASES,
    TIME_QUANTILE_COLUMNS,
    TIMING_COLUMNS,
    TRAJECTORY_COLUMNS,
    TRIAL_COLUMNS,
)
from utils.helpers import configure_logging, get_env_float, get_env_int, get_env_str
from utils.state_store import load_json, save_json

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_SOLVER = 1
EXIT_CONFIG = 2


def _pick_float(value: Optional[float], env: str, default: float) -> float:
    return value if value is not None else get_env_float(env, default)


def _pick_int(value: Optional[int], env: str, default: int) -> int:
    return value if value is not None else get_env_int(env, default)


def _scenario_path(args: argparse.Namespace) -> Path:
    return Path(args.scenario or get_env_str("SCENARIO") or DEFAULT_SCENARIO)


def _out_dir(args: argparse.Namespace) -> Path:
    return Path(args.out or get_env_str("OUT") or "out")


def _seed(args: argparse.Namespace) -> int:
    return _pick_int(args.seed, "SEED", 0)


def scp_settings(args: argparse.Namespace, default_workers: int = 1) -> ScpSettings:
    return ScpSettings(
        beta=_pick_float(getattr(args, "beta", None), "BETA", DEFAULT_BETA),
        rho=_pick_float(getattr(args, "rho", None), "RHO", DEFAULT_RHO),
        gamma=_pick_float(args.gamma, "GAMMA", DEFAULT_GAMMA),
        max_iterations=_pick_int(getattr(args, "max_iterations", None), "MAX_ITERATIONS", DEFAULT_MAX_ITERATIONS),
        eps_tol=_pick_float(getattr(args, "eps_tol", None), "EPS_TOL", DEFAULT_EPS_TOL),
        budget_seconds=_pick_float(getattr(args, "budget", None), "BUDGET", DEFAULT_BUDGET_SECONDS),
        N=_pick_int(args.N, "N", DEFAULT_N),
        workers=_pick_int(args.workers, "WORKERS", default_workers),
    ).validate()


def filter_settings(args: argparse.Namespace, default_workers: int = 1) -> FilterSettings:
    return FilterSettings(
        num_particles=_pick_int(args.num_particles, "NP", DEFAULT_NUM_PARTICLES),
        workers=_pick_int(args.workers, "WORKERS", default_workers),
    ).validate()


def _log_progress(phase: str, percent: int, message: str) -> None:
    logger.debug("[%s %3d%%] %s", STATUS_PHASES.get(phase, phase), percent, message)


def _write_samples(out: Path, cfg: ScenarioConfig, samples, frames: Dict[str, Any]) -> None:
    frames["trajectory"] = report_generator.trajectory_frame(cfg, samples)
    frames["audit"] = report_generator.audit_frame(cfg, samples)
    frames["pairs"] = report_generator.pair_frame(cfg, samples)
    write_csv(frames["trajectory"], out / "trajectory.csv", TRAJECTORY_COLUMNS)
    write_csv(frames["audit"], out / "audit.csv", AUDIT_COLUMNS)
    write_csv(frames["pairs"], out / "pairs.csv", PAIR_COLUMNS)


def _maybe_workbook(args: argparse.Namespace, out: Path, frames: Dict[str, Any]) -> None:
    if args.xlsx:
        path = write_workbook(out / "tables.xlsx", frames)
        logger.info("workbook written to %s", path)


def cmd_solve(args: argparse.Namespace) -> int:
    scenario = _scenario_path(args)
    cfg = load_scenario(scenario)
    settings = scp_settings(args)
    seed = _seed(args)
    out = _out_dir(args)
    problem = ShootingProblem.build(cfg, settings.N)

    warm_time = 0.0
    if args.init == "warmstart":
        warm = generate_warmstart(problem, filter_settings(args), seed=seed, gamma=settings.gamma, progress=_log_progress)
        initial, warm_time = warm.trajectory, warm.elapsed_s
    elif args.init == "random":
        initial = random_initialization(problem, np.random.default_rng(seed))
    else:
        if not args.init_file:
            raise ConfigError("--init file requires --init-file")
        initial = DiscreteTrajectory.from_dict(load_json(args.init_file))

    trajectory, report, history = prox_linear_solve(initial, problem, settings, progress=_log_progress)

    frames: Dict[str, Any] = {}
    _write_samples(out, cfg, report.samples, frames)
    frames["convergence"] = report_generator.convergence_frame(history)
    write_csv(frames["convergence"], out / "convergence.csv", CONVERGENCE_COLUMNS)
    write_csv(report_generator.timing_frame(history, warm_time), out / "timing.csv", SOLVE_TIMING_COLUMNS)
    save_json(out / "solution.json", trajectory.to_dict())
    save_json(
        out / "report.json",
        report_generator.report_payload(report, command="solve", scenario=str(scenario), seed=seed, init=args.init),
    )
    _maybe_workbook(args, out, frames)
    logger.info("solve: objective %.6g, violation %.3e, outputs in %s", report.objective, report.violation, out)
    return EXIT_OK


def cmd_warmstart(args: argparse.Namespace) -> int:
    scenario = _scenario_path(args)
    cfg = load_scenario(scenario)
    settings = filter_settings(args)
    seed = _seed(args)
    out = _out_dir(args)
    problem = ShootingProblem.build(cfg, _pick_int(args.N, "N", DEFAULT_N))
    gamma = _pick_float(args.gamma, "GAMMA", DEFAULT_GAMMA)

    warm = generate_warmstart(problem, settings, seed=seed, gamma=gamma, progress=_log_progress)
    _, report = rollout_and_report(problem, warm.trajectory.eta)

    frames: Dict[str, Any] = {}
    _write_samples(out, cfg, report.samples, frames)
    frames["filter"] = report_generator.filter_frame(warm.diagnostics)
    write_csv(frames["filter"], out / "filter_diagnostics.csv", FILTER_DIAGNOSTIC_COLUMNS)
    save_json(out / "solution.json", warm.trajectory.to_dict())
    save_json(
        out / "warmstart.json",
        report_generator.report_payload(
            report,
            command="warmstart",
            scenario=str(scenario),
            seed=seed,
            init="warmstart",
            extra={
                "best_particle": warm.best_index,
                "scores": warm.scores.tolist(),
                "resample_events": int(sum(bool(d["resampled"]) for d in warm.diagnostics)),
            },
        ),
    )
    save_json(out / "warmstart_timing.json", {"elapsed_s": warm.elapsed_s})
    _maybe_workbook(args, out, frames)
    logger.info("warmstart: particle %d selected, outputs in %s", warm.best_index, out)
    return EXIT_OK


def cmd_benchmark(args: argparse.Namespace) -> int:
    scenario = _scenario_path(args)
    cfg = load_scenario(scenario)
    settings = scp_settings(args, default_workers=1)
    out = _out_dir(args)
    trials = _pick_int(args.trials, "TRIALS", 10)
    spec = BenchmarkSpec(
        scenario_path=str(scenario),
        trials=trials,
        base_seed=_seed(args),
        budget_seconds=settings.budget_seconds,
        modes=tuple(args.modes) if args.modes else ("warmstart", "random"),
        out_dir=str(out),
        workers=_pick_int(args.workers, "WORKERS", 0),
    )
    # trials already run in parallel; keep the per-trial inner loops serial
    inner = replace(settings, workers=1)
    filt = replace(filter_settings(args), workers=1)
    outcome = run_benchmark(spec, cfg, inner, filt, progress=_log_progress)

    frames: Dict[str, Any] = {
        "trials": outcome.trials,
        "timing": outcome.timing,
        "iteration_quantiles": outcome.iteration_quantiles,
        "time_quantiles": outcome.time_quantiles,
    }
    write_csv(outcome.trials, out / "trials.csv", TRIAL_COLUMNS)
    write_csv(outcome.timing, out / "timing.csv", TIMING_COLUMNS)
    write_csv(outcome.iteration_quantiles, out / "convergence_quantiles.csv", ITERATION_QUANTILE_COLUMNS)
    write_csv(outcome.time_quantiles, out / "convergence_time_quantiles.csv", TIME_QUANTILE_COLUMNS)
    save_json(out / "benchmark.json", outcome.summary)
    save_json(out / "timing_summary.json", outcome.timing_summary)
    for curve in outcome.curves:
        save_json(
            out / "trials" / f"{curve.mode}_{curve.trial:03d}.json",
            {
                "mode": curve.mode,
                "trial": curve.trial,
                "seed": curve.seed,
                "iterations": curve.iterations,
                "objectives": curve.objectives,
                "violations": curve.violations,
                "slack_masses": curve.slack_masses,
                "eta": curve.final_eta,
                "final": curve.final,
                "error": curve.error,
            },
        )
    for mode, samples in outcome.median_samples.items():
        frame = report_generator.trajectory_frame(cfg, samples)
        frames[f"median_{mode}"] = frame
        write_csv(frame, out / f"median_{mode}_trajectory.csv", TRAJECTORY_COLUMNS)
    _maybe_workbook(args, out, frames)

    completed = sum(entry["completed"] for entry in outcome.summary["modes"].values())
    logger.info("benchmark: %d trials completed, outputs in %s", completed, out)
    return EXIT_OK if completed else EXIT_SOLVER


def cmd_postprocess(args: argparse.Namespace) -> int:
    scenario = _scenario_path(args)
    cfg = load_scenario(scenario)
    out = _out_dir(args)
    path = Path(args.solution)
    if not path.exists():
        raise FileNotFoundError(f"solution not found: {path}")
    trajectory = DiscreteTrajectory.from_dict(load_json(path))
    problem = ShootingProblem.build(cfg, trajectory.N)
    trajectory.check(cfg, problem.grid)
    samples, report = rollout_and_report(problem, trajectory.eta)

    frames: Dict[str, Any] = {}
    _write_samples(out, cfg, samples, frames)
    save_json(
        out / "report.json",
        report_generator.report_payload(report, command="postprocess", scenario=str(scenario)),
    )
    _maybe_workbook(args, out, frames)
    logger.info("postprocess: objective %.6g, violation %.3e", report.objective, report.violation)
    return EXIT_OK


COMMANDS: Dict[str, Callable[[argparse.Namespace], int]] = {
    "solve": cmd_solve,
    "warmstart": cmd_warmstart,
    "benchmark": cmd_benchmark,
    "postprocess": cmd_postprocess,
}


def _write_error(args: argparse.Namespace, exc: BaseException) -> None:
    try:
        save_json(
            _out_dir(args) / "error.json",
            {"error": type(exc).__name__, "message": str(exc), "command": args.command},
        )
    except OSError as io_exc:
        logger.error("could not write error.json: %s", io_exc)


def run(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(list(argv) if argv is not None else None)
    configure_logging(args.log_level or get_env_str("LOG_LEVEL") or "INFO")
    try:
        return COMMANDS[args.command](args)
    except FileNotFoundError as exc:
        message = str(exc) if "not found" in str(exc) else f"file not found: {exc.filename}"
        logger.error(message)
        _write_error(args, FileNotFoundError(message))
        return EXIT_CONFIG
    except ConfigError as exc:
        logger.error("invalid configuration: %s", exc)
        _write_error(args, exc)
        return EXIT_CONFIG
    except ValueError as exc:
        logger.error("unreadable input: %s", exc)
        _write_error(args, ConfigError("malformed input file", str(exc)))
        return EXIT_CONFIG
    except QuadScpError as exc:
        logger.error("%s failed: %s", args.command, exc)
        _write_error(args, exc)
        return EXIT_SOLVER
    except Exception as exc:
        logger.exception("%s failed unexpectedly", args.command)
        _write_error(args, exc)
        return EXIT_SOLVER
