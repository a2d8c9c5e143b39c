from __future__ import annotations

import argparse

from utils.constants import APP_NAME, DEFAULT_SCENARIO, ENV_PREFIX


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scenario", type=str, default=None, help=f"scenario JSON (default {DEFAULT_SCENARIO.name})")
    p.add_argument("--seed", type=int, default=None, help="base RNG seed")
    p.add_argument("--out", type=str, default=None, help="output directory")
    p.add_argument("--N", type=int, default=None, help="grid nodes N >= 2")
    p.add_argument("--gamma", type=float, default=None, help="relaxation of the integrated violation")
    p.add_argument("--np", dest="num_particles", type=int, default=None, help="warm-start particle count")
    p.add_argument("--workers", type=int, default=None, help="thread/process workers")
    p.add_argument("--log-level", dest="log_level", type=str, default=None)
    p.add_argument("--xlsx", action="store_true", help="also write a workbook with every table")


def _add_scp(p: argparse.ArgumentParser) -> None:
    p.add_argument("--beta", type=float, default=None, help="exact-penalty weight")
    p.add_argument("--rho", type=float, default=None, help="prox weight, rho >= 1/beta")
    p.add_argument("--budget", type=float, default=None, help="wall-clock budget per solve, seconds")
    p.add_argument("--max-iterations", dest="max_iterations", type=int, default=None)
    p.add_argument("--eps-tol", dest="eps_tol", type=float, default=None, help="squared-displacement tolerance")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog=APP_NAME.lower(),
        description="Continuous-time-safe multiagent quadrotor trajectories by prox-linear SCP.",
        epilog=f"Every numeric flag can also be set as {ENV_PREFIX}<FLAG> (e.g. {ENV_PREFIX}BETA); flags win.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    solve = sub.add_parser("solve", help="solve one scenario")
    _add_common(solve)
    _add_scp(solve)
    solve.add_argument("--init", choices=["warmstart", "random", "file"], default="warmstart")
    solve.add_argument("--init-file", dest="init_file", type=str, default=None, help="trajectory JSON for --init file")

    warm = sub.add_parser("warmstart", help="run the particle filter and write the selected trajectory")
    _add_common(warm)

    bench = sub.add_parser("benchmark", help="seeded Monte Carlo: warm start vs random initialization")
    _add_common(bench)
    _add_scp(bench)
    bench.add_argument("--trials", type=int, default=None)
    bench.add_argument("--modes", nargs="+", choices=["warmstart", "random"], default=None)

    post = sub.add_parser("postprocess", help="re-integrate a saved input sequence and audit it")
    _add_common(post)
    post.add_argument("--solution", type=str, required=True, help="trajectory JSON written by solve or warmstart")
    return p
