import logging
import os
from typing import Callable, Optional, Sequence

import numpy as np
import pandas as pd

from .constants import ENV_PREFIX

ProgressCallback = Callable[[str, int, str], None]


def get_env_str(name: str) -> Optional[str]:
    value = os.getenv(f"{ENV_PREFIX}{name}", "").strip()
    return value or None


def get_env_float(name: str, default: Optional[float] = None) -> Optional[float]:
    raw = get_env_str(name)
    if raw is None:
        return default
    try:
        return float(raw)
    except ValueError:
        logging.getLogger(__name__).warning("ignoring %s%s=%r (not a number)", ENV_PREFIX, name, raw)
        return default


def get_env_int(name: str, default: Optional[int] = None) -> Optional[int]:
    value = get_env_float(name, None)
    if value is None:
        return default
    return int(value)


def safe_budget_seconds(value: float | int | str) -> float:
    try:
        seconds = float(value)
    except (TypeError, ValueError):
        return 1.0
    if not np.isfinite(seconds):
        return float("inf")
    return max(seconds, 1e-3)


def with_progress(progress: Optional[ProgressCallback], phase: str, percent: int, message: str) -> None:
    if progress:
        progress(phase, max(0, min(100, int(percent))), message)


def configure_logging(level: str | int = "INFO") -> None:
    if isinstance(level, str):
        level = logging.getLevelName(level.upper())
        if not isinstance(level, int):
            level = logging.INFO
    root = logging.getLogger()
    for handler in list(root.handlers):
        root.removeHandler(handler)
    handler = logging.StreamHandler()
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    root.addHandler(handler)
    root.setLevel(level)


def positive_part(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0)


def safe_unit(z: np.ndarray) -> np.ndarray:
    """z/‖z‖ along the last axis, 0 where ‖z‖ = 0."""
    norm = np.linalg.norm(z, axis=-1, keepdims=True)
    out = np.zeros_like(z, dtype=float)
    np.divide(z, norm, out=out, where=norm > 0.0)
    return out


def quantile_table(values: pd.DataFrame, by: Sequence[str], column: str, quantiles: Sequence[float]) -> pd.DataFrame:
    """Linear-interpolation quantiles of `column` grouped by `by`, one output column per quantile."""
    grouped = values.groupby(list(by), sort=True)[column]
    frame = grouped.quantile(list(quantiles), interpolation="linear").unstack(-1)
    frame.columns = [f"q{q:g}" for q in quantiles]
    return frame.reset_index()
