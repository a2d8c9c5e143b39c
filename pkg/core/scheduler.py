from __future__ import annotations

import time
from typing import Callable, Optional

from utils.helpers import safe_budget_seconds


class Scheduler:
    """Wall-clock budget countdown for an iterative solve.

    ``checkpoint()`` is called once per iteration; it reports the remaining
    seconds to ``on_tick`` and returns True once the budget is used up.
    """

    def __init__(
        self,
        on_tick: Optional[Callable[[float], None]] = None,
        clock: Callable[[], float] = time.perf_counter,
    ) -> None:
        self._clock = clock
        self._on_tick = on_tick
        self._budget = float("inf")
        self._started: Optional[float] = None
        self._stopped: Optional[float] = None

    def start(self, seconds: float) -> None:
        self._budget = safe_budget_seconds(seconds)
        self._started = self._clock()
        self._stopped = None

    def stop(self) -> None:
        if self._started is not None and self._stopped is None:
            self._stopped = self._clock()

    @property
    def running(self) -> bool:
        return self._started is not None and self._stopped is None

    def elapsed(self) -> float:
        if self._started is None:
            return 0.0
        end = self._stopped if self._stopped is not None else self._clock()
        return end - self._started

    def remaining(self) -> float:
        return max(self._budget - self.elapsed(), 0.0)

    def expired(self) -> bool:
        return self.elapsed() >= self._budget

    def checkpoint(self) -> bool:
        if self._on_tick:
            self._on_tick(self.remaining())
        return self.expired()
