"""CUSUM statistic and observation-adjusted control limits.

The statistic is the maximum suffix sum over windows of length k >= 1::

    s_n = max_{1<=k<=n} sum_{i=n-k+1}^{n} Z_i,   s_n = max(s_{n-1}, 0) + Z_n

The empty window (k = 0) is deliberately excluded: with it the statistic is
never negative, so a negative adjusted limit would alarm with no evidence.
The test stops at the first n with ``s_n >= c * g(Zbar_n)`` where ``Zbar_n``
is the running mean of the Z values (full mean, or a sliding mean over the
last ``ceil(a*c + 1)`` values).
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Optional, Union


@dataclass(frozen=True)
class GFunction:
    """``g(x) = 1 - u (x - mu0)`` above ``mu0``, and 1 at or below it."""

    u: float = 0.0
    mu0: float = 0.0

    def __post_init__(self):
        if not self.u >= 0.0:
            raise ValueError(f"slope u must be >= 0, got {self.u}")

    def __call__(self, x: float) -> float:
        return g_eval(self, x)

    @property
    def is_constant(self) -> bool:
        return self.u == 0.0

    def derivative(self, x: float) -> float:
        """One-sided derivative; the left value 0 is used at the kink."""
        return 0.0 if x <= self.mu0 else -self.u


CONSTANT_G = GFunction(0.0, 0.0)


def g_eval(g: GFunction, x: float) -> float:
    if x <= g.mu0:
        return 1.0
    return 1.0 - g.u * (x - g.mu0)


def g_root(g: GFunction) -> Optional[float]:
    if g.u == 0.0:
        return None
    return g.mu0 + 1.0 / g.u


@dataclass(frozen=True)
class FullMean:
    pass


@dataclass(frozen=True)
class Sliding:
    a: float

    def __post_init__(self):
        if not self.a > 0.0:
            raise ValueError(f"window coefficient a must be positive, got {self.a}")


WindowMode = Union[FullMean, Sliding]


def window_capacity(a: float, c: float) -> int:
    # ceil(a*c + 1): smallest integer >= a*c + 1
    return math.ceil(a * c + 1.0)


def sliding_len(n: int, a: float, c: float) -> int:
    if n < 1:
        raise ValueError("step index must be >= 1")
    return min(n, window_capacity(a, c))


@dataclass(frozen=True)
class DetectorConfig:
    c: float
    g: GFunction = CONSTANT_G
    window: WindowMode = FullMean()

    def __post_init__(self):
        if not self.c > 0.0:
            raise ValueError(f"control-limit scale c must be positive, got {self.c}")

    @property
    def capacity(self) -> Optional[int]:
        if isinstance(self.window, Sliding):
            return window_capacity(self.window.a, self.c)
        return None


class AlarmedStateError(RuntimeError):
    """Raised when a detector is stepped after it has alarmed."""


@dataclass
class DetectorState:
    n: int = 0
    s: float = 0.0
    total: float = 0.0
    window_sum: float = 0.0
    buffer: deque = field(default_factory=deque)
    alarmed: bool = False
    alarm_index: Optional[int] = None
    limit: float = math.nan

    def mean(self, config: DetectorConfig) -> float:
        if config.capacity is None:
            return self.total / self.n
        return self.window_sum / len(self.buffer)


def detector_step(state: DetectorState, config: DetectorConfig, z: float) -> bool:
    """Advance ``state`` by one LLR value in place; return the alarm flag."""
    if state.alarmed:
        raise AlarmedStateError(f"detector already alarmed at step {state.alarm_index}")
    z = float(z)
    state.n += 1
    # s_0 = 0 makes s_1 = z_1
    state.s = max(state.s, 0.0) + z
    state.total += z
    cap = config.capacity
    if cap is not None:
        state.buffer.append(z)
        state.window_sum += z
        if len(state.buffer) > cap:
            state.window_sum -= state.buffer.popleft()
    state.limit = config.c * g_eval(config.g, state.mean(config))
    if state.s >= state.limit:
        state.alarmed = True
        state.alarm_index = state.n
    return state.alarmed


STOPPED = "alarm"
CENSORED = "censored"
EXHAUSTED = "exhausted"


@dataclass(frozen=True)
class RunOutcome:
    status: str
    stop: Optional[int]
    n_processed: int
    final_statistic: float
    final_limit: float

    @property
    def alarmed(self) -> bool:
        return self.status == STOPPED


def run_to_alarm(config: DetectorConfig, z_source: Iterable[float], cap: int) -> RunOutcome:
    """Feed ``z_source`` until alarm, ``cap`` steps, or the source runs dry."""
    if cap < 1:
        raise ValueError("cap must be >= 1")
    state = DetectorState()
    it = iter(z_source)
    while state.n < cap:
        try:
            z = next(it)
        except StopIteration:
            return RunOutcome(EXHAUSTED, None, state.n, state.s, state.limit)
        if detector_step(state, config, z):
            return RunOutcome(STOPPED, state.n, state.n, state.s, state.limit)
    return RunOutcome(CENSORED, None, state.n, state.s, state.limit)


def brute_force_stat(z) -> float:
    """max over k >= 1 of the last-k partial sums, by explicit enumeration."""
    z = list(z)
    if not z:
        raise ValueError("empty sequence has no window maximum")
    n = len(z)
    return max(sum(z[n - k:]) for k in range(1, n + 1))
