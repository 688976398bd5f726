"""Frame transforms, instantaneous power and a PLL-free voltage-sag detector."""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import NamedTuple

SQRT3 = math.sqrt(3.0)

SAG_ENTER = 0.90
SAG_EXIT = 0.95


class AlphaBeta(NamedTuple):
    alpha: float
    beta: float

    @property
    def magnitude(self) -> float:
        return math.hypot(self.alpha, self.beta)


def clarke(a: float, b: float, c: float) -> AlphaBeta:
    """Amplitude-invariant Clarke transform."""
    return AlphaBeta((2.0 / 3.0) * (a - 0.5 * b - 0.5 * c), (b - c) / SQRT3)


def inverse_clarke(v: AlphaBeta) -> tuple[float, float, float]:
    """Phase quantities of a zero-sequence-free αβ pair."""
    al, be = v
    return al, -0.5 * al + 0.5 * SQRT3 * be, -0.5 * al - 0.5 * SQRT3 * be


def instantaneous_pq(v: AlphaBeta, i: AlphaBeta) -> tuple[float, float]:
    """Instantaneous real and reactive power with the 3/2 amplitude-invariant factor."""
    return 1.5 * (v[0] * i[0] + v[1] * i[1]), 1.5 * (v[1] * i[0] - v[0] * i[1])


class SlidingPeak:
    """Running maximum of |x| over the last ``window`` samples (monotone deque)."""

    __slots__ = ("window", "_q", "_n")

    def __init__(self, window: int, initial: float | None = None):
        if window < 1:
            raise ValueError("window must be positive")
        self.window = window
        self._q: deque = deque()
        self._n = 0
        if initial is not None:
            # stands in for the unseen history until a full window has been pushed
            self._q.append((-1, abs(initial)))

    def push(self, x: float) -> float:
        x = abs(x)
        q = self._q
        while q and q[-1][1] <= x:
            q.pop()
        q.append((self._n, x))
        if q[0][0] <= self._n - self.window:
            q.popleft()
        self._n += 1
        return q[0][1]

    @property
    def primed(self) -> bool:
        return self._n >= self.window

    @property
    def value(self) -> float:
        return self._q[0][1] if self._q else 0.0


class AmplitudeTracker:
    """Per-phase one-cycle peak estimate of the grid voltage amplitude."""

    def __init__(self, samples_per_cycle: int, nominal: float):
        self.nominal = nominal
        self._peaks = [SlidingPeak(samples_per_cycle, nominal) for _ in range(3)]

    def push(self, a: float, b: float, c: float) -> tuple[float, float, float]:
        pa, pb, pc = self._peaks
        return pa.push(a), pb.push(b), pc.push(c)

    @property
    def amplitudes(self) -> tuple[float, float, float]:
        return tuple(p.value for p in self._peaks)


@dataclass(frozen=True)
class SagStatus:
    active: bool
    amplitudes: tuple  # per-phase estimates, V
    min_fraction: float
    onset: float | None = None
    nominal: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.min_fraction <= 1.0 + 1e-9:
            raise ValueError("retained fraction must lie in (0, 1]")

    @property
    def fractions(self) -> tuple[float, float, float]:
        return tuple(min(a / self.nominal, 1.0) for a in self.amplitudes)


def detect_sag(amplitudes, nominal: float, previous: SagStatus | None = None, t: float = 0.0,
               enter: float = SAG_ENTER, leave: float = SAG_EXIT) -> SagStatus:
    """Hysteretic sag flag from per-phase amplitude estimates.

    A sag starts when any phase drops below ``enter`` pu and ends only once every
    phase is back above ``leave`` pu.
    """
    fr = [a / nominal for a in amplitudes]
    fmin = max(min(min(fr), 1.0), 1e-6)
    was = previous is not None and previous.active
    if was:
        active = min(fr) <= leave
    else:
        active = min(fr) < enter
    if active and was:
        onset = previous.onset
    elif active:
        onset = t
    else:
        onset = None
    return SagStatus(active, tuple(amplitudes), fmin, onset, nominal)
