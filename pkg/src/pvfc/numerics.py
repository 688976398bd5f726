"""Small numerical kernel shared by the plant, controllers and synthesis code.

Fixed-step RK4, integer-sample delay lines, a cyclic Jacobi eigensolver for
the tiny symmetric matrices that show up in the LMIs, and a period-synchronous
DFT used for harmonic distortion figures.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

MAX_SYM_DIM = 8
SYM_RTOL = 1e-12


class IntegrationFault(ArithmeticError):
    """Derivative evaluation produced a non-finite value."""


class InvalidInput(ValueError):
    pass


class UndefinedTHD(ArithmeticError):
    """Fundamental amplitude is zero, so THD has no meaning."""


def rk4_step(derivative: Callable, state, t: float, dt: float):
    """Advance ``state`` by one classical Runge-Kutta step.

    ``derivative(t, x)`` must return an array-like of the same shape as ``x``.
    Scalars are accepted and returned as floats.
    """
    if not dt > 0:
        raise InvalidInput(f"dt must be positive, got {dt}")
    scalar = np.ndim(state) == 0
    x = np.asarray(state, dtype=float)

    def f(tt, xx):
        d = np.asarray(derivative(tt, xx), dtype=float)
        if not np.all(np.isfinite(d)):
            raise IntegrationFault(f"non-finite derivative at t={tt}")
        return d

    h2 = 0.5 * dt
    k1 = f(t, x)
    k2 = f(t + h2, x + h2 * k1)
    k3 = f(t + h2, x + h2 * k2)
    k4 = f(t + dt, x + dt * k3)
    out = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return float(out) if scalar else out


class SymMatrix:
    """Dense real symmetric matrix of dimension at most 8."""

    __slots__ = ("_a",)

    def __init__(self, entries):
        a = np.array(entries, dtype=float)
        if a.ndim == 0:
            a = a.reshape(1, 1)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise InvalidInput(f"expected a square matrix, got shape {a.shape}")
        n = a.shape[0]
        if n < 1 or n > MAX_SYM_DIM:
            raise InvalidInput(f"dimension {n} outside 1..{MAX_SYM_DIM}")
        if not np.all(np.isfinite(a)):
            raise InvalidInput("matrix has non-finite entries")
        scale = max(np.max(np.abs(a)), 1e-300)
        if np.max(np.abs(a - a.T)) > SYM_RTOL * scale:
            raise InvalidInput("matrix is not symmetric")
        a = 0.5 * (a + a.T)
        a.setflags(write=False)
        self._a = a

    @property
    def dim(self) -> int:
        return self._a.shape[0]

    @property
    def array(self) -> np.ndarray:
        return self._a

    def __array__(self, dtype=None, copy=None):
        return self._a if dtype is None else self._a.astype(dtype)

    def __repr__(self):
        return f"SymMatrix({self._a.tolist()})"


def jacobi_eigenvalues(a, tol: float = 1e-15, max_sweeps: int = 60) -> list[float]:
    """All eigenvalues of a small symmetric matrix by cyclic Jacobi rotations.

    Works on a list-of-lists copy; for n <= 8 this is faster than going
    through numpy for every rotation.
    """
    m = [list(map(float, row)) for row in np.asarray(a, dtype=float)]
    n = len(m)
    if n == 1:
        return [m[0][0]]
    fro = math.sqrt(sum(v * v for row in m for v in row))
    if fro == 0.0:
        return [0.0] * n
    thresh = tol * fro
    for _ in range(max_sweeps):
        off = 0.0
        for p in range(n - 1):
            mp = m[p]
            for q in range(p + 1, n):
                off += mp[q] * mp[q]
        if math.sqrt(2.0 * off) <= thresh:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = m[p][q]
                if abs(apq) <= 1e-300:
                    continue
                app = m[p][p]
                aqq = m[q][q]
                theta = (aqq - app) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                for k in range(n):
                    akp = m[k][p]
                    akq = m[k][q]
                    m[k][p] = c * akp - s * akq
                    m[k][q] = s * akp + c * akq
                rp = m[p]
                rq = m[q]
                for k in range(n):
                    apk = rp[k]
                    aqk = rq[k]
                    rp[k] = c * apk - s * aqk
                    rq[k] = s * apk + c * aqk
                m[p][q] = m[q][p] = 0.0
    return [m[i][i] for i in range(n)]


def sym_eig_extremes(m) -> tuple[float, float]:
    """Return ``(lambda_min, lambda_max)`` of a symmetric matrix."""
    if not isinstance(m, SymMatrix):
        m = SymMatrix(m)
    ev = jacobi_eigenvalues(m.array)
    return min(ev), max(ev)


class DelayLine:
    """Ring buffer returning the value pushed exactly ``length`` pushes ago.

    Before the line is primed, reads return ``initial``.
    """

    __slots__ = ("length", "initial", "_buf", "_idx", "_count")

    def __init__(self, length: int, initial: float = 0.0):
        if length < 1:
            raise InvalidInput("delay length must be a positive integer")
        self.length = int(length)
        self.initial = float(initial)
        self._buf = [self.initial] * self.length
        self._idx = 0
        self._count = 0

    @classmethod
    def from_seconds(cls, delay: float, dt: float, initial: float = 0.0) -> "DelayLine":
        n = round(delay / dt)
        if abs(n * dt - delay) >= dt / 2:
            raise InvalidInput("delay not representable on this grid")
        return cls(n, initial)

    @property
    def fill_count(self) -> int:
        return self._count

    def read(self) -> float:
        # slot at _idx holds the oldest value; it is overwritten by the next push
        return self._buf[self._idx]

    def push(self, value: float) -> None:
        self._buf[self._idx] = value
        self._idx += 1
        if self._idx == self.length:
            self._idx = 0
        if self._count < self.length:
            self._count += 1

    def shift(self, value: float) -> float:
        """Push ``value`` and return the sample it displaced (read-then-push)."""
        i = self._idx
        out = self._buf[i]
        self._buf[i] = value
        i += 1
        self._idx = 0 if i == self.length else i
        if self._count < self.length:
            self._count += 1
        return out


@dataclass(frozen=True)
class Spectrum:
    fundamental_hz: float
    magnitudes: tuple  # index 0 is harmonic 1

    def __post_init__(self):
        if any(m < 0 for m in self.magnitudes):
            raise InvalidInput("harmonic magnitudes must be non-negative")

    def harmonic(self, k: int) -> float:
        return self.magnitudes[k - 1]


def harmonic_spectrum(samples: Sequence[float], f0: float, fs: float, n_harmonics: int) -> Spectrum:
    x = np.asarray(samples, dtype=float)
    per_cycle = fs / f0
    n_cycles = len(x) / per_cycle
    if abs(n_cycles - round(n_cycles)) > 1e-6 or round(n_cycles) < 1:
        raise InvalidInput("window must span an integer number of fundamental periods")
    if fs <= 2 * n_harmonics * f0:
        raise InvalidInput("sampling rate too low for the requested harmonics")
    n = len(x)
    c = int(round(n_cycles))
    X = np.fft.rfft(x)
    mags = tuple(float(2.0 * abs(X[k * c]) / n) for k in range(1, n_harmonics + 1))
    return Spectrum(f0, mags)


def thd(samples: Sequence[float], f0: float, fs: float, n_harmonics: int = 40) -> float:
    """Total harmonic distortion in percent over a period-synchronous window."""
    spec = harmonic_spectrum(samples, f0, fs, n_harmonics)
    a1 = spec.magnitudes[0]
    rms = math.sqrt(float(np.mean(np.square(samples))))
    if a1 == 0.0 or a1 <= 1e-12 * rms:
        raise UndefinedTHD("zero fundamental amplitude")
    h = np.asarray(spec.magnitudes[1:])
    return float(100.0 * math.sqrt(float(np.sum(h * h))) / a1)
