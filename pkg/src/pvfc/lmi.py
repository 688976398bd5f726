"""LMI feasibility, minimisation and certificate checks for the two synthesis problems.

Matrix inequalities are written with :class:`Affine`, a tiny expression type
whose entries are affine in named scalar decision variables.  Every LMI here is
posed as ``M(x) < 0`` and judged by the largest eigenvalue of the assembled
matrix.  The solver is derivative free: Nelder-Mead with restarts on a
normalised max-eigenvalue merit, plus bisection for linear objectives.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import minimize

from .numerics import InvalidInput, SymMatrix, jacobi_eigenvalues

MARGIN_FLOOR = 1e-6
PD_FLOOR = 1e-9  # lambda_min >= PD_FLOOR * trace


class SynthesisFailure(RuntimeError):
    """No strictly feasible point was found."""

    def __init__(self, message: str, best_margin: float = math.inf):
        super().__init__(f"{message} (best margin {best_margin:.3g})")
        self.best_margin = best_margin


class IncompleteAssignment(KeyError):
    pass


# --------------------------------------------------------------------------
# affine matrix expressions


class Affine:
    """Matrix expression ``const + sum_k x_k * coef[k]``."""

    __slots__ = ("const", "coef")
    __array_ufunc__ = None  # make ``ndarray @ Affine`` defer to __rmatmul__

    def __init__(self, const, coef: Mapping[str, np.ndarray] | None = None):
        self.const = np.atleast_2d(np.asarray(const, dtype=float))
        self.coef = {k: np.atleast_2d(np.asarray(v, dtype=float)) for k, v in (coef or {}).items()}

    @classmethod
    def scalar(cls, name: str) -> "Affine":
        return cls(np.zeros((1, 1)), {name: np.ones((1, 1))})

    @classmethod
    def symmetric(cls, prefix: str, n: int) -> tuple["Affine", list[str]]:
        """Symmetric n x n matrix variable, one scalar per upper-triangle entry."""
        names, coef = [], {}
        for i in range(n):
            for j in range(i, n):
                name = f"{prefix}.{i}.{j}"
                e = np.zeros((n, n))
                e[i, j] = e[j, i] = 1.0
                names.append(name)
                coef[name] = e
        return cls(np.zeros((n, n)), coef), names

    @classmethod
    def full(cls, prefix: str, rows: int, cols: int) -> tuple["Affine", list[str]]:
        names, coef = [], {}
        for i in range(rows):
            for j in range(cols):
                name = f"{prefix}.{i}.{j}"
                e = np.zeros((rows, cols))
                e[i, j] = 1.0
                names.append(name)
                coef[name] = e
        return cls(np.zeros((rows, cols)), coef), names

    @property
    def shape(self):
        return self.const.shape

    @property
    def T(self) -> "Affine":
        return Affine(self.const.T, {k: v.T for k, v in self.coef.items()})

    def _lift(self, other) -> "Affine":
        if isinstance(other, Affine):
            return other
        other = np.asarray(other, dtype=float)
        if other.ndim == 0:
            other = other * np.ones(self.shape)
        return Affine(other)

    def __add__(self, other) -> "Affine":
        other = self._lift(other)
        coef = dict(self.coef)
        for k, v in other.coef.items():
            coef[k] = coef[k] + v if k in coef else v
        return Affine(self.const + other.const, coef)

    __radd__ = __add__

    def __neg__(self) -> "Affine":
        return Affine(-self.const, {k: -v for k, v in self.coef.items()})

    def __sub__(self, other) -> "Affine":
        return self + (-self._lift(other))

    def __rsub__(self, other) -> "Affine":
        return self._lift(other) - self

    def __mul__(self, s: float) -> "Affine":
        s = float(s)
        return Affine(self.const * s, {k: v * s for k, v in self.coef.items()})

    __rmul__ = __mul__

    def __matmul__(self, m) -> "Affine":
        m = np.atleast_2d(np.asarray(m, dtype=float))
        return Affine(self.const @ m, {k: v @ m for k, v in self.coef.items()})

    def __rmatmul__(self, m) -> "Affine":
        m = np.atleast_2d(np.asarray(m, dtype=float))
        return Affine(m @ self.const, {k: m @ v for k, v in self.coef.items()})

    def sym(self) -> "Affine":
        """Return ``self + self.T``."""
        return self + self.T

    def value(self, assignment: Mapping[str, float]) -> np.ndarray:
        out = self.const.copy()
        for k, v in self.coef.items():
            if k not in assignment:
                raise IncompleteAssignment(k)
            out += assignment[k] * v
        return out

    def substitute(self, fixed: Mapping[str, float]) -> "Affine":
        """Fold the listed variables into the constant term."""
        const = self.const.copy()
        coef = {}
        for k, v in self.coef.items():
            if k in fixed:
                const += fixed[k] * v
            else:
                coef[k] = v
        return Affine(const, coef)


def bmat(rows: Sequence[Sequence]) -> Affine:
    """Block matrix from Affine blocks or constant arrays."""
    heights = []
    widths = None
    for row in rows:
        shapes = [np.atleast_2d(np.asarray(b.const if isinstance(b, Affine) else b, dtype=float)).shape for b in row]
        heights.append(shapes[0][0])
        if widths is None:
            widths = [s[1] for s in shapes]
    n, m = sum(heights), sum(widths)
    const = np.zeros((n, m))
    coef: dict[str, np.ndarray] = {}
    r0 = 0
    for row, h in zip(rows, heights):
        c0 = 0
        for b, w in zip(row, widths):
            blk = b if isinstance(b, Affine) else Affine(b)
            if blk.shape != (h, w):
                raise InvalidInput(f"block shape {blk.shape} does not fit ({h}, {w})")
            const[r0:r0 + h, c0:c0 + w] = blk.const
            for k, v in blk.coef.items():
                if k not in coef:
                    coef[k] = np.zeros((n, m))
                coef[k][r0:r0 + h, c0:c0 + w] = v
            c0 += w
        r0 += h
    return Affine(const, coef)


class AffineLmi:
    """Strict inequality ``F0 + sum_k x_k F_k < 0`` over scalar variables."""

    def __init__(self, constant, coefficients: Mapping[str, object] | None = None, name: str = ""):
        self.constant = constant if isinstance(constant, SymMatrix) else SymMatrix(constant)
        self.coefficients = {
            k: (v if isinstance(v, SymMatrix) else SymMatrix(v)) for k, v in (coefficients or {}).items()
        }
        for k, v in self.coefficients.items():
            if v.dim != self.constant.dim:
                raise InvalidInput(f"coefficient {k!r} has dimension {v.dim}, expected {self.constant.dim}")
        self.name = name

    @classmethod
    def from_affine(cls, expr: Affine, name: str = "") -> "AffineLmi":
        # symmetrise away round-off from products like X A^T
        const = 0.5 * (expr.const + expr.const.T)
        coef = {k: 0.5 * (v + v.T) for k, v in expr.coef.items() if np.any(v)}
        return cls(const, coef, name)

    @property
    def dim(self) -> int:
        return self.constant.dim

    @property
    def variables(self) -> tuple[str, ...]:
        return tuple(self.coefficients)

    def assemble(self, assignment: Mapping[str, float]) -> np.ndarray:
        out = np.array(self.constant.array)
        for k, v in self.coefficients.items():
            if k not in assignment:
                raise IncompleteAssignment(k)
            out += float(assignment[k]) * v.array
        return out

    def fix(self, fixed: Mapping[str, float]) -> "AffineLmi":
        const = np.array(self.constant.array)
        coef = {}
        for k, v in self.coefficients.items():
            if k in fixed:
                const += fixed[k] * v.array
            else:
                coef[k] = v
        return AffineLmi(const, coef, self.name)


def lmi_min_eig(lmi: AffineLmi, assignment: Mapping[str, float]) -> float:
    """Largest eigenvalue of the assembled matrix; negative iff the strict LMI holds.

    The name follows the convention that the margin to infeasibility is the
    smallest eigenvalue of ``-M``.
    """
    return max(jacobi_eigenvalues(lmi.assemble(assignment)))


# --------------------------------------------------------------------------
# solver


@dataclass
class LmiSolution:
    assignment: dict[str, float]
    margin: float  # max over LMIs of lambda_max, raw (unweighted)
    objective: float | None = None
    evaluations: int = 0


class _Merit:
    """Weighted max-eigenvalue merit ``max_j lambda_max(M_j(x)) / w_j``.

    The search loop evaluates this tens of thousands of times, so blocks of equal
    size are stacked and handed to LAPACK in one batch; certificates reported to
    callers are recomputed with the Jacobi kernel.
    """

    def __init__(self, lmis: Sequence[AffineLmi], names: Sequence[str], weights: Sequence[float]):
        idx = {n: i for i, n in enumerate(names)}
        by_dim: dict[int, list] = {}
        for lmi, w in zip(lmis, weights):
            stack = np.zeros((len(idx), lmi.dim, lmi.dim))
            for k, v in lmi.coefficients.items():
                stack[idx[k]] = v.array
            by_dim.setdefault(lmi.dim, []).append((np.array(lmi.constant.array), stack, float(w)))
        self.groups = []
        for items in by_dim.values():
            const = np.stack([c for c, _, _ in items])
            coef = np.stack([s for _, s, _ in items], axis=1).reshape(len(idx), -1)
            w = np.array([w for _, _, w in items])
            self.groups.append((const, coef, w))
        self.evals = 0

    def __call__(self, x: np.ndarray) -> float:
        self.evals += 1
        worst = -math.inf
        for const, coef, w in self.groups:
            m = const + (x @ coef).reshape(const.shape)
            e = float(np.max(np.linalg.eigvalsh(m)[:, -1] / w))
            if e > worst:
                worst = e
        return worst


class _Reached(Exception):
    def __init__(self, x):
        self.x = x


def _nelder_mead(fun, x0, scale, lo, hi, rng, restarts, max_evals, stop_at):
    """Minimise ``fun`` over ``x = x0 + scale * y`` with a box penalty; returns the best x."""

    def wrapped(y):
        x = x0 + scale * y
        pen = float(np.sum(np.maximum(0.0, lo - x) / scale) + np.sum(np.maximum(0.0, x - hi) / scale))
        if pen > 0:
            return fun(np.clip(x, lo, hi)) + 1e3 * (1.0 + pen)
        f = fun(x)
        if stop_at is not None and f <= stop_at:
            raise _Reached(x)
        return f

    n = len(x0)
    best_y = np.zeros(n)
    try:
        best_f = wrapped(best_y)
        step = 1.0
        for k in range(restarts):
            start = best_y if k == 0 else best_y + 0.1 * step * rng.standard_normal(n)
            simplex = np.array([start] + [start + step * e for e in np.eye(n)])
            res = minimize(wrapped, start, method="Nelder-Mead",
                           options={"initial_simplex": simplex, "maxfev": max_evals, "xatol": 1e-10,
                                    "fatol": 1e-12, "adaptive": n > 4})
            if res.fun < best_f:
                best_f, best_y = float(res.fun), res.x
            step *= 0.5
    except _Reached as r:
        return r.x
    return np.clip(x0 + scale * best_y, lo, hi)


def solve_lmi(
    lmis: AffineLmi | Sequence[AffineLmi],
    objective: Mapping[str, float] | None = None,
    *,
    x0: Mapping[str, float] | None = None,
    scale: Mapping[str, float] | None = None,
    bounds: Mapping[str, tuple[float, float]] | None = None,
    weights: Sequence[float] | None = None,
    margin_floor: float = MARGIN_FLOOR,
    maximize_margin: bool = False,
    objective_floor: float | None = None,
    seed: int = 0,
    restarts: int = 6,
    max_evals: int = 4000,
    time_limit: float = 60.0,
) -> LmiSolution:
    """Find a strictly feasible point of a family of LMIs ``M_j(x) < 0``.

    A point is accepted when ``lambda_max(M_j) <= -margin_floor * w_j`` for every
    block; small weights therefore mark side constraints that only need to hold
    strictly.  The reported margin is the weighted merit ``max_j lambda_max / w_j``.

    With ``objective`` (linear, minimised) the achievable level is bisected until
    the best value is within 1% of the largest level shown unreachable, or
    ``objective_floor`` is met.  With ``maximize_margin`` the merit is driven
    as low as the search allows rather than stopping at the first feasible point.
    """
    if isinstance(lmis, AffineLmi):
        lmis = [lmis]
    lmis = list(lmis)
    names: list[str] = []
    for lmi in lmis:
        for v in lmi.variables:
            if v not in names:
                names.append(v)
    for v in objective or {}:
        if v not in names:
            raise InvalidInput(f"objective variable {v!r} does not appear in any LMI")
    if len(names) > 12:
        raise InvalidInput("solver is meant for at most a dozen decision scalars")
    x0, scale, bounds = dict(x0 or {}), dict(scale or {}), dict(bounds or {})
    weights = list(weights) if weights is not None else [1.0] * len(lmis)
    if len(weights) != len(lmis) or min(weights) <= 0:
        raise InvalidInput("need one positive weight per LMI")
    rng = np.random.default_rng(seed)
    deadline = time.monotonic() + time_limit

    xs = np.array([x0.get(n, 0.0) for n in names], dtype=float)
    sc = np.array([scale.get(n, 1.0) for n in names], dtype=float)
    lo = np.array([bounds.get(n, (-np.inf, np.inf))[0] for n in names], dtype=float)
    hi = np.array([bounds.get(n, (-np.inf, np.inf))[1] for n in names], dtype=float)
    evals = 0

    def search(extra: list[AffineLmi], start: np.ndarray, to_convergence: bool):
        nonlocal evals
        merit = _Merit(lmis + extra, names, weights + [1.0] * len(extra))
        x = _nelder_mead(merit, start, sc, lo, hi, rng, restarts, max_evals,
                         None if to_convergence else -margin_floor)
        m = merit(x)
        evals += merit.evals
        return x, m

    x, margin = search([], xs, maximize_margin)
    if not margin <= -margin_floor:
        raise SynthesisFailure("no strictly feasible point found", margin)
    if not objective:
        return LmiSolution(dict(zip(names, map(float, x))), float(margin), None, evals)

    c = np.array([objective.get(n, 0.0) for n in names])
    coef = {n: np.array([[v]]) for n, v in objective.items()}
    best_x, best_val = x, float(c @ x)
    low = -math.inf if objective_floor is None else float(objective_floor)
    while time.monotonic() < deadline and best_val > low:
        if low > -math.inf and best_val - low <= 0.01 * abs(best_val):
            break
        if low == -math.inf:
            mid = best_val - max(1.0, abs(best_val))
        elif low >= 0.0 and best_val > 0.0:
            # geometric steps: the optimum may sit orders of magnitude below the start
            mid = best_val / 8.0 if low == 0.0 else math.sqrt(low * best_val)
        else:
            mid = 0.5 * (low + best_val)
        level = AffineLmi(np.array([[-mid]]), coef, "objective")
        x_try, m_try = search([level], best_x, False)
        if m_try <= -margin_floor:
            best_x, best_val = x_try, float(c @ x_try)
        else:
            low = mid
    final = _Merit(lmis, names, weights)(best_x)
    return LmiSolution(dict(zip(names, map(float, best_x))), float(final), best_val, evals)


# --------------------------------------------------------------------------
# observer synthesis

A_DC = np.array([[0.0, 1.0], [0.0, 0.0]])
B_DC = np.array([[-1.0], [0.0]])
B_XI = np.array([[0.0], [1.0]])
C_DC = np.array([[1.0, 0.0]])


@dataclass(frozen=True)
class ObserverSynthesisResult:
    K_dc: SymMatrix
    L_dc: np.ndarray  # 2x1
    epsilon: float
    nu: float
    margin: float
    alpha: float

    def __post_init__(self):
        lmin = min(jacobi_eigenvalues(self.K_dc.array))
        if not lmin > 0:
            raise InvalidInput("K_dc must be positive definite")
        if not self.margin < 0:
            raise InvalidInput("observer certificate margin must be negative")
        if not self.epsilon > 0:
            raise InvalidInput("epsilon must be positive")

    @property
    def gain(self) -> np.ndarray:
        """Observer injection gain K_dc^-1 L_dc (2x1)."""
        return np.linalg.solve(self.K_dc.array, self.L_dc)

    @property
    def closed_loop(self) -> np.ndarray:
        return A_DC - self.gain @ C_DC

    @property
    def envelope(self) -> float:
        ev = jacobi_eigenvalues(self.K_dc.array)
        return math.sqrt(max(ev) / min(ev))


def observer_lmis(alpha: float) -> tuple[AffineLmi, AffineLmi]:
    """Observer LMI in (K, L, nu) and the positive-definiteness constraint on K."""
    K, _ = Affine.symmetric("K", 2)
    L, _ = Affine.full("L", 2, 1)
    nu = Affine.scalar("nu")
    phi = (A_DC.T @ K).sym() - (L @ C_DC).sym() + C_DC.T @ C_DC + 2.0 * alpha * K
    main = bmat([[phi, K @ B_XI], [(K @ B_XI).T, -1.0 * nu]])
    return AffineLmi.from_affine(main, "observer"), _sym_floor("K_pd", K, PD_FLOOR)


def observer_certificate(res: ObserverSynthesisResult) -> float:
    main, _ = observer_lmis(res.alpha)
    k = res.K_dc.array
    a = {"K.0.0": k[0, 0], "K.0.1": k[0, 1], "K.1.1": k[1, 1],
         "L.0.0": float(res.L_dc[0, 0]), "L.1.0": float(res.L_dc[1, 0]), "nu": res.nu}
    return lmi_min_eig(main, a)


OBSERVER_MARGIN = 1e-5


def synth_dc_observer(alpha: float, *, gain_bound: float = 1e3, seed: int = 0,
                      margin_floor: float = OBSERVER_MARGIN) -> ObserverSynthesisResult:
    """Minimise the L2 bound nu = eps^2 of the disturbance observer at decay rate ``alpha``.

    Entries of K and L are confined to ``[-gain_bound, gain_bound]``; without a box
    the infimum of nu is zero and the observer gain grows without bound.  The
    minimiser sits on the strictness floor, so ``margin_floor`` is the certificate
    margin the returned point keeps.
    """
    if not alpha > 0:
        raise InvalidInput("alpha must be positive")
    main, pd = observer_lmis(alpha)
    b = gain_bound
    bounds = {"K.0.0": (0.0, b), "K.0.1": (-b, b), "K.1.1": (0.0, b),
              "L.0.0": (-b, b), "L.1.0": (-b, b), "nu": (0.0, 1e6)}
    x0 = {"K.0.0": 1.0, "K.0.1": 0.0, "K.1.1": 1e-2, "L.0.0": 2.0 * alpha, "L.1.0": 1.0, "nu": 10.0}
    scale = {"K.0.0": 1.0, "K.0.1": 0.1, "K.1.1": 1e-2, "L.0.0": 50.0, "L.1.0": 1.0, "nu": 5.0}
    sol = solve_lmi([main, pd], {"nu": 1.0}, x0=x0, scale=scale, bounds=bounds,
                    weights=[1.0, 1e-9], objective_floor=0.0, seed=seed, margin_floor=margin_floor)
    a = sol.assignment
    K = SymMatrix([[a["K.0.0"], a["K.0.1"]], [a["K.0.1"], a["K.1.1"]]])
    L = np.array([[a["L.0.0"]], [a["L.1.0"]]])
    margin = lmi_min_eig(main, a)
    if not margin < -margin_floor or not min(jacobi_eigenvalues(K.array)) > 0:
        raise SynthesisFailure("observer LMI not strictly satisfied", margin)
    return ObserverSynthesisResult(K, L, math.sqrt(a["nu"]), a["nu"], margin, alpha)


# --------------------------------------------------------------------------
# current-loop synthesis


@dataclass(frozen=True)
class PolytopicPlant:
    vertices: tuple  # of (A_i 2x2, B_i 2x1)
    A_d: np.ndarray
    tau: float
    G: np.ndarray = field(default_factory=lambda: np.eye(2))
    H: np.ndarray = field(default_factory=lambda: np.full((2, 1), 1e-4))

    def __post_init__(self):
        if len(self.vertices) < 1:
            raise InvalidInput("need at least one vertex")
        for A, B in self.vertices:
            if np.shape(A) != (2, 2) or np.shape(B) != (2, 1):
                raise InvalidInput("vertex matrices must be 2x2 and 2x1")
        if np.shape(self.A_d) != (2, 2):
            raise InvalidInput("A_d must be 2x2")

    @classmethod
    def rl_box(cls, R: float, L: float, omega_c: float, spread: float = 0.3, tau: float = 1 / 60,
               G=None, H=None) -> "PolytopicPlant":
        """Vertices of the (R/L, 1/L) box for R and L each within +-spread of nominal."""
        lo, hi = 1.0 - spread, 1.0 + spread
        rho1 = (R * lo / (L * hi), R * hi / (L * lo))
        rho2 = (1.0 / (L * hi), 1.0 / (L * lo))
        verts = []
        for r1 in rho1:
            for r2 in rho2:
                verts.append((np.array([[-r1, 0.0], [0.0, -omega_c]]), np.array([[r2], [0.0]])))
        A_d = np.array([[0.0, 0.0], [-omega_c, omega_c]])
        kw = {}
        if G is not None:
            kw["G"] = np.asarray(G, dtype=float)
        if H is not None:
            kw["H"] = np.asarray(H, dtype=float).reshape(2, 1)
        return cls(tuple(verts), A_d, tau, **kw)


@dataclass(frozen=True)
class FeedbackSynthesisResult:
    X: SymMatrix
    W: SymMatrix
    Y: np.ndarray  # 1x2
    F: np.ndarray  # 1x2
    gamma: float
    margins: tuple

    def __post_init__(self):
        for m, name in ((self.X, "X"), (self.W, "W")):
            if not min(jacobi_eigenvalues(m.array)) > 0:
                raise InvalidInput(f"{name} must be positive definite")
        if not all(m < 0 for m in self.margins):
            raise InvalidInput("every vertex margin must be negative")
        if not self.gamma > 0:
            raise InvalidInput("gamma must be positive")

    @property
    def k2(self) -> float:
        return float(self.F[0, 1])

    @property
    def k1(self) -> float:
        return float(self.F[0, 0] + self.F[0, 1])


def gains_to_F(k1: float, k2: float) -> np.ndarray:
    """State feedback on [i, x_rc] implied by u = k1*i + k2*(i_ref - i + x_rc)."""
    return np.array([[k1 - k2, k2]])


def F_to_gains(F) -> tuple[float, float]:
    F = np.asarray(F, dtype=float).reshape(1, 2)
    return float(F[0, 0] + F[0, 1]), float(F[0, 1])


def _vertex_lmis(plant: PolytopicPlant, lam: float, X: Affine, W: Affine, Y: Affine, gamma: Affine):
    out = []
    for i, (A, B) in enumerate(plant.vertices):
        theta = (A @ X).sym() + (B @ Y).sym() + W + 2.0 * lam * X
        gam = X @ plant.G.T + Y.T @ plant.H.T
        ax = plant.A_d @ X
        p = plant.G.shape[0]
        m = bmat([[theta, ax, gam],
                  [ax.T, -1.0 * W, np.zeros((2, p))],
                  [gam.T, np.zeros((p, 2)), _scaled_identity(gamma, p)]])
        out.append(AffineLmi.from_affine(m, f"vertex{i}"))
    return out


def _scaled_identity(gamma: Affine, n: int) -> Affine:
    """``-gamma * I_n`` for a scalar variable."""
    return Affine(np.zeros((n, n)), {k: -float(v[0, 0]) * np.eye(n) for k, v in gamma.coef.items()})


def _trace_one_X() -> Affine:
    # X = [[x, y], [y, 1 - x]]: trace normalisation removes the homogeneous scale
    return Affine(np.diag([0.0, 1.0]), {"X.a": np.diag([1.0, -1.0]), "X.b": np.array([[0.0, 1.0], [1.0, 0.0]])})


def _sym_floor(prefix: str, mat: Affine, floor: float) -> AffineLmi:
    """``floor * trace(M) * I - M < 0``."""
    n = mat.shape[0]
    coef = {}
    for k, v in mat.coef.items():
        coef[k] = floor * np.trace(v) * np.eye(n) - v
    const = floor * np.trace(mat.const) * np.eye(n) - mat.const
    return AffineLmi.from_affine(Affine(const, coef), prefix)


def _gamma_floor() -> AffineLmi:
    return AffineLmi(np.array([[PD_FLOOR]]), {"gamma": np.array([[-1.0]])}, "gamma_pos")


DEFAULT_COND_X = 1e3


def synth_current_feedback(plant: PolytopicPlant, lam: float, *, cond_x: float = DEFAULT_COND_X,
                           seed: int = 0, margin_floor: float = MARGIN_FLOOR,
                           time_limit: float = 45.0) -> FeedbackSynthesisResult:
    """Robust delayed state feedback with decay rate ``lam`` over all plant vertices.

    The vertex margin is maximised subject to ``trace X = 1`` and a bound on the
    condition number of X.  The bound keeps the search away from the degenerate
    corner where X becomes singular and F grows without limit.
    """
    if not lam > 0:
        raise InvalidInput("lambda must be positive")
    X = _trace_one_X()
    W, _ = Affine.symmetric("W", 2)
    Y, _ = Affine.full("Y", 1, 2)
    gamma = Affine.scalar("gamma")
    verts = _vertex_lmis(plant, lam, X, W, Y, gamma)
    cond = AffineLmi.from_affine(np.eye(2) / (cond_x + 1.0) - X, "X_cond")
    wpd = _sym_floor("W_pd", W, PD_FLOOR)
    lmis = verts + [cond, wpd, _gamma_floor()]
    weights = [1.0] * len(verts) + [1e-9, 1e-9, 1e-9]
    ref = max(abs(A[0, 0]) for A, _ in plant.vertices) + abs(plant.A_d).max() + lam
    x0 = {"X.a": 0.5, "X.b": 0.0, "W.0.0": ref, "W.0.1": 0.0, "W.1.1": ref, "Y.0.0": 0.0, "Y.0.1": 0.0,
          "gamma": 1.0}
    bscale = max(abs(B[0, 0]) for _, B in plant.vertices) or 1.0
    scale = {"X.a": 0.2, "X.b": 0.2, "W.0.0": ref, "W.0.1": ref, "W.1.1": ref, "Y.0.0": ref / bscale,
             "Y.0.1": ref / bscale, "gamma": 1.0}
    bounds = {"X.a": (0.0, 1.0), "X.b": (-0.5, 0.5), "gamma": (0.0, np.inf)}
    sol = solve_lmi(lmis, x0=x0, scale=scale, bounds=bounds, weights=weights, maximize_margin=True,
                    seed=seed, margin_floor=margin_floor, time_limit=time_limit)
    a = sol.assignment
    Xm = X.value(a)
    Wm = W.value(a)
    Ym = Y.value(a)
    margins = tuple(lmi_min_eig(v, a) for v in verts)
    if not max(margins) < -margin_floor:
        raise SynthesisFailure("vertex LMIs not strictly satisfied", max(margins))
    F = Ym @ np.linalg.inv(Xm)
    return FeedbackSynthesisResult(SymMatrix(Xm), SymMatrix(0.5 * (Wm + Wm.T)), Ym, F, a["gamma"], margins)


def verify_feedback_certificate(plant: PolytopicPlant, F, lam: float, *, seed: int = 0,
                                margin_floor: float = MARGIN_FLOOR) -> tuple[bool, float]:
    """Search X > 0, W > 0 certifying every vertex decay LMI for a fixed gain ``F``."""
    F = np.asarray(F, dtype=float).reshape(1, 2)
    if not np.all(np.isfinite(F)):
        raise InvalidInput("F must be finite")
    X = _trace_one_X()
    W, _ = Affine.symmetric("W", 2)
    gamma = Affine.scalar("gamma")
    Y = F @ X
    verts = _vertex_lmis(plant, lam, X, W, Y, gamma)
    lmis = verts + [_sym_floor("X_pd", X, PD_FLOOR), _sym_floor("W_pd", W, PD_FLOOR), _gamma_floor()]
    weights = [1.0] * len(verts) + [1e-9, 1e-9, 1e-9]
    ref = max(abs(A[0, 0]) for A, _ in plant.vertices) + abs(plant.A_d).max() + lam
    # with large gains the certificate lives where X is nearly singular; seed along
    # the direction that aligns X with the feedback
    best = (False, math.inf)
    for xa in (0.5, 1e-3, 1.0 - 1e-3):
        x0 = {"X.a": xa, "X.b": 0.0, "W.0.0": ref, "W.0.1": 0.0, "W.1.1": ref, "gamma": 1.0}
        scale = {"X.a": min(xa, 1 - xa) * 0.5, "X.b": min(xa, 1 - xa) * 0.5, "W.0.0": ref, "W.0.1": ref,
                 "W.1.1": ref, "gamma": 1.0}
        try:
            sol = solve_lmi(lmis, x0=x0, scale=scale, bounds={"X.a": (0.0, 1.0), "X.b": (-0.5, 0.5)},
                            weights=weights, seed=seed, margin_floor=margin_floor, time_limit=20.0)
        except SynthesisFailure as exc:
            best = min(best, (False, exc.best_margin), key=lambda t: t[1])
            continue
        margin = max(lmi_min_eig(v, sol.assignment) for v in verts)
        return margin < -margin_floor, margin
    return best


# --------------------------------------------------------------------------
# gains file


def write_gains(path: str | Path, values: Mapping[str, object]) -> None:
    """Flat ``key = value`` file; arrays are expanded to ``key.i.j`` entries."""
    lines = []
    for key, val in values.items():
        arr = np.asarray(val.array if isinstance(val, SymMatrix) else val, dtype=float)
        if arr.ndim == 0:
            lines.append(f"{key} = {float(arr)!r}")
        else:
            arr = np.atleast_2d(arr)
            for i in range(arr.shape[0]):
                for j in range(arr.shape[1]):
                    lines.append(f"{key}.{i}.{j} = {float(arr[i, j])!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_gains(path: str | Path) -> dict[str, object]:
    """Inverse of :func:`write_gains`; indexed entries are reassembled into arrays."""
    flat: dict[str, float] = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidInput(f"line {n}: expected 'key = value'")
        k, v = (s.strip() for s in line.split("=", 1))
        try:
            flat[k] = float(v)
        except ValueError as exc:
            raise InvalidInput(f"line {n}: {v!r} is not a number") from exc
    out: dict[str, object] = {}
    groups: dict[str, dict[tuple[int, int], float]] = {}
    for k, v in flat.items():
        parts = k.rsplit(".", 2)
        if len(parts) == 3 and parts[1].isdigit() and parts[2].isdigit():
            groups.setdefault(parts[0], {})[(int(parts[1]), int(parts[2]))] = v
        else:
            out[k] = v
    for k, entries in groups.items():
        r = max(i for i, _ in entries) + 1
        c = max(j for _, j in entries) + 1
        arr = np.zeros((r, c))
        for (i, j), v in entries.items():
            arr[i, j] = v
        out[k] = arr
    return out
