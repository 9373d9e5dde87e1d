"""Driving paths and the catalogue of Wiener functionals.

Functional kinds
----------------
``state``          X_t = F(B_t)
``terminal``       X_t = E[phi(B_T) | F_t], a martingale closed at T
``first-passage``  X_t = E[T_alpha | F_t], T_alpha = inf{t : |B_t| = alpha}
``fbm-state``      X_t = f(B^H_t), B^H the Volterra fBm driven by B

The first three have closed-form projections on the skeleton filtration;
``fbm-state`` needs the driving grid path.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numba as nb
import numpy as np

from .errors import DomainError, UsageError
from .skeleton import Skeleton, mesh

__all__ = [
    "GridPath",
    "generate_brownian",
    "fbm_kernel",
    "build_fbm",
    "Functional",
    "state",
    "terminal",
    "first_passage",
    "fbm_state",
    "tabulated",
    "from_name",
    "gaussian_expectation",
    "evaluate_functional",
    "PiecewiseLinear",
    "Constant",
    "Affine",
    "ClippedIdentity",
    "ClippedPrimitive",
    "CATALOGUE",
]

CATALOGUE = (
    "square",
    "abs",
    "identity-terminal",
    "square-terminal",
    "first-passage(alpha)",
    "fbm-sin(H)",
)

STATE = "state"
TERMINAL = "terminal"
FIRST_PASSAGE = "first-passage"
FBM_STATE = "fbm-state"


@dataclass(frozen=True, eq=False)
class GridPath:
    """Path sampled at ``i * dt``, i = 0..M; ``values[0]`` is the start value."""

    dt: float
    values: np.ndarray

    def __post_init__(self):
        if not self.dt > 0:
            raise DomainError("dt must be positive")
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))

    @property
    def start_value(self) -> float:
        return float(self.values[0])

    @property
    def horizon(self) -> float:
        return (self.values.size - 1) * self.dt

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.values.size)

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values)

    def value_at(self, t):
        """Linear interpolation between grid points."""
        t = np.asarray(t, dtype=float)
        if np.any(t < 0) or np.any(t > self.horizon * (1 + 1e-12)):
            raise DomainError("time outside the path grid")
        out = np.interp(t / self.dt, np.arange(self.values.size), self.values)
        return out[()] if np.ndim(out) == 0 else out


def generate_brownian(dt: float, horizon: float, y: float, rng: np.random.Generator) -> GridPath:
    """Brownian path on ``[0, horizon]`` with step ``dt`` started at ``y``."""
    if not dt > 0:
        raise DomainError("dt must be positive")
    n = int(round(horizon / dt))
    inc = rng.standard_normal(n) * math.sqrt(dt)
    return GridPath(dt, np.concatenate(([float(y)], y + np.cumsum(inc))))


# -- fractional Brownian motion -------------------------------------------------

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(64)
_GL_X = 0.5 * (_GL_NODES + 1.0)
_GL_W = 0.5 * _GL_WEIGHTS


@nb.njit(cache=True)
def _volterra_unscaled(t_rows, s_cols, a, y_nodes, w_nodes):
    """``s^-a * int_s^t (u-s)^(a-1) u^a du`` for s < t, zero elsewhere.

    The substitution ``u = s + v^(1/a)`` removes the endpoint singularity:
    the integral becomes ``(1/a) * (t-s)^a * int_0^1 (s + (t-s) x^(1/a))^a dx``.
    """
    out = np.zeros((t_rows.size, s_cols.size))
    for i in range(t_rows.size):
        t = t_rows[i]
        for j in range(s_cols.size):
            s = s_cols[j]
            if s >= t:
                break
            acc = 0.0
            for q in range(y_nodes.size):
                acc += w_nodes[q] * (s + (t - s) * y_nodes[q]) ** a
            out[i, j] = s ** (-a) * (t - s) ** a * acc / a
    return out


@lru_cache(maxsize=8)
def fbm_kernel(hurst: float, dt: float, n_steps: int) -> np.ndarray:
    """Lower-triangular matrix ``K[i-1, j] = K(t_i, s_j) * c`` for the grid.

    Rows are grid times ``t_i = i * dt`` (i = 1..n_steps); columns are cell
    midpoints ``s_j = (j + 1/2) dt`` of the Brownian increments. The constant
    ``c`` makes the discretised ``Var(B^H_1)`` equal to one.
    """
    if not 0.5 < hurst < 1.0:
        raise DomainError("Hurst index must lie in (1/2, 1)")
    a = hurst - 0.5
    y_nodes = _GL_X ** (1.0 / a)
    t_rows = dt * np.arange(1, n_steps + 1)
    s_cols = dt * (np.arange(n_steps) + 0.5)
    kern = _volterra_unscaled(t_rows, s_cols, a, y_nodes, _GL_W)
    n_unit = int(round(1.0 / dt))
    unit_row = _volterra_unscaled(
        np.array([n_unit * dt]), dt * (np.arange(n_unit) + 0.5), a, y_nodes, _GL_W
    )[0]
    c = 1.0 / math.sqrt(float(np.sum(unit_row**2) * dt))
    kern *= c
    kern.setflags(write=False)
    return kern


def build_fbm(path: GridPath, hurst: float) -> GridPath:
    """Volterra fBm ``B^H_t = int_0^t K(t,s) dB_s`` driven by ``path``.

    The fBm starts at 0 regardless of the driving path's start value.
    """
    if not 0.5 < hurst < 1.0:
        raise DomainError("Hurst index must lie in (1/2, 1)")
    inc = path.increments
    kern = fbm_kernel(float(hurst), float(path.dt), inc.size)
    return GridPath(path.dt, np.concatenate(([0.0], kern @ inc)))


# -- functionals -------------------------------------------------------------------

_GH_NODES, _GH_WEIGHTS = np.polynomial.hermite_e.hermegauss(64)
_GH_WEIGHTS = _GH_WEIGHTS / math.sqrt(2.0 * math.pi)


def gaussian_expectation(phi: Callable, x, variance) -> np.ndarray:
    """``E[phi(x + sqrt(variance) Z)]`` by 64-point Gauss-Hermite quadrature."""
    x = np.asarray(x, dtype=float)
    sd = np.sqrt(np.maximum(np.asarray(variance, dtype=float), 0.0))
    pts = x[..., None] + sd[..., None] * _GH_NODES
    return np.asarray(phi(pts)) @ _GH_WEIGHTS


@dataclass(frozen=True, eq=False)
class Functional:
    """A Wiener functional from the catalogue.

    ``func`` is F (state), phi (terminal) or f (fbm-state). ``conditional``
    optionally gives ``E[phi(x + sqrt(r) Z)]`` in closed form for a terminal
    functional; otherwise Gauss-Hermite quadrature is used. ``derivative`` is
    F' where known (needed by the chain-rule probe).
    """

    name: str
    kind: str
    func: Callable | None = None
    maturity: float | None = None
    alpha: float | None = None
    hurst: float | None = None
    conditional: Callable | None = None
    derivative: Callable | None = None

    @property
    def closed_form_projection(self) -> bool:
        return self.kind in (STATE, TERMINAL, FIRST_PASSAGE)

    def conditional_value(self, x, remaining):
        """``E[phi(B_T) | B_t = x]`` with ``remaining = T - t``."""
        if self.kind != TERMINAL:
            raise UsageError("conditional_value applies to terminal functionals")
        if self.conditional is not None:
            return self.conditional(np.asarray(x, dtype=float), np.asarray(remaining, dtype=float))
        return gaussian_expectation(self.func, x, remaining)


def state(F: Callable, name: str = "state", derivative: Callable | None = None) -> Functional:
    return Functional(name, STATE, func=F, derivative=derivative)


def terminal(phi: Callable, maturity: float = 1.0, name: str = "terminal",
             conditional: Callable | None = None) -> Functional:
    if not maturity > 0:
        raise DomainError("maturity must be positive")
    return Functional(name, TERMINAL, func=phi, maturity=float(maturity), conditional=conditional)


def first_passage(alpha: float) -> Functional:
    if not alpha > 0:
        raise DomainError("alpha must be positive")
    return Functional(f"first-passage({alpha:g})", FIRST_PASSAGE, alpha=float(alpha))


def fbm_state(f: Callable, hurst: float, name: str | None = None) -> Functional:
    if not 0.5 < hurst < 1.0:
        raise DomainError("Hurst index must lie in (1/2, 1)")
    return Functional(name or f"fbm({hurst:g})", FBM_STATE, func=f, hurst=float(hurst))


def tabulated(csv_path, name: str | None = None) -> Functional:
    """State functional from a CSV table ``x,F`` (linear interpolation)."""
    xs, fs = [], []
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if [h.strip() for h in header[:2]] != ["x", "F"]:
            raise UsageError("tabulated functional CSV needs header x,F")
        for row in reader:
            if row:
                xs.append(float(row[0]))
                fs.append(float(row[1]))
    xs, fs = np.array(xs), np.array(fs)
    if xs.size < 2 or np.any(np.diff(xs) <= 0):
        raise UsageError("tabulated x values must be strictly increasing (>= 2 rows)")
    table = PiecewiseLinear(xs, fs)
    return state(table, name or f"csv:{csv_path}", derivative=table.slope)


class PiecewiseLinear:
    """Linear interpolation through ``(xs, fs)``, constant beyond the ends."""

    def __init__(self, xs, fs):
        self.xs = np.asarray(xs, dtype=float)
        self.fs = np.asarray(fs, dtype=float)
        self.slopes = np.diff(self.fs) / np.diff(self.xs)

    def __call__(self, x):
        return np.interp(x, self.xs, self.fs)

    def slope(self, x):
        i = np.clip(np.searchsorted(self.xs, x, side="right") - 1, 0, self.slopes.size - 1)
        inside = (np.asarray(x) >= self.xs[0]) & (np.asarray(x) <= self.xs[-1])
        return np.where(inside, self.slopes[i], 0.0)


class Constant:
    """``x -> value`` (array-valued, picklable)."""

    def __init__(self, value: float = 0.0):
        self.value = float(value)

    def __call__(self, x):
        return np.full(np.shape(x), self.value)


class Affine:
    """``x -> slope * x + intercept``."""

    def __init__(self, slope: float = 1.0, intercept: float = 0.0):
        self.slope, self.intercept = float(slope), float(intercept)

    def __call__(self, x):
        return self.slope * np.asarray(x, dtype=float) + self.intercept

    def derivative(self, x):
        return np.full(np.shape(x), self.slope)


class ClippedIdentity:
    """``x -> clip(x, -c, c)``."""

    def __init__(self, c: float = 0.5):
        self.c = float(c)

    def __call__(self, x):
        return np.clip(x, -self.c, self.c)


class ClippedPrimitive:
    """Primitive of :class:`ClippedIdentity` vanishing at 0."""

    def __init__(self, c: float = 0.5):
        self.c = float(c)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        c = self.c
        return np.where(np.abs(x) <= c, 0.5 * x * x, c * np.abs(x) - 0.5 * c * c)


def _square(x):
    return np.square(x)


def _twice(x):
    return 2.0 * np.asarray(x, dtype=float)


def _ones(x):
    return np.ones(np.shape(x))


def _identity(x):
    return np.asarray(x, dtype=float)


def _cond_identity(x, r):
    return x + 0.0 * r


def _cond_square(x, r):
    return x * x + r


def from_name(name: str, maturity: float = 1.0) -> Functional:
    """Parse a catalogue name such as ``square`` or ``first-passage(0.5)``."""
    name = name.strip()
    if name == "square":
        return state(_square, "square", derivative=_twice)
    if name == "abs":
        return state(np.abs, "abs", derivative=np.sign)
    if name == "identity":
        return state(_identity, "identity", derivative=_ones)
    if name == "identity-terminal":
        return terminal(_identity, maturity, "identity-terminal", conditional=_cond_identity)
    if name == "square-terminal":
        return terminal(_square, maturity, "square-terminal", conditional=_cond_square)
    m = re.fullmatch(r"first-passage\(([^)]+)\)", name)
    if m:
        return first_passage(float(m.group(1)))
    m = re.fullmatch(r"fbm-sin\(([^)]+)\)", name)
    if m:
        return fbm_state(np.sin, float(m.group(1)), f"fbm-sin({m.group(1)})")
    if name.startswith("csv:"):
        return tabulated(name[4:])
    raise UsageError(f"unknown functional {name!r}")


def lattice_alpha_steps(alpha: float, k: int) -> int:
    """``alpha / 2**-k`` as an integer; raises if alpha is off the lattice."""
    steps = alpha / mesh(k)
    if abs(steps - round(steps)) > 1e-9 or round(steps) < 1:
        raise UsageError(f"alpha={alpha} is not a positive multiple of 2^-{k}")
    return int(round(steps))


def skeleton_hitting_index(sk: Skeleton, alpha: float) -> int | None:
    """0-based index of the first jump with ``|A^k| = alpha`` (None if none)."""
    steps = lattice_alpha_steps(alpha, sk.level)
    start = sk.start_value / sk.mesh
    if abs(start - round(start)) > 1e-9:
        raise UsageError("first-passage functionals need a lattice start value")
    z = int(round(start)) + sk.lattice_index
    hit = np.flatnonzero(np.abs(z) >= steps)
    return int(hit[0]) if hit.size else None


def path_hitting_time(path: GridPath, alpha: float) -> float:
    """First time the linearly interpolated path reaches ``|x| = alpha``."""
    v = path.values
    above = np.flatnonzero(np.abs(v) >= alpha)
    if above.size == 0:
        return math.inf
    i = int(above[0])
    if i == 0:
        return 0.0
    a, b = v[i - 1], v[i]
    target = alpha if b > 0 else -alpha
    return (i - 1 + (target - a) / (b - a)) * path.dt


def evaluate_functional(f: Functional, t: float, path: GridPath | None = None,
                        skeleton: Skeleton | None = None) -> float:
    """``X_t`` for the functional ``f`` read off a grid path or a skeleton.

    On a skeleton the Brownian value is replaced by ``A^k_t``.
    """
    if (path is None) == (skeleton is None):
        raise UsageError("pass exactly one of path or skeleton")
    if f.kind == FBM_STATE:
        if path is None:
            raise UsageError("fbm-state functionals need the driving grid path")
        return float(f.func(build_fbm(path, f.hurst).value_at(t)))

    def value(s):
        return path.value_at(s) if path is not None else skeleton.value_at(s)

    if f.kind == STATE:
        return float(f.func(value(t)))
    if f.kind == TERMINAL:
        s = min(t, f.maturity)
        return float(f.conditional_value(value(s), f.maturity - s))
    if f.kind == FIRST_PASSAGE:
        if path is not None:
            hit = path_hitting_time(path, f.alpha)
        else:
            n = skeleton_hitting_index(skeleton, f.alpha)
            hit = math.inf if n is None else float(skeleton.times[n])
        s = min(t, hit)
        x = f.alpha if s == hit else value(s)
        return float(s + f.alpha**2 - x * x)
    raise UsageError(f"unsupported functional kind {f.kind!r}")
