"""Intensity ``h^k`` of the skeleton jump measure and the angle bracket.

Inter-jump times of the level-``k`` skeleton are i.i.d. ``4**-k * tau``, so
the expected jump count is a rescaled renewal function. With ``u`` the
renewal density of the tau-renewal process (``u = p + p * u``, ``p`` the
density of tau)::

    h^k(t)          = u(4**k t)
    <A^k, A^k>_t    = 4**-k * U(4**k t),      U(s) = int_0^s u

The table stores ``u`` on a uniform grid; between grid points ``u`` is taken
piecewise linear, and ``U`` is its exact integral. Past the table end ``u`` is
continued by its last value: ``u - 1`` decays like ``exp(-2 pi^2 s)``, so the
table has reached its limit to machine precision long before ``s_max``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.signal import fftconvolve

from .errors import DomainError
from .first_exit import FirstExitLaw, default_law

__all__ = [
    "IntensityTable",
    "solve_renewal_density",
    "h_k",
    "angle_bracket",
    "default_table",
]

_BLOCK = 2048


@dataclass(frozen=True, eq=False)
class IntensityTable:
    """Renewal density ``u`` on the grid ``s_i = i * ds``, i = 0..M."""

    ds: float
    u_values: np.ndarray
    cumulative: np.ndarray

    @property
    def s_max(self) -> float:
        return self.ds * (self.u_values.size - 1)

    @property
    def grid(self) -> np.ndarray:
        return self.ds * np.arange(self.u_values.size)

    def _locate(self, s):
        s = np.asarray(s, dtype=float)
        if not np.all(np.isfinite(s)) or np.any(s < 0):
            raise DomainError("intensity table evaluated at a negative or non-finite time")
        x = s / self.ds
        last = self.u_values.size - 1
        i = np.minimum(np.floor(x).astype(np.int64), last - 1)
        return s, i, x - i

    def u(self, s):
        """Renewal density at rescaled time(s) ``s``."""
        s, i, w = self._locate(s)
        u0, u1 = self.u_values[i], self.u_values[i + 1]
        out = np.where(w <= 1.0, u0 + w * (u1 - u0), self.u_values[-1])
        return out[()] if out.ndim == 0 else out

    def integral(self, s):
        """Exact integral of the piecewise-linear ``u`` over ``[0, s]``."""
        s, i, w = self._locate(s)
        u0, u1 = self.u_values[i], self.u_values[i + 1]
        inside = self.cumulative[i] + self.ds * (u0 * w + 0.5 * (u1 - u0) * w * w)
        beyond = self.cumulative[-1] + (s - self.s_max) * self.u_values[-1]
        out = np.where(w <= 1.0, inside, beyond)
        return out[()] if out.ndim == 0 else out

    def offset(self) -> float:
        """Constant ``c0`` in ``U(s) = s - c0 + o(1)``, read at the table end."""
        return float(self.s_max - self.cumulative[-1])

    def to_csv(self, path, stride: int = 1) -> None:
        """Write ``s,u,cumulative`` rows (every ``stride``-th grid point)."""
        sl = slice(None, None, stride)
        data = np.column_stack([self.grid[sl], self.u_values[sl], self.cumulative[sl]])
        np.savetxt(path, data, delimiter=",", header="s,u,cumulative", comments="", fmt="%.17g")


def solve_renewal_density(
    law: FirstExitLaw | None = None, s_max: float = 50.0, ds: float = 5e-4
) -> IntensityTable:
    """Solve ``u = p + p * u`` by forward trapezoid-rule Volterra stepping.

    With ``p(0) = u(0) = 0`` the trapezoid rule gives the explicit recursion
    ``u_i = p_i + ds * sum_{0<j<i} p_{i-j} u_j``. The history part of each
    block of unknowns is added with one FFT convolution; the in-block part is
    stepped directly.
    """
    if not ds > 0:
        raise DomainError("ds must be positive")
    if not s_max > 0:
        raise DomainError("s_max must be positive")
    law = law or default_law()
    n = int(round(s_max / ds))
    s = ds * np.arange(n + 1)
    p = np.zeros(n + 1)
    p[1:] = law.density(s[1:])
    u = np.zeros(n + 1)
    for a in range(1, n + 1, _BLOCK):
        b = min(a + _BLOCK, n + 1)
        # history: sum_{0<j<a} p_{i-j} u_j for i in [a, b)
        hist = fftconvolve(u[:a], p[:b])[a:b] if a > 1 else np.zeros(b - a)
        for i in range(a, b):
            inner = np.dot(p[i - a : 0 : -1], u[a:i]) if i > a else 0.0
            u[i] = p[i] + ds * (hist[i - a] + inner)
    cumulative = np.concatenate(([0.0], np.cumsum(0.5 * ds * (u[1:] + u[:-1]))))
    u.setflags(write=False)
    cumulative.setflags(write=False)
    return IntensityTable(ds, u, cumulative)


@lru_cache(maxsize=4)
def default_table(s_max: float = 50.0, ds: float = 5e-4) -> IntensityTable:
    """Table for the default exit-time law (built once per process)."""
    return solve_renewal_density(default_law(), s_max, ds)


def _rescaled(k: int, t):
    t = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(t)) or np.any(t < 0):
        raise DomainError("time must be finite and >= 0")
    return np.ldexp(t, 2 * int(k))


def h_k(table: IntensityTable, k: int, t):
    """Intensity of ``[A^k, A^k]`` at time(s) ``t``: ``u(4**k t)``."""
    return table.u(_rescaled(k, t))


def angle_bracket(table: IntensityTable, k: int, t):
    """``<A^k, A^k>_t = 4**-k U(4**k t)``; nondecreasing in ``t``."""
    out = np.ldexp(table.integral(_rescaled(k, t)), -2 * int(k))
    return out[()] if np.ndim(out) == 0 else out
