"""Law of the first exit time of standard Brownian motion from [-1, 1].

Two series represent the survival function P(tau > t):

* eigenfunction expansion, fast for large t::

      S(t) = 4/pi * sum_n (-1)^n / (2n+1) * exp(-(2n+1)^2 pi^2 t / 8)

* method of images, fast for small t::

      1 - S(t) = 2 * sum_n (-1)^n * erfc((2n+1) / sqrt(2t))

Both follow from the Laplace transform E exp(-lam tau) = 1 / cosh(sqrt(2 lam)).
Sampling inverts the distribution function through a cubic Hermite quantile
table with exact slopes; the two extreme table cells fall back on the leading
asymptotic term refined by Newton steps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba as nb
import numpy as np
from scipy.special import erfc, erfcinv

from .errors import DomainError

__all__ = [
    "FirstExitLaw",
    "tau_survival",
    "tau_cdf",
    "tau_density",
    "sample_tau",
    "default_law",
]

_MAX_TERMS = 20
# Hermite cells next to either end get Newton polishing (quantile is singular there)
_EDGE_CELLS = 40
_SQRT_2PI = np.sqrt(2.0 * np.pi)
_PI2_8 = np.pi**2 / 8.0


def _as_times(t) -> np.ndarray:
    arr = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError("exit-time law evaluated at a non-finite time")
    return arr


def _sum_series(term, tol: float) -> np.ndarray:
    """Add ``term(n)`` for n = 0, 1, ... until every entry falls below ``tol``."""
    total = term(0)
    for n in range(1, _MAX_TERMS):
        nxt = term(n)
        total = total + nxt
        if np.max(np.abs(nxt), initial=0.0) <= tol:
            return total
    raise ArithmeticError("exit-time series failed to converge")


def _survival_spectral(t: np.ndarray, tol: float) -> np.ndarray:
    def term(n):
        a = 2 * n + 1
        return (4.0 / np.pi) * (-1) ** n / a * np.exp(-(a**2) * _PI2_8 * t)

    return _sum_series(term, tol)


def _cdf_images(t: np.ndarray, tol: float) -> np.ndarray:
    root = np.sqrt(2.0 * t)

    def term(n):
        a = 2 * n + 1
        return 2.0 * (-1) ** n * erfc(a / root)

    return _sum_series(term, tol)


def _density_spectral(t: np.ndarray, tol: float) -> np.ndarray:
    def term(n):
        a = 2 * n + 1
        return (np.pi / 2.0) * (-1) ** n * a * np.exp(-(a**2) * _PI2_8 * t)

    return _sum_series(term, tol)


def _density_images(t: np.ndarray, tol: float) -> np.ndarray:
    scale = 2.0 / (_SQRT_2PI * t**1.5)

    def term(n):
        a = 2 * n + 1
        return scale * (-1) ** n * a * np.exp(-(a**2) / (2.0 * t))

    return _sum_series(term, tol)


@nb.njit(cache=True)
def _hermite_lookup(v, coef, m):
    out = np.empty(v.size)
    idx = np.empty(v.size, dtype=np.int64)
    for j in range(v.size):
        x = v[j] * m
        i = int(x)
        w = x - i
        out[j] = coef[i, 0] + w * (coef[i, 1] + w * (coef[i, 2] + w * coef[i, 3]))
        idx[j] = i
    return out, idx


@dataclass(frozen=True, eq=False)
class FirstExitLaw:
    """Numerical law of tau = inf{t > 0 : |B_t| = 1}.

    Immutable once built; safe to share between workers.

    Parameters
    ----------
    series_tolerance : float
        Truncation threshold on the magnitude of the last series term kept.
    crossover_time : float
        Times below this use the image series, times at or above it the
        eigenfunction series.
    table_size : int
        Number of equal probability cells of the quantile table.
    """

    series_tolerance: float = 1e-12
    crossover_time: float = 0.5
    table_size: int = 4096
    quantile_table: tuple[np.ndarray, np.ndarray] = field(init=False, repr=False)

    def __post_init__(self):
        if not self.series_tolerance > 0:
            raise DomainError("series_tolerance must be positive")
        if not self.crossover_time > 0:
            raise DomainError("crossover_time must be positive")
        object.__setattr__(self, "quantile_table", self._build_table())
        object.__setattr__(self, "_coef", self._cell_coefficients())

    # -- law -----------------------------------------------------------------
    def survival(self, t):
        """P(tau > t)."""
        t = _as_times(t)
        if np.any(t < 0):
            raise DomainError("survival requires t >= 0")
        t_small = np.minimum(t, self.crossover_time)
        t_small = np.where(t_small > 0, t_small, 1.0)
        small = 1.0 - _cdf_images(t_small, self.series_tolerance)
        large = _survival_spectral(np.maximum(t, self.crossover_time), self.series_tolerance)
        out = np.where(t < self.crossover_time, small, large)
        out = np.where(t == 0, 1.0, out)
        return out[()] if out.ndim == 0 else out

    def cdf(self, t):
        """P(tau <= t), accurate in relative terms for small t."""
        t = _as_times(t)
        if np.any(t < 0):
            raise DomainError("cdf requires t >= 0")
        t_small = np.minimum(t, self.crossover_time)
        t_small = np.where(t_small > 0, t_small, 1.0)
        small = _cdf_images(t_small, self.series_tolerance)
        large = 1.0 - _survival_spectral(
            np.maximum(t, self.crossover_time), self.series_tolerance
        )
        out = np.where(t < self.crossover_time, small, large)
        out = np.where(t == 0, 0.0, out)
        return out[()] if out.ndim == 0 else out

    def density(self, t):
        """Probability density of tau (termwise derivative of the active series)."""
        t = _as_times(t)
        if np.any(t <= 0):
            raise DomainError("density requires t > 0")
        small = _density_images(np.minimum(t, self.crossover_time), self.series_tolerance)
        large = _density_spectral(np.maximum(t, self.crossover_time), self.series_tolerance)
        out = np.where(t < self.crossover_time, small, large)
        # cancellation noise of the image series is far below tolerance but
        # may carry a negative sign for tiny t
        out = np.maximum(out, 0.0)
        return out[()] if out.ndim == 0 else out

    def series_gap(self, t):
        """|image series - eigenfunction series| for the survival at ``t > 0``."""
        t = _as_times(t)
        small = 1.0 - _cdf_images(t, self.series_tolerance)
        large = _survival_spectral(t, self.series_tolerance)
        return np.abs(small - large)

    # -- quantiles -----------------------------------------------------------
    def _invert(self, p: np.ndarray, lo: np.ndarray, hi: np.ndarray, tol: float) -> np.ndarray:
        """Vectorised bisection for cdf(t) = p on brackets [lo, hi]."""
        lo = lo.astype(float).copy()
        hi = hi.astype(float).copy()
        f_lo = self.cdf(lo) - p
        f_hi = self.cdf(hi) - p
        for _ in range(200):
            active = (f_hi - f_lo) > tol
            if not np.any(active):
                break
            mid = 0.5 * (lo + hi)
            f_mid = self.cdf(mid) - p
            go_up = f_mid < 0
            lo = np.where(active & go_up, mid, lo)
            f_lo = np.where(active & go_up, f_mid, f_lo)
            hi = np.where(active & ~go_up, mid, hi)
            f_hi = np.where(active & ~go_up, f_mid, f_hi)
        # linear interpolation inside the final (tiny) bracket
        span = np.where(f_hi > f_lo, f_hi - f_lo, 1.0)
        w = np.clip(-f_lo / span, 0.0, 1.0)
        return lo + w * (hi - lo)

    def quantile(self, p, tol: float = 1e-15):
        """Inverse distribution function by bisection (slow, accurate)."""
        p = np.asarray(p, dtype=float)
        if np.any((p <= 0) | (p >= 1)):
            raise DomainError("quantile requires 0 < p < 1")
        lo = np.full(p.shape, 1e-3)
        hi = np.full(p.shape, 60.0)
        # exit before t=1e-3 has probability ~1e-217: treat as the lower end
        out = self._invert(p, lo, hi, tol)
        return out[()] if out.ndim == 0 else out

    def _build_table(self):
        m = self.table_size
        probs = np.arange(m + 1) / m
        times = np.empty(m + 1)
        times[0], times[-1] = 0.0, np.inf
        times[1:-1] = self.quantile(probs[1:-1], tol=1e-16)
        slopes = np.empty(m + 1)
        slopes[0] = slopes[-1] = np.nan
        slopes[1:-1] = 1.0 / self.density(times[1:-1])
        # Fritsch-Carlson limiter keeps every Hermite cell monotone
        secant = np.diff(times[1:-1]) * m
        alpha = slopes[1:-2] / secant
        beta = slopes[2:-1] / secant
        r = alpha**2 + beta**2
        scale = np.where(r > 9.0, 3.0 / np.sqrt(r), 1.0)
        slopes[1:-2] = np.minimum(slopes[1:-2], scale * alpha * secant)
        slopes[2:-1] = np.minimum(slopes[2:-1], scale * beta * secant)
        times.setflags(write=False)
        slopes.setflags(write=False)
        return times, slopes

    def _cell_coefficients(self) -> np.ndarray:
        """Power-basis coefficients of the Hermite cubic in each table cell."""
        m = self.table_size
        times, slopes = self.quantile_table
        t0, t1 = times[1:-2], times[2:-1]
        d0, d1 = slopes[1:-2] / m, slopes[2:-1] / m
        coef = np.zeros((m, 4))
        coef[1:-1] = np.column_stack(
            [t0, d0, 3 * (t1 - t0) - 2 * d0 - d1, 2 * (t0 - t1) + d0 + d1]
        )
        return coef

    def sample(self, rng: np.random.Generator, size=None, refine: bool = False):
        """Draw exit times.

        ``refine=True`` additionally bisects each draw inside its table cell
        until the bracket spans at most 1e-10 in probability.
        """
        v = rng.random(size)
        shape = np.shape(v)
        v = np.atleast_1d(v).ravel()
        m = self.table_size
        out, idx = _hermite_lookup(v, self._coef, m)

        # lower edge cells sit in the small-time regime and polish against the
        # image-series cdf; upper edge cells polish against the spectral survival
        tol = self.series_tolerance
        low = np.flatnonzero(idx < _EDGE_CELLS)
        if low.size:
            u = v[low] + 2.0**-54
            t = out[low]
            first = idx[low] == 0
            if np.any(first):
                t[first] = 1.0 / (2.0 * erfcinv(u[first] / 2.0) ** 2)
            for _ in range(2 + 2 * bool(np.any(first))):
                t = t - (_cdf_images(t, tol) - u) / _density_images(t, tol)
            out[low] = t
        high = np.flatnonzero(idx >= m - _EDGE_CELLS)
        if high.size:
            s = (1.0 - v[high]) - 2.0**-54
            t = out[high]
            last = idx[high] == m - 1
            if np.any(last):
                t[last] = np.log(4.0 / (np.pi * s[last])) / _PI2_8
            for _ in range(2 + bool(np.any(last))):
                t = t + (_survival_spectral(t, tol) - s) / _density_spectral(t, tol)
            out[high] = t

        if refine:
            times = self.quantile_table[0]
            bulk = np.flatnonzero((idx >= 1) & (idx <= m - 2))
            i = idx[bulk]
            out[bulk] = self._invert(v[bulk], times[i], times[i + 1], 1e-10)
        if size is None:
            return float(out[0])
        return out.reshape(shape)


_DEFAULT_LAW: FirstExitLaw | None = None


def default_law() -> FirstExitLaw:
    """Process-wide law with default settings (built once)."""
    global _DEFAULT_LAW
    if _DEFAULT_LAW is None:
        _DEFAULT_LAW = FirstExitLaw()
    return _DEFAULT_LAW


def tau_survival(t, law: FirstExitLaw | None = None):
    return (law or default_law()).survival(t)


def tau_cdf(t, law: FirstExitLaw | None = None):
    return (law or default_law()).cdf(t)


def tau_density(t, law: FirstExitLaw | None = None):
    return (law or default_law()).density(t)


def sample_tau(rng: np.random.Generator, size=None, law: FirstExitLaw | None = None,
               refine: bool = False):
    """Draw from the law of tau; see :meth:`FirstExitLaw.sample`."""
    return (law or default_law()).sample(rng, size=size, refine=refine)
