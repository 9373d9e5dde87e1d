"""Skeleton diagnostics for ``f(B^H)`` with Hurst index ``H > 1/2``.

The skeleton is read off the driving Brownian grid path; the fBm is built
from the same increments. Conditional expectations of ``f(B^H_{T_n})`` given
the skeleton are not available in closed form, so every quantity here uses the
surrogate ``f(B^H_{T_n})`` itself:

* raw energy ``sum (f(B^H_{T_n}) - f(B^H_{T_{n-1}}))^2``;
* projection gap ``sup_t |f(B^H_t) - f(B^H_{T_{n(t)}})|`` on the grid;
* a martingale-part surrogate: the part of each increment that is odd under
  reflecting the Brownian increments of ``(T_{n-1}, T_n]``. That reflection
  preserves the law and flips the skeleton sign, so the odd parts are
  centred martingale increments.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import partial

import numba as nb
import numpy as np

from .errors import DomainError
from .functionals import build_fbm, fbm_kernel, generate_brownian
from .montecarlo import Estimate, run_paths
from .skeleton import extract_skeleton_from_grid, hierarchy

__all__ = ["FbmScan", "fbm_energy_scan", "fbm_projection_convergence", "path_statistics"]


@dataclass(frozen=True)
class FbmScan:
    hurst: float
    levels: tuple
    e2_raw: tuple
    projection_gap: tuple
    martingale_mean: tuple
    martingale_second_moment: tuple
    dt: float

    def rows(self):
        for i, k in enumerate(self.levels):
            yield (k, self.e2_raw[i], self.projection_gap[i],
                   self.martingale_mean[i], self.martingale_second_moment[i])


@nb.njit(cache=True)
def _reflected_parts(kern, inc, rows, starts, stops):
    """``sum_{starts[n] <= j < stops[n]} kern[rows[n], j] * inc[j]`` per n."""
    out = np.zeros(rows.size)
    for n in range(rows.size):
        r = rows[n]
        if r < 0:
            continue
        acc = 0.0
        for j in range(starts[n], stops[n]):
            acc += kern[r, j] * inc[j]
        out[n] = acc
    return out


def path_statistics(path, fbm, f, hurst, levels, horizon):
    """Per-level ``[e2_raw, gap, martingale surrogate]`` for one driving path."""
    dt = path.dt
    kern = fbm_kernel(float(hurst), float(dt), path.increments.size)
    inc = path.increments
    grid = path.times
    f_grid = np.asarray(f(fbm.values), dtype=float)
    f0 = float(np.asarray(f(0.0)))
    hier = hierarchy(extract_skeleton_from_grid(path, max(levels)), levels)
    out = []
    for k in levels:
        sk = hier[k].restrict(horizon) if hier[k].horizon > horizon else hier[k]
        T = sk.times
        bh = fbm.value_at(T)
        fv = np.concatenate(([f0], np.asarray(f(bh), dtype=float)))
        e2 = float(np.sum(np.diff(fv) ** 2))
        last = np.searchsorted(T, grid, side="right")
        gap = float(np.max(np.abs(f_grid - fv[last])))
        # cells whose left end lies in [T_{n-1}, T_n); kernel row of the grid time >= T_n
        bounds = np.ceil(np.concatenate(([0.0], T)) / dt - 1e-9).astype(np.int64)
        starts, stops = bounds[:-1], bounds[1:]
        rows = stops - 1
        refl = _reflected_parts(kern, inc, rows, starts, np.minimum(stops, inc.size))
        odd = 0.5 * (fv[1:] - np.asarray(f(bh - 2.0 * refl), dtype=float))
        out += [e2, gap, float(np.sum(odd))]
    return out


def _fbm_path(index, rng, f, hurst, levels, horizon, dt):
    path = generate_brownian(dt, horizon, 0.0, rng)
    fbm = build_fbm(path, hurst)
    return path_statistics(path, fbm, f, hurst, levels, horizon)


def fbm_energy_scan(f, hurst: float, levels, n_paths: int, seed: int, horizon: float = 1.0,
                    dt: float = 1.0 / 2048, workers: int = 1) -> FbmScan:
    """Raw energy, projection gap and martingale surrogate of ``f(B^H)`` per level."""
    if not 0.5 < hurst < 1.0:
        raise DomainError("Hurst index must lie in (1/2, 1)")
    levels = tuple(sorted(int(k) for k in levels))
    fn = partial(_fbm_path, f=f, hurst=float(hurst), levels=levels, horizon=float(horizon), dt=dt)
    s = run_paths(fn, n_paths, seed, workers)
    n = len(levels)
    e2 = tuple(Estimate.from_samples(s[:, 3 * i]) for i in range(n))
    gap = tuple(Estimate.from_samples(s[:, 3 * i + 1]) for i in range(n))
    mart = tuple(Estimate.from_samples(s[:, 3 * i + 2]) for i in range(n))
    mart2 = tuple(Estimate.from_samples(s[:, 3 * i + 2] ** 2) for i in range(n))
    return FbmScan(float(hurst), levels, e2, gap, mart, mart2, dt)


def fbm_projection_convergence(f, hurst: float, levels, n_paths: int, seed: int,
                               horizon: float = 1.0, dt: float = 1.0 / 2048,
                               workers: int = 1) -> tuple:
    """Per-level estimates of the projection-gap surrogate."""
    return fbm_energy_scan(f, hurst, levels, n_paths, seed, horizon, dt, workers).projection_gap
