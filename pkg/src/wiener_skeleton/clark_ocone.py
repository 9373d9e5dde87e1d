"""Martingale-representation densities estimated on the skeleton.

For a terminal-type functional F the level-k density is

    D^k F_t = (E[F | G^k_n] - E[F | G^k_{n-1}]) / (B_{T_n} - B_{T_{n-1}}) * h^k(t)

on ``[T_n, T_{n+1})`` and 0 before ``T_1``. The residual check integrates the
density against the increments of the same grid path the skeleton was read
from and compares with ``F - E[F]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import partial

import numpy as np

from .errors import UsageError
from .functionals import FIRST_PASSAGE, TERMINAL, Functional, generate_brownian, path_hitting_time
from .intensity import IntensityTable, default_table, h_k
from .montecarlo import Estimate, run_paths
from .projection_calculus import DerivativeProcess, delta_projection, stochastic_derivative
from .skeleton import Skeleton, build_skeleton_exact, extract_skeleton_from_grid

__all__ = [
    "clark_ocone_density",
    "DensityEstimate",
    "mean_density_curve",
    "ResidualReport",
    "functional_value",
    "representation_residual",
]


def _check_regime(f: Functional):
    if f.kind not in (TERMINAL, FIRST_PASSAGE):
        raise UsageError("density estimation needs a terminal or first-passage functional")


def clark_ocone_density(f: Functional, sk: Skeleton, table: IntensityTable | None = None,
                        variant: str = "exit-time") -> DerivativeProcess:
    """Per-path density ``D^k F`` as a weighted difference-quotient process.

    For ``first-passage`` functionals the target is ``Lambda_T(alpha)``, the
    exit-time martingale stopped at the skeleton horizon; ``variant="increment"``
    uses the increment ``T_n - T_{n-1}`` instead of the exit-time identity.
    """
    _check_regime(f)
    table = table or default_table()
    dx = delta_projection(f, sk, variant=variant)
    return stochastic_derivative(dx, sk, table)


@dataclass(frozen=True)
class DensityEstimate:
    """Ensemble mean of ``D^k F`` on a reporting grid."""

    level: int
    times: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    n_paths: int


def _density_path(index, rng, f, k, times, horizon, y, table):
    sk = build_skeleton_exact(None, k, horizon, rng, start_value=y)
    return clark_ocone_density(f, sk, table)(times)


def mean_density_curve(f: Functional, k: int, times, n_paths: int, seed: int,
                       horizon: float | None = None, y: float = 0.0,
                       table: IntensityTable | None = None, workers: int = 1) -> DensityEstimate:
    """Mean and standard error of ``D^k F_t`` over exact-engine paths."""
    _check_regime(f)
    table = table or default_table()
    times = np.asarray(times, dtype=float)
    horizon = float(horizon if horizon is not None else (f.maturity or times.max()))
    fn = partial(_density_path, f=f, k=int(k), times=times, horizon=horizon, y=y, table=table)
    samples = run_paths(fn, n_paths, seed, workers)
    mean = samples.mean(axis=0)
    se = samples.std(axis=0, ddof=1) / math.sqrt(n_paths)
    return DensityEstimate(int(k), times, mean, se, n_paths)


def functional_value(f: Functional, path, horizon: float) -> float:
    """``F`` on a grid path: ``phi(B_T)`` or ``Lambda_horizon(alpha)``."""
    if f.kind == TERMINAL:
        return float(f.func(np.asarray(path.value_at(f.maturity))))
    if f.kind == FIRST_PASSAGE:
        hit = path_hitting_time(path, f.alpha)
        s = min(horizon, hit)
        x = f.alpha if s == hit else path.value_at(s)
        return float(s + f.alpha**2 - x * x)
    raise UsageError("unsupported functional for the residual check")


@dataclass(frozen=True)
class ResidualReport:
    """``Var(R) / Var(F)`` with a delta-method standard error."""

    level: int
    ratio: Estimate
    residual_mean: Estimate
    integral_mean: Estimate
    var_f: float


def _residual_path(index, rng, f, k, horizon, y, dt, table, variant):
    path = generate_brownian(dt, horizon, y, rng)
    sk = extract_skeleton_from_grid(path, k)
    dens = clark_ocone_density(f, sk.restrict(horizon), table, variant)
    grid = path.times[:-1]
    integrand = dens.ratio(grid) * h_k(table, k, grid)
    integral = float(np.dot(integrand, path.increments))
    value = functional_value(f, path, horizon)
    x0 = delta_projection(f, sk).initial_value
    return [value, value - x0 - integral, integral]


def _ratio_estimate(r: np.ndarray, v: np.ndarray) -> Estimate:
    n = r.size
    x = (r - r.mean()) ** 2
    z = (v - v.mean()) ** 2
    a, b = x.mean(), z.mean()
    if b == 0.0:
        return Estimate(n, math.nan, math.nan)
    cov = np.cov(x, z)
    var = cov[0, 0] / b**2 - 2 * a * cov[0, 1] / b**3 + a * a * cov[1, 1] / b**4
    return Estimate(n, float(a / b), float(math.sqrt(max(var, 0.0) / n)))


def representation_residual(f: Functional, k: int, n_paths: int, seed: int,
                            horizon: float | None = None, y: float = 0.0, dt: float = 1e-4,
                            table: IntensityTable | None = None, workers: int = 1,
                            variant: str = "exit-time") -> ResidualReport:
    """Residual ``R = F - E[F] - sum_i D(t_i) (B_{t_{i+1}} - B_{t_i})``.

    ``E[F]`` is the level-0 value of the projection (``X_0``), which is exact
    for both supported regimes. Skeleton and Ito sum share one grid path.
    """
    _check_regime(f)
    table = table or default_table()
    horizon = float(horizon if horizon is not None else (f.maturity or 1.0))
    fn = partial(_residual_path, f=f, k=int(k), horizon=horizon, y=y, dt=dt,
                 table=table, variant=variant)
    s = run_paths(fn, n_paths, seed, workers)
    values, resid, integral = s[:, 0], s[:, 1], s[:, 2]
    return ResidualReport(
        int(k),
        _ratio_estimate(resid, values),
        Estimate.from_samples(resid),
        Estimate.from_samples(integral),
        float(np.var(values, ddof=1)),
    )
