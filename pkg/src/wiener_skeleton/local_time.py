"""Level crossings of the skeleton and local-time approximations.

Cell ``j`` is the lattice interval ``[(j-1) h, j h)`` with ``h = 2**-k``. An
up-move ``(j-1) h -> j h`` and a down-move ``j h -> (j-1) h`` both traverse
cell ``j``; ``eta_j`` counts the traversals made before ``t ^ S_m``, where
``S_m`` is the first time the skeleton reaches ``|x| = 2**m``.

``h * eta_j`` approximates twice the local time in the normalisation where
``|B_t| = int sgn(B) dB + 2 L^0_t``; the estimator below is ``h * eta / 2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import partial

import numpy as np

from .errors import DomainError
from .functionals import generate_brownian
from .intensity import IntensityTable, angle_bracket, default_table
from .montecarlo import Estimate, run_paths
from .projection_calculus import decompose_state
from .skeleton import Skeleton, build_skeleton_exact, coarsen

__all__ = [
    "CrossingCounts",
    "crossing_counts",
    "LocalTimeEstimate",
    "local_time_estimate",
    "zero_departure_local_time",
    "bracket_F_A",
    "bracket_F_F",
    "bracket_direct",
    "local_time_integral",
    "cell_masses_piecewise_linear",
    "cell_masses_piecewise_constant",
    "integral_against_cell_masses",
    "IdentityRow",
    "covariation_identity_check",
    "energy_identity_check",
    "TanakaReport",
    "tanaka_check",
    "local_time_curve",
]


@dataclass(frozen=True, eq=False)
class CrossingCounts:
    """Up and down traversal counts per lattice cell.

    ``up[i]`` and ``down[i]`` belong to cell ``j = i - offset``; cells run
    from ``-2**(m+k) + 1`` to ``2**(m+k)``.
    """

    level: int
    band: int
    t: float
    up: np.ndarray
    down: np.ndarray
    n_jumps: int

    @property
    def mesh(self) -> float:
        return float(np.ldexp(1.0, -self.level))

    @property
    def offset(self) -> int:
        return 2 ** (self.band + self.level) - 1

    @property
    def cells(self) -> np.ndarray:
        return np.arange(self.up.size) - self.offset

    @property
    def eta(self) -> np.ndarray:
        return self.up + self.down

    @property
    def lower_edges(self) -> np.ndarray:
        return (self.cells - 1) * self.mesh

    def cell_of(self, x):
        """Array position of the cell containing ``x`` (-1 outside the band)."""
        j = np.floor(np.asarray(x, dtype=float) / self.mesh).astype(np.int64) + 1
        i = j + self.offset
        return np.where((i >= 0) & (i < self.up.size), i, -1)

    def total(self) -> int:
        return int(self.eta.sum())


def _lattice_start(sk: Skeleton) -> int:
    z0 = sk.start_value / sk.mesh
    if abs(z0 - round(z0)) > 1e-9:
        raise DomainError("crossing counts need a start value on the lattice 2^-k Z")
    return int(round(z0))


def truncation_count(sk: Skeleton, m: int, t: float) -> int:
    """Number of jumps in ``[0, t ^ S_m]``."""
    if abs(sk.start_value) >= 2.0**m:
        raise DomainError("start value must lie inside (-2^m, 2^m)")
    z = _lattice_start(sk) + sk.lattice_index
    n = int(sk.count_until(t))
    edge = np.flatnonzero(np.abs(z[:n]) >= 2 ** (m + sk.level))
    return int(edge[0]) + 1 if edge.size else n


def crossing_counts(sk: Skeleton, m: int, t: float) -> CrossingCounts:
    n = truncation_count(sk, m, t)
    z = _lattice_start(sk) + sk.lattice_index[:n]
    z_prev = np.concatenate(([_lattice_start(sk)], z[:-1])) if n else z
    sgn = sk.signs[:n]
    size = 2 ** (m + sk.level + 1)
    offset = 2 ** (m + sk.level) - 1
    up = np.bincount(z[sgn > 0] + offset, minlength=size)
    down = np.bincount(z_prev[sgn < 0] + offset, minlength=size)
    return CrossingCounts(sk.level, int(m), float(t), up, down, n)


@dataclass(frozen=True, eq=False)
class LocalTimeEstimate:
    """Piecewise-constant ``x -> L_hat(x)`` on the lattice cells."""

    counts: CrossingCounts

    @property
    def values(self) -> np.ndarray:
        return 0.5 * self.counts.mesh * self.counts.eta

    def __call__(self, x):
        i = self.counts.cell_of(x)
        out = np.where(i >= 0, self.values[np.maximum(i, 0)], 0.0)
        return out[()] if out.ndim == 0 else out


def local_time_estimate(cc: CrossingCounts) -> LocalTimeEstimate:
    return LocalTimeEstimate(cc)


def zero_departure_local_time(cc: CrossingCounts) -> float:
    """``h/2 * (number of departures from 0)``: moves 0 -> h and 0 -> -h.

    Its mean equals the mean of the lattice Tanaka compensator exactly; the
    plain cell value at 0 counts moves into 0 from above instead, a different
    (asymptotically equivalent) set of transitions.
    """
    i1 = cc.offset + 1
    i0 = cc.offset
    return 0.5 * cc.mesh * float(cc.up[i1] + cc.down[i0])


def _differences(F, cc: CrossingCounts) -> np.ndarray:
    h = cc.mesh
    j = cc.cells
    return np.asarray(F(j * h), dtype=float) - np.asarray(F((j - 1) * h), dtype=float)


def bracket_F_A(F, cc: CrossingCounts) -> float:
    """``sum_j h * eta_j * Delta^j`` with ``Delta^j = F(jh) - F((j-1)h)``."""
    return float(cc.mesh * np.dot(cc.eta, _differences(F, cc)))


def bracket_F_F(F, cc: CrossingCounts) -> float:
    """``sum_j (Delta^j)^2 * eta_j``."""
    d = _differences(F, cc)
    return float(np.dot(cc.eta, d * d))


def bracket_direct(F, sk: Skeleton, m: int, t: float) -> tuple[float, float]:
    """Pathwise ``sum dF(A) dA`` and ``sum dF(A)^2`` over the same jumps."""
    n = truncation_count(sk, m, t)
    a = sk.values_with_initial[: n + 1]
    dF = np.diff(np.asarray(F(a), dtype=float))
    dA = np.diff(a)
    return float(np.dot(dF, dA)), float(np.dot(dF, dF))


def local_time_integral(F, sk: Skeleton, table: IntensityTable, t: float) -> float:
    """``4**k sum_{i=+-1} int_0^t [F(A_{s-} + i h) - F(A_{s-})] h^k(s) ds``.

    The intensity mass spent at each lattice anchor is accumulated first
    (occupation by anchor), then weighted by the second difference of F.
    """
    n = int(sk.count_until(t))
    ends = np.concatenate((sk.times_with_initial[: n + 1], [t]))
    mass = np.diff(angle_bracket(table, sk.level, ends))
    z = np.concatenate(([0], sk.lattice_index[:n]))
    zmin = int(z.min())
    occupation = np.bincount(z - zmin, weights=mass)
    x = sk.start_value + (np.arange(occupation.size) + zmin) * sk.mesh
    h = sk.mesh
    second = np.asarray(F(x + h), dtype=float) + np.asarray(F(x - h), dtype=float) - 2.0 * np.asarray(F(x), dtype=float)
    return float(np.ldexp(np.dot(second, occupation), 2 * sk.level))


# -- Stieltjes masses on the lattice cells ----------------------------------------------


def cell_masses_piecewise_linear(F, cc: CrossingCounts) -> np.ndarray:
    """``mu_F`` of each cell for continuous F: ``F(jh) - F((j-1)h)``."""
    return _differences(F, cc)


def cell_masses_piecewise_constant(locations, sizes, cc: CrossingCounts) -> np.ndarray:
    """``mu_F`` of each cell for a step function with the given jumps."""
    out = np.zeros(cc.up.size)
    i = cc.cell_of(np.asarray(locations, dtype=float))
    sizes = np.asarray(sizes, dtype=float)
    keep = i >= 0
    np.add.at(out, i[keep], sizes[keep])
    return out


def integral_against_cell_masses(cc: CrossingCounts, masses: np.ndarray) -> float:
    """``int 2 L_hat d mu_F`` with ``mu_F`` given per cell."""
    return float(np.dot(2.0 * local_time_estimate(cc).values, masses))


# -- ensemble identity checks -----------------------------------------------------------


@dataclass(frozen=True)
class IdentityRow:
    k: int
    skeleton_side: Estimate
    local_time_side: Estimate | None
    grid_oracle: Estimate | None

    @property
    def discrepancy(self) -> Estimate | None:
        if self.grid_oracle is None:
            return None
        return self.skeleton_side.minus(self.grid_oracle)


def _fak_path(index, rng, F, levels, t, m, y, jumps):
    sk = build_skeleton_exact(None, max(levels), t, rng, start_value=y)
    out = []
    current = sk
    for k in sorted(levels, reverse=True):
        while current.level > k:
            current = coarsen(current)
        cc = crossing_counts(current, m, t)
        if jumps is None:
            masses = cell_masses_piecewise_linear(F, cc)
        else:
            masses = cell_masses_piecewise_constant(jumps[0], jumps[1], cc)
        out += [bracket_F_A(F, cc), bracket_F_F(F, cc), integral_against_cell_masses(cc, masses)]
    return out


def _occupation_path(index, rng, f, t, y, dt, m):
    path = generate_brownian(dt, t, y, rng)
    v = path.values
    edge = np.flatnonzero(np.abs(v) >= 2.0**m)
    stop = int(edge[0]) if edge.size else v.size - 1
    fv = np.asarray(f(v[:stop]), dtype=float) if f is not None else np.zeros(stop)
    return [float(np.sum(fv) * dt), float(np.sum(fv * fv) * dt)]


def _identity_rows(F, f, levels, n_paths, seed, t, m, y, dt, workers, jumps, which):
    levels = tuple(sorted(int(k) for k in levels))
    fn = partial(_fak_path, F=F, levels=levels, t=float(t), m=int(m), y=float(y), jumps=jumps)
    s = run_paths(fn, n_paths, seed, workers)
    oracle = None
    if f is not None:
        g = run_paths(partial(_occupation_path, f=f, t=float(t), y=float(y), dt=dt, m=int(m)),
                      n_paths, seed, workers, stream=1)
        oracle = Estimate.from_samples(g[:, which])
    rows = []
    for pos, k in enumerate(sorted(levels, reverse=True)):
        base = 3 * pos
        skel = Estimate.from_samples(s[:, base + which])
        lt = Estimate.from_samples(s[:, base + 2]) if which == 0 else None
        rows.append(IdentityRow(k, skel, lt, oracle))
    return sorted(rows, key=lambda r: r.k)


def covariation_identity_check(F, f=None, levels=(4, 6, 8), n_paths: int = 2000, seed: int = 0,
                               t: float = 1.0, m: int = 3, y: float = 0.0, dt: float = 1e-4,
                               workers: int = 1, jumps=None) -> list[IdentityRow]:
    """Ensemble ``sum h eta Delta`` against ``int 2 L_hat d mu_F`` and ``int f(B) ds``.

    ``f`` (the density of ``mu_F``) enables the grid oracle; ``jumps =
    (locations, sizes)`` declares F piecewise constant for the cell masses.
    """
    return _identity_rows(F, f, levels, n_paths, seed, t, m, y, dt, workers, jumps, 0)


def energy_identity_check(F, f=None, levels=(4, 6, 8), n_paths: int = 2000, seed: int = 0,
                          t: float = 1.0, m: int = 3, y: float = 0.0, dt: float = 1e-4,
                          workers: int = 1) -> list[IdentityRow]:
    """Ensemble ``sum (Delta^j)^2 eta_j`` against the grid oracle ``int f(B)^2 ds``."""
    return _identity_rows(F, f, levels, n_paths, seed, t, m, y, dt, workers, None, 1)


@dataclass(frozen=True)
class TanakaReport:
    """Lattice Tanaka compensator against local-time predictions at level k."""

    k: int
    compensator: Estimate
    departure_prediction: Estimate
    paired_difference: Estimate
    cell_prediction: Estimate
    occupation: Estimate
    normalization: Estimate

    def rows(self):
        yield "compensator N^{k,|x|}", self.compensator
        yield "2 L_hat(0), departures", self.departure_prediction
        yield "difference (paired)", self.paired_difference
        yield "2 L_hat(0), cell", self.cell_prediction
        yield "occupation oracle", self.occupation
        yield "normalization", self.normalization


def _tanaka_path(index, rng, k, t, m, table):
    sk = build_skeleton_exact(None, k, t, rng)
    n = truncation_count(sk, m, t)
    stop = min(t, sk.times[n - 1]) if n < int(sk.count_until(t)) else t
    comp = float(decompose_state(np.abs, sk.restrict(stop), table).drift_part(stop))
    cc = crossing_counts(sk, m, t)
    dep = 2.0 * zero_departure_local_time(cc)
    cell = 2.0 * float(local_time_estimate(cc)(0.0))
    return [comp, dep, cell]


def _occupation_density_path(index, rng, t, dt, eps):
    path = generate_brownian(dt, t, 0.0, rng)
    return [float(np.sum(np.abs(path.values[:-1]) < eps) * dt / (2.0 * eps))]


def tanaka_check(k: int = 8, n_paths: int = 4000, seed: int = 0, t: float = 1.0, m: int = 3,
                 dt: float = 1e-4, table: IntensityTable | None = None,
                 workers: int = 1) -> TanakaReport:
    """Compare the drift of ``|A^k|`` with ``2 L_hat(0)`` and pin the normalisation.

    The normalisation constant is the ratio of the occupation-density oracle
    ``(1/2 eps) int 1{|B_s| < eps} ds`` (independent grid ensemble) to the
    departure-based ``L_hat(0)``.
    """
    table = table or default_table()
    s = run_paths(partial(_tanaka_path, k=int(k), t=float(t), m=int(m), table=table),
                  n_paths, seed, workers)
    occ = run_paths(partial(_occupation_density_path, t=float(t), dt=dt, eps=2.0 ** -k),
                    n_paths, seed, workers, stream=1)[:, 0]
    comp, dep, cell = (Estimate.from_samples(s[:, i]) for i in range(3))
    occ_est = Estimate.from_samples(occ)
    lhat = Estimate(dep.n, 0.5 * dep.mean, 0.5 * dep.stderr)
    ratio = occ_est.mean / lhat.mean
    rel = math.hypot(occ_est.stderr / occ_est.mean, lhat.stderr / lhat.mean)
    return TanakaReport(
        int(k), comp, dep, Estimate.from_samples(s[:, 0] - s[:, 1]), cell, occ_est,
        Estimate(min(dep.n, occ_est.n), ratio, abs(ratio) * rel),
    )


def _curve_path(index, rng, k, t, m, y, xs):
    sk = build_skeleton_exact(None, k, t, rng, start_value=y)
    return local_time_estimate(crossing_counts(sk, m, t))(xs)


def local_time_curve(k: int, xs, n_paths: int, seed: int, t: float = 1.0, m: int = 3,
                     y: float = 0.0, workers: int = 1):
    """Ensemble mean and standard error of ``L_hat(x)`` at the points ``xs``."""
    xs = np.asarray(xs, dtype=float)
    s = run_paths(partial(_curve_path, k=int(k), t=float(t), m=int(m), y=float(y), xs=xs),
                  n_paths, seed, workers)
    return s.mean(axis=0), s.std(axis=0, ddof=1) / math.sqrt(n_paths)
