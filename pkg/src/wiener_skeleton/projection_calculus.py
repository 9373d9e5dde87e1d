"""Skeleton calculus: projections, stochastic derivatives and decompositions.

For a functional X and level k the projected process is

    delta^k X_t = X_0 + sum_n E[X_{T_n} | G^k_n] 1{T_n <= t < T_{n+1}},

a pure-jump process on the skeleton times. It splits as

    delta^k X = X_0 + M^{k,X} + N^{k,X},   N^{k,X}_t = int_0^t U^{k,X}_s h^k(s) ds,

where M^{k,X} is the compensated sum of the jumps. The drift kernel U is
available in closed form for state functionals (a lattice second difference)
and vanishes for martingale-type functionals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import partial

import numpy as np

from .errors import DomainError, UsageError
from .functionals import (
    FBM_STATE,
    FIRST_PASSAGE,
    STATE,
    TERMINAL,
    Functional,
    build_fbm,
    skeleton_hitting_index,
    state,
)
from .first_exit import default_law
from .intensity import IntensityTable, angle_bracket, default_table, h_k
from .montecarlo import Estimate, run_paths
from .skeleton import Skeleton, StepProcess, build_skeleton_exact, hierarchy

__all__ = [
    "delta_projection",
    "stochastic_derivative",
    "DerivativeProcess",
    "drift_kernel_state",
    "Decomposition",
    "decompose",
    "decompose_state",
    "bracket",
    "raw_at_stopping_times",
    "EnergyReport",
    "energy",
    "TEST_FUNCTIONALS",
    "test_functional",
    "ProbeRow",
    "delta_covariation_probe",
    "ChainRuleRow",
    "chain_rule_probe",
]


def _apply(F, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.broadcast_to(np.asarray(F(x), dtype=float), x.shape).astype(float)


def _effective_horizon(f: Functional, sk: Skeleton, horizon) -> float:
    h = sk.horizon if horizon is None else float(horizon)
    if h > sk.horizon:
        raise DomainError("horizon exceeds the skeleton horizon")
    if f.kind == TERMINAL:
        h = min(h, f.maturity)
    return h


def delta_projection(f: Functional, sk: Skeleton, path=None, horizon=None,
                     variant: str = "exit-time") -> StepProcess:
    """Projected process ``delta^k X`` on the skeleton ``sk``.

    * state: ``F(A_n)``;
    * terminal: ``E[phi(A_n + sqrt(T - T_n) Z)]`` for ``T_n <= T``;
    * first-passage: ``T_n + alpha^2 - A_n^2`` before ``T_alpha``, frozen
      after. ``variant="increment"`` instead accumulates the increments
      ``T_n - T_{n-1}`` strictly before ``T_alpha`` (kept for comparison);
    * fbm-state: the surrogate ``f(B^H_{T_n})`` read off the driving ``path``.
    """
    h = _effective_horizon(f, sk, horizon)
    s = sk.restrict(h) if h < sk.horizon else sk
    times, anchors, y = s.times, s.values, s.start_value

    if f.kind == STATE:
        x0 = float(_apply(f.func, y))
        vals = _apply(f.func, anchors)
    elif f.kind == TERMINAL:
        x0 = float(f.conditional_value(y, f.maturity))
        vals = np.asarray(f.conditional_value(anchors, f.maturity - times), dtype=float)
    elif f.kind == FIRST_PASSAGE:
        alpha = f.alpha
        if abs(y) >= alpha:
            raise DomainError("first-passage functionals need |y| < alpha")
        hit = skeleton_hitting_index(s, alpha)
        x0 = alpha * alpha - y * y
        if variant == "exit-time":
            vals = times + alpha * alpha - anchors * anchors
            if hit is not None:
                vals[hit + 1:] = vals[hit]
        elif variant == "increment":
            vals = x0 + times
            if hit is not None:
                vals[hit:] = vals[hit - 1] if hit > 0 else x0
        else:
            raise UsageError(f"unknown first-passage variant {variant!r}")
    elif f.kind == FBM_STATE:
        if path is None:
            raise UsageError("fbm-state projections need the driving grid path")
        fbm = build_fbm(path, f.hurst)
        x0 = float(_apply(f.func, 0.0))
        vals = _apply(f.func, fbm.value_at(times))
    else:
        raise UsageError(f"unsupported functional kind {f.kind!r}")
    return StepProcess(x0, times, vals, h)


@dataclass(frozen=True, eq=False)
class DerivativeProcess:
    """``D^k X`` stored as the difference-quotient step process ``ratio``.

    The value on ``[T_n, T_{n+1})`` is ``ratio_n * h^k(t)``; it is 0 before
    ``T_1``. The weight ``h^k`` is applied at evaluation time.
    """

    ratio: StepProcess
    level: int
    table: IntensityTable

    def __call__(self, t):
        return self.ratio(t) * h_k(self.table, self.level, t)

    def integral(self, t: float) -> float:
        """``int_0^t D^k_s ds`` with the intensity integrated exactly."""
        T = self.ratio.jump_times
        n = int(np.searchsorted(T, t, side="right"))
        if n == 0:
            return 0.0
        ang = angle_bracket(self.table, self.level, np.append(T[:n], t))
        return float(np.dot(self.ratio.post_jump_values[:n], np.diff(ang)))


def stochastic_derivative(dx: StepProcess, sk: Skeleton, table: IntensityTable) -> DerivativeProcess:
    """Difference quotients ``Delta delta^k X / Delta A^k`` weighted by ``h^k``."""
    n = len(dx)
    if n > len(sk) or not np.array_equal(dx.jump_times, sk.times[:n]):
        raise UsageError("the projected process must live on the skeleton's jump times")
    # Delta A = sigma * 2^-k exactly, so dividing is multiplying by sigma * 2^k
    ratio = np.ldexp(dx.jumps() * sk.signs[:n], sk.level)
    return DerivativeProcess(StepProcess(0.0, dx.jump_times, ratio, dx.horizon), sk.level, table)


def drift_kernel_state(F, sk: Skeleton) -> np.ndarray:
    """``U^{k,F}`` on the intervals ``(T_n, T_{n+1}]``, n = 0..N.

    Half the symmetric lattice second difference of F at the anchor
    ``A_{T_n}``, divided by ``4**-k``.
    """
    a = sk.values_with_initial
    h = sk.mesh
    second = _apply(F, a + h) + _apply(F, a - h) - 2.0 * _apply(F, a)
    return np.ldexp(0.5 * second, 2 * sk.level)


@dataclass(frozen=True, eq=False)
class Decomposition:
    """``delta^k X = X_0 + M + N`` on one skeleton.

    ``martingale_part`` holds ``M`` at the jump times (between jumps M moves
    continuously by ``-dN``; use :meth:`martingale`). ``kernel[n]`` is the drift
    integrand on ``(T_n, T_{n+1}]`` and ``drift_at_jumps[n] = N(T_n)``.
    """

    level: int
    x0: float
    delta_x: StepProcess
    martingale_part: StepProcess
    kernel: np.ndarray
    drift_at_jumps: np.ndarray
    table: IntensityTable

    def drift_part(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t > self.delta_x.horizon):
            raise DomainError("t exceeds the decomposition horizon")
        T = self.delta_x.jump_times
        n = np.searchsorted(T, t, side="right")
        anchor = np.concatenate(([0.0], T))[n]
        bump = angle_bracket(self.table, self.level, t) - angle_bracket(self.table, self.level, anchor)
        out = self.drift_at_jumps[n] + self.kernel[n] * bump
        return out[()] if out.ndim == 0 else out

    def martingale(self, t):
        return self.delta_x(t) - self.x0 - self.drift_part(t)

    def identity_residual(self) -> float:
        """``max_n |delta(T_n) - X_0 - M(T_n) - N(T_n)|`` over the jump times."""
        lhs = self.delta_x.post_jump_values
        rhs = self.x0 + self.martingale_part.post_jump_values + self.drift_at_jumps[1:]
        return float(np.max(np.abs(lhs - rhs))) if lhs.size else 0.0


def decompose(f: Functional, sk: Skeleton, table: IntensityTable | None = None,
              horizon=None) -> Decomposition:
    """Explicit decomposition in the closed-form regimes.

    The martingale part is built from the jumps as ``sum D_n Delta A_n``
    minus the compensator, independently of ``delta_x`` itself, so the
    decomposition identity is a genuine check.
    """
    if not f.closed_form_projection:
        raise UsageError("decomposition needs a closed-form projection (state, terminal, first-passage)")
    table = table or default_table()
    dx = delta_projection(f, sk, horizon=horizon)
    n = len(dx)
    s = sk.restrict(dx.horizon) if dx.horizon < sk.horizon else sk
    if f.kind == STATE:
        kernel = drift_kernel_state(f.func, s)
    else:
        kernel = np.zeros(n + 1)
    ang = angle_bracket(table, s.level, s.times_with_initial)
    drift = np.concatenate(([0.0], np.cumsum(kernel[:n] * np.diff(ang))))
    deriv = stochastic_derivative(dx, s, table)
    jumps = deriv.ratio.post_jump_values * s.signs * s.mesh
    mart = np.cumsum(jumps) - drift[1:]
    return Decomposition(
        s.level,
        dx.initial_value,
        dx,
        StepProcess(0.0, dx.jump_times, mart, dx.horizon),
        kernel,
        drift,
        table,
    )


def decompose_state(F, sk: Skeleton, table: IntensityTable | None = None, horizon=None) -> Decomposition:
    return decompose(state(F), sk, table, horizon)


def bracket(dx: StepProcess, dy: StepProcess, t: float) -> float:
    """Pathwise ``[dx, dy]_t`` for two step processes on the same jump times."""
    if not np.array_equal(dx.jump_times, dy.jump_times):
        n = min(len(dx), len(dy))
        if not np.array_equal(dx.jump_times[:n], dy.jump_times[:n]):
            raise UsageError("brackets need processes on one skeleton")
    else:
        n = len(dx)
    jx, jy = dx.jumps()[:n], dy.jumps()[:n]
    m = int(np.searchsorted(dx.jump_times[:n], t, side="right"))
    return float(np.dot(jx[:m], jy[:m]))


def raw_at_stopping_times(f: Functional, sk: Skeleton, horizon=None) -> np.ndarray:
    """Raw ``X`` at ``0, T_1, T_2, ...`` read through the step process ``A^k``.

    On the exact engine ``B_{T_n} = A^k_{T_n}``, so the raw values are
    Brownian values at the stopping times.
    """
    h = _effective_horizon(f, sk, horizon)
    n = int(sk.count_until(h))
    times = sk.times_with_initial[: n + 1]
    b = sk.value_at(times)
    if f.kind == STATE:
        return _apply(f.func, b)
    if f.kind == TERMINAL:
        return np.asarray(f.conditional_value(b, f.maturity - times), dtype=float)
    if f.kind == FIRST_PASSAGE:
        s, x = times.copy(), b.copy()
        reached = np.flatnonzero(np.abs(b) >= f.alpha * (1 - 1e-12))
        if reached.size:
            r = int(reached[0])
            s[r:] = times[r]
            x[r:] = f.alpha
        return s + f.alpha**2 - x * x
    raise UsageError("raw values on a skeleton need a closed-form functional")


# -- energies ------------------------------------------------------------------------


@dataclass(frozen=True)
class EnergyReport:
    """Per-level estimates of the projected and raw energies."""

    functional: str
    levels: tuple
    e2_conditional: tuple
    e2_raw: tuple
    horizon: float

    def ordering_holds(self, n_se: float = 2.0) -> list[bool]:
        out = []
        for c, r in zip(self.e2_conditional, self.e2_raw):
            out.append(c.mean <= r.mean + n_se * float(np.hypot(c.stderr, r.stderr)))
        return out

    def rows(self):
        for k, c, r in zip(self.levels, self.e2_conditional, self.e2_raw):
            yield k, c, r


def _energy_exact_path(index, rng, f, levels, horizon, y):
    sk = build_skeleton_exact(None, max(levels), horizon, rng, start_value=y)
    hier = hierarchy(sk, levels)
    out = []
    for k in levels:
        s = hier[k]
        dx = delta_projection(f, s, horizon=horizon)
        raw = raw_at_stopping_times(f, s, horizon)
        out += [np.sum(dx.jumps() ** 2), np.sum(np.diff(raw) ** 2)]
    return out


def energy(f: Functional, levels, n_paths: int, seed: int, horizon: float = 1.0,
           y: float = 0.0, workers: int = 1, grid_dt: float | None = None) -> EnergyReport:
    """Monte Carlo estimates of ``E sum (Delta delta^k X)^2`` and its raw version.

    Closed-form functionals use the exact engine with hierarchical coupling
    across levels. ``fbm-state`` functionals use the grid engine with the
    surrogate projection, so both estimates coincide there.
    """
    levels = tuple(sorted(int(k) for k in levels))
    if f.kind == FBM_STATE:
        from .fbm_experiments import fbm_energy_scan

        scan = fbm_energy_scan(f.func, f.hurst, levels, n_paths, seed, horizon=horizon,
                               dt=grid_dt or 1.0 / 2048, workers=workers)
        return EnergyReport(f.name, levels, scan.e2_raw, scan.e2_raw, horizon)
    fn = partial(_energy_exact_path, f=f, levels=levels, horizon=horizon, y=y)
    samples = run_paths(fn, n_paths, seed, workers)
    cond = tuple(Estimate.from_samples(samples[:, 2 * i]) for i in range(len(levels)))
    raw = tuple(Estimate.from_samples(samples[:, 2 * i + 1]) for i in range(len(levels)))
    return EnergyReport(f.name, levels, cond, raw, horizon)


# -- weak probes -------------------------------------------------------------------------

TEST_FUNCTIONALS = ("one", "sign-mid", "clip-terminal")


def test_functional(name: str, value_at, horizon: float) -> float:
    """Bounded test functional of a path given through ``value_at``."""
    if name == "one":
        return 1.0
    if name == "sign-mid":
        return float(np.sign(value_at(0.5 * horizon)))
    if name == "clip-terminal":
        return float(np.clip(value_at(horizon), -1.0, 1.0))
    raise UsageError(f"unknown test functional {name!r}")


test_functional.__test__ = False  # not a pytest test


@dataclass(frozen=True)
class ProbeRow:
    k: int
    t: float
    g: str
    estimate: Estimate
    centered: Estimate | None = None


def _covariation_path(index, rng, fx, fy, levels, t_list, g_list, horizon, y):
    sk = build_skeleton_exact(None, max(levels), horizon, rng, start_value=y)
    hier = hierarchy(sk, levels)
    out = []
    for k in levels:
        s = hier[k]
        dx = delta_projection(fx, s, horizon=horizon)
        dy = delta_projection(fy, s, horizon=horizon)
        out += [bracket(dx, dy, t) for t in t_list]
    finest = hier[max(levels)]
    out += [test_functional(g, finest.value_at, horizon) for g in g_list]
    return out


def delta_covariation_probe(fx: Functional, fy: Functional, t_list, g_list, levels,
                            n_paths: int, seed: int, horizon: float | None = None,
                            y: float = 0.0, workers: int = 1,
                            center_on_time: bool = False) -> list[ProbeRow]:
    """Estimates of ``E[g [delta^k X, delta^k Y]_t]`` on the exact engine.

    Test functionals are evaluated on the finest skeleton of the coupled
    hierarchy. With ``center_on_time`` each row also carries the estimate of
    ``E[g ([.,.]_t - t)]``, the natural residual when X = Y = B.
    """
    if not (fx.closed_form_projection and fy.closed_form_projection):
        raise UsageError("covariation probes need closed-form projections")
    levels = tuple(sorted(int(k) for k in levels))
    t_list = tuple(float(t) for t in t_list)
    g_list = tuple(g_list)
    horizon = float(horizon if horizon is not None else max(t_list))
    fn = partial(_covariation_path, fx=fx, fy=fy, levels=levels, t_list=t_list,
                 g_list=g_list, horizon=horizon, y=y)
    samples = run_paths(fn, n_paths, seed, workers)
    nt = len(t_list)
    gvals = samples[:, len(levels) * nt:]
    rows = []
    for i, k in enumerate(levels):
        for j, t in enumerate(t_list):
            br = samples[:, i * nt + j]
            for gi, g in enumerate(g_list):
                gv = gvals[:, gi]
                est = Estimate.from_samples(gv * br)
                cen = Estimate.from_samples(gv * (br - t)) if center_on_time else None
                rows.append(ProbeRow(k, t, g, est, cen))
    return rows


@dataclass(frozen=True)
class ChainRuleRow:
    k: int
    t: float
    g: str
    left: Estimate
    right: Estimate

    @property
    def difference(self) -> Estimate:
        return self.left.minus(self.right)


def _chain_left_path(index, rng, F, levels, t_list, g_list, horizon, y, table):
    sk = build_skeleton_exact(None, max(levels), horizon, rng, start_value=y)
    hier = hierarchy(sk, levels)
    f = state(F)
    out = []
    for k in levels:
        s = hier[k]
        d = stochastic_derivative(delta_projection(f, s), s, table)
        out += [d.integral(t) for t in t_list]
    out += [test_functional(g, hier[max(levels)].value_at, horizon) for g in g_list]
    return out


def _chain_right_path(index, rng, f_prime, levels, t_list, g_list, horizon, y, dt, table):
    """Right side on fresh paths, one per level.

    The first skeleton time is drawn exactly (``4**-k tau``, fair sign) and the
    Brownian path is then simulated on a grid from ``(T_1, y +- 2^-k)``. Reading
    ``T_1`` off a grid path instead would delay it by about one grid step,
    which is comparable with ``T_1`` itself at the finer levels.
    """
    law = default_law()
    t_arr = np.asarray(t_list)
    out, gvals = [], []
    for k in levels:
        t1 = float(np.ldexp(law.sample(rng), -2 * k))
        x1 = y + float(rng.choice((-1.0, 1.0))) * np.ldexp(1.0, -k)
        n = max(int(math.ceil((horizon - t1) / dt)), 0)
        grid = t1 + dt * np.arange(n + 1)
        vals = x1 + np.concatenate(([0.0], np.cumsum(rng.standard_normal(n) * math.sqrt(dt))))
        ang = angle_bracket(table, k, np.minimum(grid[:, None], t_arr[None, :]))
        w = _apply(f_prime, vals[:-1])[:, None] * np.diff(ang, axis=0)
        out += list(w.sum(axis=0))
        # before T_1 the path stays inside the band; it is read as the chord from (0, y)
        gt, gv = np.concatenate(([0.0], grid)), np.concatenate(([y], vals))

        def value_at(s, gt=gt, gv=gv):
            return float(np.interp(s, gt, gv))

        gvals.append([test_functional(g, value_at, horizon) for g in g_list])
    return out + [v for row in gvals for v in row]


def chain_rule_probe(F, f_prime, levels, t_list, g_list, n_paths: int, seed: int,
                     horizon: float | None = None, y: float = 0.0, dt: float = 1e-4,
                     table: IntensityTable | None = None, workers: int = 1) -> list[ChainRuleRow]:
    """Weak probes of ``D F(B) = f(B) D B`` at finite level.

    The left side ``E[g int_0^t D^k F(B) ds]`` uses the exact engine. The right
    side ``E[g int_0^t f(B_s) D^k B_s ds]`` uses an independent ensemble with
    ``D^k B = h^k`` after an exactly drawn first skeleton time and a grid path
    after it (one fresh path per level).
    """
    table = table or default_table()
    levels = tuple(sorted(int(k) for k in levels))
    t_list = tuple(float(t) for t in t_list)
    g_list = tuple(g_list)
    horizon = float(horizon if horizon is not None else max(t_list))
    left = run_paths(partial(_chain_left_path, F=F, levels=levels, t_list=t_list, g_list=g_list,
                             horizon=horizon, y=y, table=table), n_paths, seed, workers)
    right = run_paths(partial(_chain_right_path, f_prime=f_prime, levels=levels, t_list=t_list,
                              g_list=g_list, horizon=horizon, y=y, dt=dt, table=table),
                      n_paths, seed, workers, stream=1)
    nt = len(t_list)
    rows = []
    for i, k in enumerate(levels):
        for j, t in enumerate(t_list):
            for gi, g in enumerate(g_list):
                lg = left[:, len(levels) * nt + gi]
                rg = right[:, len(levels) * nt + i * len(g_list) + gi]
                rows.append(ChainRuleRow(
                    k, t, g,
                    Estimate.from_samples(lg * left[:, i * nt + j]),
                    Estimate.from_samples(rg * right[:, i * nt + j]),
                ))
    return rows
