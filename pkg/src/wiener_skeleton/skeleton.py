"""Dyadic first-passage skeleton of Brownian motion.

At level ``k`` the skeleton records the successive times at which Brownian
motion has moved by exactly ``2**-k`` from its previous recorded value,
together with the direction of each move. The induced step process ``A^k``
lives on the lattice ``y + 2**-k * Z``.

Two engines produce skeletons:

* :func:`build_skeleton_exact` draws the i.i.d. inter-jump times
  ``4**-k * tau`` and independent fair signs directly;
* :func:`extract_skeleton_from_grid` reads the skeleton off a sampled path.

:func:`coarsen` maps a level ``k+1`` skeleton to the nested level ``k``
skeleton of the same path.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numba as nb
import numpy as np

from .errors import DomainError
from .first_exit import FirstExitLaw, default_law

if TYPE_CHECKING:
    from .functionals import GridPath

__all__ = [
    "StepProcess",
    "Skeleton",
    "build_skeleton_exact",
    "coarsen",
    "extract_skeleton_from_grid",
    "evaluate",
    "mesh",
]


def mesh(k: int) -> float:
    """Lattice spacing ``2**-k`` (exact in binary floating point)."""
    return float(np.ldexp(1.0, -int(k)))


@dataclass(frozen=True, eq=False)
class StepProcess:
    """Cadlag piecewise-constant process.

    The value on ``[0, jump_times[0])`` is ``initial_value`` and the value on
    ``[jump_times[n], jump_times[n+1])`` is ``post_jump_values[n]``.
    """

    initial_value: float
    jump_times: np.ndarray
    post_jump_values: np.ndarray
    horizon: float = np.inf

    def __post_init__(self):
        times = np.asarray(self.jump_times, dtype=float)
        vals = np.asarray(self.post_jump_values, dtype=float)
        if times.shape != vals.shape or times.ndim != 1:
            raise DomainError("jump_times and post_jump_values must be 1-d of equal length")
        object.__setattr__(self, "jump_times", times)
        object.__setattr__(self, "post_jump_values", vals)

    def __len__(self):
        return self.jump_times.size

    def __call__(self, t):
        return evaluate(self, t)

    @property
    def values_with_initial(self) -> np.ndarray:
        """Values at ``T_0 = 0, T_1, T_2, ...``."""
        return np.concatenate(([self.initial_value], self.post_jump_values))

    def jumps(self) -> np.ndarray:
        """Jump sizes at the recorded jump times."""
        return np.diff(self.values_with_initial)


def evaluate(sp: StepProcess, t):
    """Cadlag evaluation of a step process at time(s) ``t``."""
    t_arr = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(t_arr)) or np.any(t_arr < 0):
        raise DomainError("step processes are evaluated at finite t >= 0")
    if np.any(t_arr > sp.horizon):
        raise DomainError(f"t exceeds the process horizon {sp.horizon}")
    n = np.searchsorted(sp.jump_times, t_arr, side="right")
    out = sp.values_with_initial[n]
    return out[()] if out.ndim == 0 else out


@dataclass(frozen=True, eq=False)
class Skeleton:
    """One realisation of ``((T^k_n, sigma^k_n))_n`` up to ``horizon``.

    ``times[n-1]`` holds ``T^k_n`` and ``signs[n-1]`` holds ``sigma^k_n``.
    """

    level: int
    times: np.ndarray
    signs: np.ndarray
    horizon: float
    start_value: float = 0.0

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        signs = np.asarray(self.signs, dtype=np.int8)
        if times.shape != signs.shape or times.ndim != 1:
            raise DomainError("times and signs must be 1-d of equal length")
        if self.level < 0:
            raise DomainError("level must be >= 0")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "signs", signs)

    def __len__(self):
        return self.times.size

    @property
    def mesh(self) -> float:
        return mesh(self.level)

    @property
    def lattice_index(self) -> np.ndarray:
        """Integer walk ``(A^k_{T_n} - y) / 2**-k`` for n = 1, 2, ..."""
        return np.cumsum(self.signs, dtype=np.int64)

    @property
    def values(self) -> np.ndarray:
        """Anchor values ``A^k_{T_n}`` for n = 1, 2, ..."""
        return self.start_value + self.mesh * self.lattice_index

    @property
    def values_with_initial(self) -> np.ndarray:
        return np.concatenate(([self.start_value], self.values))

    @property
    def times_with_initial(self) -> np.ndarray:
        return np.concatenate(([0.0], self.times))

    def step_process(self) -> StepProcess:
        """The step process ``A^k``."""
        return StepProcess(self.start_value, self.times, self.values, self.horizon)

    def value_at(self, t):
        return evaluate(self.step_process(), t)

    def count_until(self, t) -> np.ndarray:
        """Number of jumps in ``[0, t]``."""
        return np.searchsorted(self.times, np.asarray(t, dtype=float), side="right")

    def restrict(self, horizon: float) -> "Skeleton":
        """The same skeleton observed only up to ``horizon``."""
        if horizon > self.horizon:
            raise DomainError("cannot extend a skeleton beyond its horizon")
        n = int(self.count_until(horizon))
        return Skeleton(self.level, self.times[:n], self.signs[:n], horizon, self.start_value)

    def to_csv(self, path) -> None:
        """Write the skeleton as CSV with header ``n,time,sign,value``."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["n", "time", "sign", "value"])
            writer.writerow([0, repr(0.0), 0, repr(float(self.start_value))])
            for n, (t, s, v) in enumerate(zip(self.times, self.signs, self.values), start=1):
                writer.writerow([n, repr(float(t)), int(s), repr(float(v))])

    @classmethod
    def from_csv(cls, path, level: int, horizon: float) -> "Skeleton":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        start = float(rows[0]["value"])
        times = np.array([float(r["time"]) for r in rows[1:]])
        signs = np.array([int(r["sign"]) for r in rows[1:]], dtype=np.int8)
        return cls(level, times, signs, horizon, start)


def _draw_signs(rng: np.random.Generator, n: int) -> np.ndarray:
    return (rng.integers(0, 2, size=n, dtype=np.int8) * 2 - 1).astype(np.int8)


def build_skeleton_exact(
    law: FirstExitLaw | None,
    k: int,
    horizon: float,
    rng: np.random.Generator,
    start_value: float = 0.0,
) -> Skeleton:
    """Simulate the level-``k`` skeleton exactly up to ``horizon``.

    Inter-jump times are i.i.d. copies of ``4**-k * tau``; signs are fair
    coin flips independent of the times. Generation stops at the first jump
    beyond ``horizon``, which is not recorded.
    """
    if k < 0:
        raise DomainError("level must be >= 0")
    if not horizon > 0:
        raise DomainError("horizon must be positive")
    law = law or default_law()
    scale = np.ldexp(1.0, -2 * int(k))
    expected = horizon / scale
    # Var(tau) = 2/3, so the count has sd ~ sqrt(2/3 * expected)
    batch = int(expected + 6.0 * np.sqrt(expected) + 16)
    chunks = []
    elapsed = 0.0
    while True:
        inc = law.sample(rng, batch) * scale
        times = elapsed + np.cumsum(inc)
        stop = np.searchsorted(times, horizon, side="right")
        chunks.append(times[:stop])
        if stop < batch:
            break
        elapsed = times[-1]
    times = np.concatenate(chunks) if len(chunks) > 1 else chunks[0]
    signs = _draw_signs(rng, times.size)
    return Skeleton(int(k), times, signs, float(horizon), float(start_value))


def coarsen(fine: Skeleton, return_index: bool = False):
    """Level ``k`` skeleton nested in a level ``k+1`` skeleton.

    A coarse jump occurs each time the fine walk sits two fine steps away
    from the last coarse anchor. Since the fine walk moves by one step, this
    can only happen after an even number of fine steps, and it happens at fine
    step ``2m`` exactly when the walk at step ``2m`` differs from the walk at
    step ``2m - 2``.

    With ``return_index=True`` also return the (0-based) positions of the
    coarse jump times within ``fine.times``.
    """
    if fine.level < 1:
        raise DomainError("cannot coarsen below level 0")
    walk = fine.lattice_index
    even = np.concatenate(([0], walk[1::2]))
    moved = np.flatnonzero(np.diff(even) != 0)
    fine_pos = 2 * moved + 1
    signs = (np.diff(even)[moved] // 2).astype(np.int8)
    coarse = Skeleton(fine.level - 1, fine.times[fine_pos], signs, fine.horizon, fine.start_value)
    if return_index:
        return coarse, fine_pos
    return coarse


def hierarchy(fine: Skeleton, levels) -> dict[int, Skeleton]:
    """Coarsen ``fine`` repeatedly; return the skeletons at the requested levels."""
    wanted = {int(k) for k in levels}
    if not wanted:
        return {}
    if max(wanted) > fine.level or min(wanted) < 0:
        raise DomainError("requested levels must lie in [0, fine.level]")
    out = {}
    sk = fine
    while True:
        if sk.level in wanted:
            out[sk.level] = sk
        if sk.level == min(wanted):
            return out
        sk = coarsen(sk)


@nb.njit(cache=True)
def _extract_clamped(values, start, h):
    n = values.size
    idx = np.empty(n, dtype=np.int64)
    sgn = np.empty(n, dtype=np.int8)
    over = np.empty(n)
    anchor = start
    m = 0
    for i in range(1, n):
        d = values[i] - anchor
        if d >= h:
            idx[m] = i
            sgn[m] = 1
            over[m] = d - h
            anchor = anchor + h
            m += 1
        elif d <= -h:
            idx[m] = i
            sgn[m] = -1
            over[m] = -d - h
            anchor = anchor - h
            m += 1
    return idx[:m], sgn[:m], over[:m]


def _extract_interpolated(values: np.ndarray, start: float, h: float, dt: float):
    """First-passage skeleton of the piecewise-linear interpolant.

    Every lattice level hit inside a grid cell is located by linear
    interpolation; consecutive hits of the same level (the path returning to
    its anchor) are dropped.
    """
    z = (values - start) / h
    za, zb = z[:-1], z[1:]
    up = zb > za
    fa, fb = np.floor(za), np.floor(zb)
    ca, cb = np.ceil(za), np.ceil(zb)
    count = np.where(up, fb - fa, ca - cb).astype(np.int64)
    count = np.maximum(count, 0)
    total = int(count.sum())
    if total == 0:
        return np.empty(0), np.empty(0, dtype=np.int64)
    seg = np.repeat(np.arange(za.size), count)
    first = np.cumsum(count) - count
    rank = np.arange(total) - np.repeat(first, count)
    step = np.where(up[seg], 1, -1)
    base = np.where(up[seg], fa[seg] + 1, ca[seg] - 1)
    level = (base + step * rank).astype(np.int64)
    frac = (level - za[seg]) / (zb[seg] - za[seg])
    times = (seg + frac) * dt
    prev = np.concatenate(([0], level[:-1]))
    keep = level != prev
    return times[keep], level[keep]


def extract_skeleton_from_grid(path: "GridPath", k: int, method: str = "interpolate") -> Skeleton:
    """Read the level-``k`` skeleton off a sampled path.

    ``method="interpolate"`` (default) records the first-passage times of the
    piecewise-linear interpolant, so several lattice moves inside one grid cell
    are all recorded. ``method="grid"`` scans grid points only: the first grid
    time with ``|path - anchor| >= 2**-k`` is recorded and the anchor moves by
    exactly one lattice step towards the path.

    Anchors are lattice-exact in both modes.
    """
    values = np.asarray(path.values, dtype=float)
    if values.size == 0:
        raise DomainError("empty path")
    h = mesh(k)
    start = float(path.start_value)
    horizon = (values.size - 1) * path.dt
    if method == "interpolate":
        times, level = _extract_interpolated(values, start, h, path.dt)
        signs = np.diff(np.concatenate(([0], level))).astype(np.int8)
    elif method == "grid":
        idx, signs, _ = _extract_clamped(values, start, h)
        times = idx * path.dt
    else:
        raise DomainError(f"unknown extraction method {method!r}")
    return Skeleton(int(k), times, signs, horizon, start)


def grid_overshoot(path: "GridPath", k: int) -> float:
    """Largest excess ``|path - anchor| - 2**-k`` at the recorded grid times
    of the clamped (``method="grid"``) extraction."""
    values = np.asarray(path.values, dtype=float)
    _, _, over = _extract_clamped(values, float(path.start_value), mesh(k))
    return float(over.max()) if over.size else 0.0


def sup_distance(path: "GridPath", sk: Skeleton) -> float:
    """``max_i |path(t_i) - A^k(t_i)|`` over the grid points of ``path``."""
    values = np.asarray(path.values, dtype=float)
    grid = np.arange(values.size) * path.dt
    grid = np.minimum(grid, sk.horizon)
    return float(np.max(np.abs(values - sk.value_at(grid))))
