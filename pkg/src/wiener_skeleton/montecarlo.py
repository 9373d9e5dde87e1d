"""Monte Carlo plumbing: per-path random streams, estimates, path loops.

Path ``i`` of a run with master seed ``s`` always draws from the Philox stream
keyed by ``SeedSequence(s, spawn_key=(i,))``. Per-path statistics are stored
in path order and reduced only after all paths are in, so the result does not
depend on how paths were distributed over workers.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import partial

import numpy as np

__all__ = ["Estimate", "path_rng", "run_paths", "column_estimates"]


@dataclass(frozen=True)
class Estimate:
    """Sample mean with its standard error."""

    n: int
    mean: float
    stderr: float

    @classmethod
    def from_samples(cls, x) -> "Estimate":
        x = np.asarray(x, dtype=float).ravel()
        n = x.size
        if n == 0:
            return cls(0, math.nan, math.nan)
        mean = float(np.mean(x))
        se = float(np.std(x, ddof=1) / math.sqrt(n)) if n > 1 else math.nan
        return cls(n, mean, se)

    def within(self, target: float, n_se: float = 3.0, floor: float = 0.0) -> bool:
        """``|mean - target| <= max(n_se * stderr, floor)``."""
        return abs(self.mean - target) <= max(n_se * self.stderr, floor)

    def minus(self, other: "Estimate") -> "Estimate":
        """Difference of two independent estimates (combined standard error)."""
        return Estimate(
            min(self.n, other.n),
            self.mean - other.mean,
            math.hypot(self.stderr, other.stderr),
        )

    def __str__(self):
        return f"{self.mean:.6g} +/- {self.stderr:.2g} (n={self.n})"


def path_rng(seed: int, index: int, stream: int = 0) -> np.random.Generator:
    """Counter-based stream for path ``index`` of a run seeded by ``seed``.

    ``stream`` separates independent ensembles drawn under the same seed
    (for example an exact-engine ensemble and its grid-engine oracle).
    """
    key = (int(index),) if stream == 0 else (int(index), int(stream))
    ss = np.random.SeedSequence(int(seed), spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))


def _run_block(fn, seed, stream, indices):
    return [
        np.atleast_1d(np.asarray(fn(i, path_rng(seed, i, stream)), dtype=float))
        for i in indices
    ]


def run_paths(fn, n_paths: int, seed: int, workers: int = 1, block: int = 64,
              stream: int = 0) -> np.ndarray:
    """Evaluate ``fn(index, rng)`` for every path; stack results in path order.

    ``fn`` must return a 1-d array of the same length for every path. With
    ``workers > 1`` blocks of paths are farmed out to a process pool, so
    ``fn`` has to be picklable (a module-level function or a ``partial`` of
    one).
    """
    blocks = [range(a, min(a + block, n_paths)) for a in range(0, n_paths, block)]
    if workers <= 1 or len(blocks) <= 1:
        rows = [r for b in blocks for r in _run_block(fn, seed, stream, b)]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = pool.map(partial(_run_block, fn, seed, stream), blocks)
            rows = [r for part in parts for r in part]
    return np.vstack(rows) if rows else np.empty((0, 0))


def column_estimates(samples: np.ndarray) -> list[Estimate]:
    return [Estimate.from_samples(samples[:, j]) for j in range(samples.shape[1])]
