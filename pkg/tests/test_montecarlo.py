"""Per-path streams and deterministic reductions."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wiener_skeleton.montecarlo import Estimate, path_rng, run_paths


def _draw(index, rng):
    return rng.standard_normal(3)


def test_streams_depend_only_on_seed_and_index():
    a = path_rng(7, 12).random(5)
    b = path_rng(7, 12).random(5)
    c = path_rng(7, 13).random(5)
    d = path_rng(7, 12, stream=1).random(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)


def test_workers_do_not_change_results():
    one = run_paths(_draw, 300, 5, workers=1, block=16)
    two = run_paths(_draw, 300, 5, workers=2, block=16)
    assert np.array_equal(one, two)


def test_block_size_does_not_change_results():
    assert np.array_equal(run_paths(_draw, 100, 1, block=7), run_paths(_draw, 100, 1, block=64))


@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=50))
@settings(max_examples=100, deadline=None)
def test_estimate_matches_numpy(xs):
    e = Estimate.from_samples(xs)
    assert e.mean == pytest.approx(np.mean(xs), abs=1e-9)
    assert e.stderr == pytest.approx(np.std(xs, ddof=1) / np.sqrt(len(xs)), abs=1e-9)


def test_estimate_difference():
    d = Estimate(10, 1.0, 0.3).minus(Estimate(10, 0.5, 0.4))
    assert d.mean == 0.5 and d.stderr == pytest.approx(0.5)
