"""Renewal density of the tau-renewal process and the angle bracket."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wiener_skeleton.errors import DomainError
from wiener_skeleton.intensity import angle_bracket, h_k, solve_renewal_density
from wiener_skeleton.montecarlo import Estimate
from wiener_skeleton.skeleton import build_skeleton_exact


def test_endpoints(table):
    assert table.u(0.0) == 0.0
    assert abs(table.u(table.s_max) - 1.0) <= 1e-3
    assert np.all(table.u_values >= 0)


def test_cumulative_monotone(table):
    assert np.all(np.diff(table.cumulative) >= 0)


def test_offset_equals_second_moment_formula(table):
    # U(s) = s - c0 + o(1) with c0 = 1 - E tau^2 / 2 = 1/6 ... sign: s - U -> 1/6
    assert table.offset() == pytest.approx(1.0 / 6.0, abs=1e-6)


@pytest.mark.parametrize("lam", [0.5, 1.0, 2.0, 5.0])
def test_laplace_transform_of_renewal_density(table, lam):
    # int e^{-lam s} u(s) ds = p*/(1 - p*),  p* = sech(sqrt(2 lam))
    s = table.grid
    f = np.exp(-lam * s) * table.u_values
    val = float(np.sum(0.5 * (f[1:] + f[:-1])) * table.ds)
    p = 1.0 / math.cosh(math.sqrt(2 * lam))
    assert val == pytest.approx(p / (1 - p), rel=1e-6)


def test_domain_errors(table):
    with pytest.raises(DomainError):
        solve_renewal_density(ds=0.0)
    with pytest.raises(DomainError):
        h_k(table, 3, -1.0)


def test_h_k_limits(table):
    assert h_k(table, 4, 0.0) == 0.0
    t = np.linspace(20 * 4.0**-4, 1.0, 50)
    assert np.max(np.abs(h_k(table, 4, t) - 1.0)) <= 1e-3


@pytest.mark.parametrize("k", [1, 2, 4, 6])
def test_bracket_at_one_close_to_one(table, k):
    # deviation is the renewal offset 1/6 scaled by 4^-k
    c = table.offset()
    assert abs(angle_bracket(table, k, 1.0) - 1.0) <= max(1e-3, 1.01 * c * 4.0**-k)


def test_sup_deviation_decreasing(table):
    t = np.linspace(0, 1, 20001)
    sups = [np.max(np.abs(angle_bracket(table, k, t) - t)) for k in (2, 4, 6)]
    assert sups[0] > sups[1] > sups[2]


@given(st.floats(0, 1), st.floats(0, 1), st.integers(0, 8))
@settings(max_examples=200, deadline=None)
def test_bracket_monotone(a, b, k):
    from wiener_skeleton.intensity import default_table

    tab = default_table()
    lo, hi = min(a, b), max(a, b)
    assert angle_bracket(tab, k, lo) <= angle_bracket(tab, k, hi)


def test_compensator_matches_jump_counts(table):
    k = 3
    rng = np.random.default_rng(9)
    counts = {t: [] for t in (0.1, 0.5, 1.0)}
    for _ in range(4000):
        sk = build_skeleton_exact(None, k, 1.0, rng)
        for t in counts:
            counts[t].append(sk.count_until(t) * 4.0**-k)
    for t, c in counts.items():
        est = Estimate.from_samples(c)
        assert est.within(angle_bracket(table, k, t), 3.0)


def test_renewal_offset_against_skeleton_counts(table):
    # Monte Carlo renewal function at level 0: E N(s) = U(s) for s = 10
    rng = np.random.default_rng(10)
    n = [build_skeleton_exact(None, 0, 10.0, rng).count_until(10.0) for _ in range(4000)]
    est = Estimate.from_samples(n)
    assert est.within(10.0 - table.offset(), 3.0)
