"""Law of the exit time of Brownian motion from [-1, 1]."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from wiener_skeleton.errors import DomainError
from wiener_skeleton.first_exit import FirstExitLaw, sample_tau, tau_density, tau_survival


def laplace_oracle(lam):
    # E exp(-lam tau) = 1 / cosh(sqrt(2 lam)) for exit from [-1, 1] started at 0
    return 1.0 / math.cosh(math.sqrt(2.0 * lam))


def test_survival_at_zero_is_one():
    assert tau_survival(0.0) == 1.0


def test_far_tail_is_tiny():
    assert tau_survival(50.0) <= 1e-20
    assert tau_survival(50.0) <= 4 / math.pi * math.exp(-math.pi**2 * 50 / 8)


def test_non_finite_time_rejected():
    with pytest.raises(DomainError):
        tau_survival(float("nan"))
    with pytest.raises(DomainError):
        tau_survival(-0.1)
    with pytest.raises(DomainError):
        tau_density(0.0)


def test_series_agree_near_crossover(law):
    t = np.linspace(0.3, 0.8, 100)
    assert np.max(law.series_gap(t)) <= 10 * law.series_tolerance


@pytest.mark.parametrize("lam", [0.1, 0.5, 1.0, 3.0])
def test_laplace_transform_matches_density(law, lam):
    val, _ = integrate.quad(lambda t: math.exp(-lam * t) * law.density(t), 0, 60,
                            points=[0.5, 2.0], limit=400)
    assert val == pytest.approx(laplace_oracle(lam), abs=1e-10)


def test_density_normalised_with_unit_mean(law):
    mass, _ = integrate.quad(law.density, 0, 50, points=[0.5, 2.0], limit=400)
    mean, _ = integrate.quad(lambda t: t * law.density(t), 0, 50, points=[0.5, 2.0], limit=400)
    assert mass == pytest.approx(1.0, abs=1e-10)
    assert mean == pytest.approx(1.0, abs=1e-10)


def test_second_moment_quadrature_against_laplace_derivative(law):
    # E tau^2 = d^2/dlam^2 sech(sqrt(2 lam)) at 0 = 5/3
    m2, _ = integrate.quad(lambda t: t * t * law.density(t), 0, 60, points=[0.5, 2.0], limit=400)
    assert m2 == pytest.approx(5.0 / 3.0, abs=1e-9)


def test_density_vanishes_at_zero(law):
    assert law.density(1e-3) < 1e-100
    # small-t asymptotics: two first-passage densities to distance 1
    for t in (0.02, 0.05):
        lead = 2.0 * math.exp(-1.0 / (2 * t)) / math.sqrt(2 * math.pi * t**3)
        assert law.density(t) == pytest.approx(lead, rel=1e-6)


def test_survival_at_one_against_fine_grid_exits(law):
    # crude Monte Carlo oracle: exits of a Gaussian random walk from [-1, 1]
    rng = np.random.default_rng(5)
    n, dt = 20000, 1e-3
    x = np.zeros(n)
    alive = np.ones(n, dtype=bool)
    for _ in range(int(1 / dt)):
        x[alive] += rng.standard_normal(alive.sum()) * math.sqrt(dt)
        alive &= np.abs(x) < 1
    mc = alive.mean()
    se = math.sqrt(mc * (1 - mc) / n)
    # discrete monitoring misses exits, biasing survival upwards by O(sqrt(dt))
    s1 = law.survival(1.0)
    assert s1 <= mc + 3 * se
    assert mc - s1 < 0.05


@given(st.floats(0.0, 30.0), st.floats(1e-6, 5.0))
@settings(max_examples=200, deadline=None)
def test_survival_strictly_decreasing(t, dt):
    law = FirstExitLaw()
    s1, s2 = law.survival(t), law.survival(t + dt)
    assert s2 <= s1
    if s1 > 1e-290 and s1 < 1.0:
        assert s2 < s1


@given(st.floats(0.01, 0.99))
@settings(max_examples=50, deadline=None)
def test_quantile_inverts_cdf(p):
    law = FirstExitLaw()
    assert law.cdf(law.quantile(p)) == pytest.approx(p, abs=1e-12)


def test_sampler_moments_and_positivity(law):
    rng = np.random.default_rng(1)
    x = sample_tau(rng, 200_000)
    assert np.all(x > 0)
    se = x.std(ddof=1) / math.sqrt(x.size)
    assert abs(x.mean() - 1.0) <= 3 * se
    se2 = (x * x).std(ddof=1) / math.sqrt(x.size)
    assert abs((x * x).mean() - 5.0 / 3.0) <= 3 * se2


def test_sampler_ks(law):
    x = law.sample(np.random.default_rng(2), 100_000)
    assert stats.kstest(x, law.cdf).pvalue > 0.01


def test_table_accuracy_in_probability(law):
    # table draws sit within 1e-9 of the exact inverse in probability
    rng = np.random.default_rng(3)
    v = np.random.default_rng(3).random(5000)
    x = law.sample(rng, 5000)
    assert np.max(np.abs(law.cdf(x) - v)) < 1e-9


def test_refined_draws_match_within_tolerance(law):
    a = law.sample(np.random.default_rng(4), 2000)
    b = law.sample(np.random.default_rng(4), 2000, refine=True)
    assert np.max(np.abs(law.cdf(a) - law.cdf(b))) < 1e-9


def test_scalar_draw():
    x = sample_tau(np.random.default_rng(0))
    assert isinstance(x, float) and x > 0
