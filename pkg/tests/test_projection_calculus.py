"""Projection, derivative, drift kernel, decomposition, energy and probes."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wiener_skeleton.errors import UsageError
from wiener_skeleton.functionals import Affine, Constant, from_name, state, terminal
from wiener_skeleton.intensity import angle_bracket, h_k
from wiener_skeleton.montecarlo import Estimate, path_rng
from wiener_skeleton.projection_calculus import (
    bracket,
    chain_rule_probe,
    decompose,
    decompose_state,
    delta_covariation_probe,
    delta_projection,
    drift_kernel_state,
    energy,
    stochastic_derivative,
)
from wiener_skeleton.skeleton import build_skeleton_exact, coarsen


def _sk(seed, k=4, horizon=1.0, y=0.0):
    return build_skeleton_exact(None, k, horizon, np.random.default_rng(seed), start_value=y)


# -- projections --------------------------------------------------------------


def test_state_projection_is_square_of_anchor():
    sk = _sk(0)
    dx = delta_projection(from_name("square"), sk)
    assert np.array_equal(dx.post_jump_values, sk.values**2)


def test_terminal_identity_projection_is_skeleton():
    sk = _sk(1, y=0.25)
    dx = delta_projection(from_name("identity-terminal"), sk)
    n = len(dx)
    assert dx.initial_value == 0.25
    assert np.allclose(dx.post_jump_values, sk.values[:n], atol=1e-12)


def test_terminal_square_projection_adds_remaining_time():
    sk = _sk(2)
    dx = delta_projection(from_name("square-terminal"), sk)
    n = len(dx)
    assert np.allclose(dx.post_jump_values, sk.values[:n] ** 2 + 1.0 - sk.times[:n], atol=1e-10)


def test_first_passage_starts_at_alpha_squared():
    dx = delta_projection(from_name("first-passage(0.5)"), _sk(3, k=3, horizon=2.0))
    assert dx.initial_value == 0.25


def test_first_passage_frozen_after_hit():
    sk = _sk(4, k=3, horizon=10.0)
    dx = delta_projection(from_name("first-passage(0.5)"), sk)
    hit = np.flatnonzero(np.abs(sk.values) == 0.5)[0]
    assert np.all(dx.post_jump_values[hit:] == sk.times[hit])


def test_unsupported_variant():
    with pytest.raises(UsageError):
        delta_projection(from_name("first-passage(0.5)"), _sk(5), variant="other")


# -- derivative and kernel ------------------------------------------------------


def test_derivative_of_skeleton_is_intensity(table):
    sk = _sk(6)
    d = stochastic_derivative(delta_projection(from_name("identity-terminal"), sk), sk, table)
    assert np.allclose(d.ratio.post_jump_values, 1.0)
    t = np.array([0.3, 0.7])
    weight = h_k(table, 4, t) * (t >= sk.times[0])
    assert np.allclose(d(t), weight)


def test_derivative_of_constant_vanishes(table):
    sk = _sk(7)
    d = stochastic_derivative(delta_projection(state(Constant(3.0)), sk), sk, table)
    assert np.all(d(np.linspace(0, 1, 11)) == 0.0)


def test_derivative_of_square_is_lattice_quotient(table):
    sk = _sk(8)
    d = stochastic_derivative(delta_projection(from_name("square"), sk), sk, table)
    prev = sk.values_with_initial[:-1]
    assert np.allclose(d.ratio.post_jump_values, 2 * prev + sk.signs * sk.mesh, atol=1e-12)


def test_drift_kernel_examples():
    sk = _sk(9, k=3)
    assert np.allclose(drift_kernel_state(np.square, sk), 1.0)
    assert np.allclose(drift_kernel_state(Affine(2.0, -1.0), sk), 0.0, atol=1e-9)
    u = drift_kernel_state(np.abs, sk)
    at_zero = sk.values_with_initial == 0.0
    assert np.allclose(u[at_zero], 2.0**3)
    assert np.allclose(u[~at_zero], 0.0)


# -- decomposition -------------------------------------------------------------


@pytest.mark.parametrize("name", ["square", "abs", "identity-terminal", "square-terminal",
                                  "first-passage(0.5)"])
def test_decomposition_identity(name, table):
    dec = decompose(from_name(name), _sk(10, k=5), table)
    assert dec.identity_residual() <= 1e-12


def test_square_drift_is_angle_bracket(table):
    sk = _sk(11, k=4, y=0.5)
    dec = decompose_state(np.square, sk, table)
    t = np.array([0.1, 0.45, 0.99])
    assert np.allclose(dec.drift_part(t), angle_bracket(table, 4, t), atol=1e-12)
    assert np.allclose(dec.martingale(t), sk.value_at(t) ** 2 - 0.25 - angle_bracket(table, 4, t),
                       atol=1e-12)


def test_linear_state_has_no_drift(table):
    sk = _sk(12)
    dec = decompose_state(Affine(1.0, 0.0), sk, table)
    t = np.linspace(0, 1, 7)
    assert np.allclose(dec.drift_part(t), 0.0)
    assert np.allclose(dec.martingale(t), sk.value_at(t), atol=1e-12)


def test_first_passage_has_no_drift(table):
    dec = decompose(from_name("first-passage(0.5)"), _sk(13, k=3, horizon=3.0), table)
    assert np.all(dec.drift_part(np.linspace(0, 3, 9)) == 0.0)


def test_martingale_part_is_centred(table):
    m = []
    for i in range(3000):
        sk = build_skeleton_exact(None, 3, 1.0, path_rng(3, i))
        m.append(decompose_state(np.abs, sk, table).martingale(1.0))
    assert Estimate.from_samples(m).within(0.0, 3.0)


# -- brackets and energy --------------------------------------------------------


@given(st.integers(0, 10_000), st.floats(-5, 5))
@settings(max_examples=30, deadline=None)
def test_bracket_symmetry_and_scaling(seed, a):
    sk = _sk(seed, k=3)
    dx = delta_projection(from_name("square"), sk)
    dy = delta_projection(from_name("identity-terminal"), sk)
    daz = delta_projection(state(Affine(a, 0.0)), sk)
    dz = delta_projection(state(Affine(1.0, 0.0)), sk)
    assert bracket(dx, dy, 0.8) == bracket(dy, dx, 0.8)
    assert bracket(daz, dx, 0.8) == pytest.approx(a * bracket(dz, dx, 0.8), rel=1e-12, abs=1e-12)


def test_energy_of_brownian_motion():
    rep = energy(from_name("identity-terminal"), (2, 4, 6), 1000, seed=1)
    for k, c, r in rep.rows():
        # Wald: E[4^-k N_T] tends to 1; at level k the count lags by the renewal offset
        assert abs(c.mean - 1.0) < 4 * c.stderr + 4.0**-k * 2
        assert c.mean == pytest.approx(r.mean)
    assert all(rep.ordering_holds())


def test_energy_of_constant():
    rep = energy(state(Constant(2.0)), (2, 3), 50, seed=1)
    assert all(c.mean == 0.0 and r.mean == 0.0 for _, c, r in rep.rows())


def test_terminal_tower_regression():
    """Projected values at a coarse time agree with the finer projection there."""
    f = terminal(np.sin, 1.0)
    resid = []
    for i in range(500):
        fine = build_skeleton_exact(None, 4, 1.0, path_rng(9, i))
        coarse = coarsen(fine)
        a = delta_projection(f, coarse)
        b = delta_projection(f, fine)
        resid.extend(a.post_jump_values - b(a.jump_times))
    assert Estimate.from_samples(resid).within(0.0, 3.0, floor=1e-12)


# -- probes ------------------------------------------------------------------------


def test_covariation_of_brownian_motion():
    rows = delta_covariation_probe(from_name("identity-terminal"), from_name("identity-terminal"),
                                   [0.5, 1.0], ["one"], (3, 6), 2000, seed=4)
    for r in rows:
        if r.k == 6:
            assert r.estimate.within(r.t, 4.0, floor=0.01)


def test_covariation_with_constant_vanishes():
    rows = delta_covariation_probe(from_name("identity-terminal"), state(Constant(1.0)), [1.0],
                                   ["one", "sign-mid", "clip-terminal"], (3,), 100, seed=4)
    assert all(r.estimate.mean == 0.0 for r in rows)


def test_covariation_of_squares():
    rows = delta_covariation_probe(from_name("square"), from_name("square"), [1.0], ["one"],
                                   (6,), 2000, seed=5)
    # 4 int_0^1 E B_s^2 ds = 2
    assert rows[0].estimate.within(2.0, 4.0, floor=0.05)


def test_chain_rule_linear_and_constant(table):
    lin = chain_rule_probe(Affine(2.0, 0.0), Constant(2.0), (3,), [1.0], ["one"], 300, seed=1,
                           table=table, dt=1e-3)
    assert lin[0].difference.within(0.0, 3.0, floor=0.02 * lin[0].left.mean)
    zero = chain_rule_probe(Constant(1.0), Constant(0.0), (3,), [1.0], ["one"], 50, seed=1,
                            table=table, dt=1e-3)
    assert zero[0].left.mean == 0.0 and zero[0].right.mean == 0.0
