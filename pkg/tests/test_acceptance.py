"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the summary section at the end
of the session lists every criterion. Sample sizes keep the whole suite within
a few minutes on a laptop.
"""

import json
import math

import numpy as np
import pytest
from scipy import integrate, stats

from wiener_skeleton.clark_ocone import mean_density_curve, representation_residual
from wiener_skeleton.cli import main
from wiener_skeleton.fbm_experiments import fbm_energy_scan
from wiener_skeleton.first_exit import default_law
from wiener_skeleton.functionals import (
    Affine,
    ClippedIdentity,
    ClippedPrimitive,
    Constant,
    from_name,
    generate_brownian,
)
from wiener_skeleton.intensity import angle_bracket, default_table
from wiener_skeleton.local_time import (
    bracket_direct,
    bracket_F_A,
    bracket_F_F,
    covariation_identity_check,
    crossing_counts,
    energy_identity_check,
    local_time_integral,
    tanaka_check,
)
from wiener_skeleton.montecarlo import Estimate, path_rng, run_paths
from wiener_skeleton.projection_calculus import (
    chain_rule_probe,
    decompose,
    decompose_state,
    delta_covariation_probe,
    drift_kernel_state,
    energy,
)
from wiener_skeleton.skeleton import (
    build_skeleton_exact,
    coarsen,
    extract_skeleton_from_grid,
    grid_overshoot,
    mesh,
    sup_distance,
)

DT = 1e-4
pytestmark = pytest.mark.slow


def _fmt(e: Estimate) -> str:
    return f"{e.mean:.6g} +- {e.stderr:.2g}"


# 1 ------------------------------------------------------------------------------


def test_criterion_01_tau_law(record_criterion):
    law = default_law()
    x = law.sample(path_rng(1, 0), 1_000_000)
    mean = Estimate.from_samples(x)
    second = Estimate.from_samples(x * x)
    m2, _ = integrate.quad(lambda t: t * t * law.density(t), 0, 60, limit=400, points=[0.5, 2])
    ks = stats.kstest(x, law.cdf)
    ok = mean.within(1.0) and second.within(m2) and ks.pvalue > 0.01
    record_criterion(1, "tau law", ok,
                     f"mean {_fmt(mean)}, E tau^2 {_fmt(second)} vs {m2:.6f}, KS p={ks.pvalue:.3f}")
    assert ok


# 2 ------------------------------------------------------------------------------


def _coarse_steps(index, rng):
    fine = build_skeleton_exact(None, 6, 4.0, rng)
    _, pos = coarsen(fine, return_index=True)
    steps = np.diff(np.concatenate(([-1], pos)))
    return [steps.sum(), steps.size]


def test_criterion_02_skeleton_exactness(record_criterion):
    exact = True
    for i in range(300):
        sk = build_skeleton_exact(None, 8, 1.0, path_rng(2, i))
        exact &= bool(np.all(np.abs(np.diff(sk.values_with_initial)) == mesh(8)))
    worst = -np.inf
    for i in range(40):
        path = generate_brownian(DT, 1.0, 0.0, path_rng(2, i, stream=1))
        for k in (4, 6, 8):
            for method in ("interpolate", "grid"):
                sk = extract_skeleton_from_grid(path, k, method=method)
                slack = sup_distance(path, sk) - mesh(k) - grid_overshoot(path, k)
                worst = max(worst, slack)
    s = run_paths(_coarse_steps, 3000, 2, stream=2)
    # steps per coarse jump: ratio estimator over paths (delta method)
    tot, cnt = s[:, 0], s[:, 1]
    r = tot.sum() / cnt.sum()
    resid = tot - r * cnt
    se = math.sqrt(np.var(resid, ddof=1) / len(cnt)) / cnt.mean()
    per_step = Estimate(int(cnt.sum()), float(r), float(se))
    ok = exact and worst <= 1e-12 and per_step.within(4.0)
    record_criterion(2, "skeleton exactness", ok,
                     f"jumps exact={exact}, max(sup - 2^-k - overshoot)={worst:.3g}, "
                     f"fine steps per coarse step {_fmt(per_step)}")
    assert ok


# 3 ------------------------------------------------------------------------------


def _counts(index, rng, k, times):
    sk = build_skeleton_exact(None, k, 1.0, rng)
    return sk.count_until(np.asarray(times)) * 4.0**-k


def test_criterion_03_intensity(record_criterion):
    from functools import partial

    table = default_table()
    end = float(table.u(table.s_max))
    grid = np.linspace(0, 1, 20001)
    sups = [float(np.max(np.abs(angle_bracket(table, k, grid) - grid))) for k in (2, 4, 6)]
    times = (0.25, 0.5, 1.0)
    c = run_paths(partial(_counts, k=4, times=times), 10_000, 3)
    mc = [Estimate.from_samples(c[:, j]).within(angle_bracket(table, 4, t)) for j, t in enumerate(times)]
    ok = abs(end - 1) <= 1e-3 and sups[0] > sups[1] > sups[2] and all(mc)
    record_criterion(3, "intensity", ok,
                     f"u(s_max)={end:.6f}, sup deviation k=2,4,6: "
                     f"{', '.join(f'{v:.3g}' for v in sups)}, compensator within 3 se: {mc}")
    assert ok


# 4 ------------------------------------------------------------------------------


def _ito_square(index, rng, table):
    sk = build_skeleton_exact(None, 8, 1.0, rng)
    dec = decompose_state(np.square, sk, table)
    t = np.concatenate((sk.times, [1.0]))
    u_ok = bool(np.all(drift_kernel_state(np.square, sk) == 1.0))
    drift_err = float(np.max(np.abs(dec.drift_part(t) - angle_bracket(table, 8, t))))
    return [float(dec.martingale(1.0)), float(u_ok), drift_err]


def test_criterion_04_ito_square(record_criterion):
    from functools import partial

    table = default_table()
    s = run_paths(partial(_ito_square, table=table), 10_000, 4)
    m = Estimate.from_samples(s[:, 0])
    m2 = Estimate.from_samples(s[:, 0] ** 2)
    u_exact = bool(np.all(s[:, 1] == 1.0))
    drift_err = float(s[:, 2].max())
    ok = u_exact and drift_err <= 1e-12 and m.within(0.0) and abs(m2.mean - 2.0) <= 0.2
    record_criterion(4, "Ito skeleton for x^2", ok,
                     f"U==1 {u_exact}, max|drift - <A>|={drift_err:.2g}, "
                     f"E M_1 {_fmt(m)}, E M_1^2 {_fmt(m2)} (target 2 +- 10%)")
    assert ok


# 5 ------------------------------------------------------------------------------


def test_criterion_05_decomposition_identity(record_criterion):
    table = default_table()
    names = ("square", "abs", "identity", "identity-terminal", "square-terminal",
             "first-passage(0.5)")
    worst = 0.0
    for name in names:
        f = from_name(name)
        for i in range(100):
            sk = build_skeleton_exact(None, 6, 1.0, path_rng(5, i), start_value=0.125 * (i % 3))
            worst = max(worst, decompose(f, sk, table).identity_residual())
    ok = worst <= 1e-12
    record_criterion(5, "decomposition identity", ok, f"max residual {worst:.3g} over {names}")
    assert ok


# 6 ------------------------------------------------------------------------------


def test_criterion_06_energy_ordering(record_criterion):
    names = ("square", "abs", "identity", "identity-terminal", "square-terminal",
             "first-passage(0.5)")
    details, ok = [], True
    for name in names:
        rep = energy(from_name(name), (2, 4, 6, 8), 1000, seed=6)
        holds = rep.ordering_holds(2.0)
        ok &= all(holds)
        details.append(f"{name}:{sum(holds)}/{len(holds)}")
    rep = energy(from_name("fbm-sin(0.75)"), (3, 5, 7), 300, seed=6, grid_dt=1.0 / 2048)
    holds = rep.ordering_holds(2.0)
    ok &= all(holds)
    details.append(f"fbm-sin(0.75):{sum(holds)}/{len(holds)}")
    record_criterion(6, "energy ordering", ok, ", ".join(details))
    assert ok


# 7 ------------------------------------------------------------------------------


def test_criterion_07_clark_ocone(record_criterion):
    table = default_table()
    lin = representation_residual(from_name("identity-terminal"), 8, 1000, seed=7, dt=DT, table=table)
    sq = [representation_residual(from_name("square-terminal"), k, 1000, seed=7, dt=DT, table=table)
          for k in (4, 6, 8)]
    ratios = [r.ratio.mean for r in sq]
    y = 0.5
    dens = mean_density_curve(from_name("square-terminal"), 8, [0.25, 0.5, 0.75, 0.95], 4000,
                              seed=7, y=y, table=table)
    dens_ok = [abs(m - 2 * y) <= 3 * se for m, se in zip(dens.mean, dens.stderr)]
    ok = lin.ratio.mean <= 0.02 and ratios[0] > ratios[1] > ratios[2] and all(dens_ok)
    record_criterion(7, "Clark-Ocone", ok,
                     f"ratio(B_T, k=8) {_fmt(lin.ratio)}; ratio(B_T^2, k=4,6,8) "
                     f"{', '.join(_fmt(r.ratio) for r in sq)}; density of B_T^2 vs 2y=1: "
                     f"{', '.join(f'{m:.4f}+-{se:.2g}' for m, se in zip(dens.mean, dens.stderr))}")
    assert ok


# 8 ------------------------------------------------------------------------------


def test_criterion_08_delta_covariation(record_criterion):
    b = from_name("identity-terminal")
    rows = delta_covariation_probe(b, b, [0.25, 0.5, 1.0], ["one"], (8,), 4000, seed=8)
    bound = 2.0 * mesh(8)
    checks = [abs(r.estimate.mean - r.t) <= max(3 * r.estimate.stderr, bound) for r in rows]
    ok = all(checks)
    record_criterion(8, "delta-covariation of B", ok,
                     "; ".join(f"t={r.t}: {_fmt(r.estimate)}" for r in rows))
    assert ok


# 9 ------------------------------------------------------------------------------


def test_criterion_09_local_time(record_criterion):
    table = default_table()
    worst = 0.0
    for i in range(200):
        sk = build_skeleton_exact(None, 8, 1.0, path_rng(9, i))
        cc = crossing_counts(sk, 3, 1.0)
        for F in (np.square, np.abs, np.sin, ClippedPrimitive(0.5)):
            fa, ff = bracket_direct(F, sk, 3, 1.0)
            worst = max(worst, abs(bracket_F_A(F, cc) - fa), abs(bracket_F_F(F, cc) - ff))
    cov = covariation_identity_check(np.square, f=Affine(2.0, 0.0), levels=(8,), n_paths=2000,
                                     seed=9, dt=DT)[0]
    en = energy_identity_check(ClippedPrimitive(0.5), f=ClippedIdentity(0.5), levels=(8,),
                               n_paths=2000, seed=9, dt=DT)[0]
    lti = []
    for i in range(20):
        sk = build_skeleton_exact(None, 8, 1.0, path_rng(9, i, stream=2))
        lti.append(local_time_integral(np.square, sk, table, 1.0))
    target = 2.0 * float(angle_bracket(table, 8, 1.0))
    lti_err = max(abs(v - target) for v in lti)
    ok = (worst <= 1e-12 and cov.discrepancy.within(0.0) and en.discrepancy.within(0.0)
          and lti_err <= 1e-3 and abs(target - 2.0) <= 1e-3)
    record_criterion(9, "local time identities", ok,
                     f"rearrangement max err {worst:.2g}; fak1(x^2) {_fmt(cov.skeleton_side)} vs grid "
                     f"{_fmt(cov.grid_oracle)}; fak2(clip) {_fmt(en.skeleton_side)} vs grid "
                     f"{_fmt(en.grid_oracle)}; LTI(x^2,1) - 2<A>_1 max {lti_err:.2g}, 2<A>_1={target:.6f}")
    assert ok


# 10 -----------------------------------------------------------------------------


def test_criterion_10_tanaka(record_criterion):
    rep = tanaka_check(k=8, n_paths=4000, seed=10, dt=DT)
    diff = rep.compensator.minus(rep.departure_prediction)
    ok = diff.within(0.0)
    record_criterion(10, "Tanaka", ok,
                     f"N^(k,|x|)_1 {_fmt(rep.compensator)} vs 2 L_hat(0) {_fmt(rep.departure_prediction)} "
                     f"(paired difference {_fmt(rep.paired_difference)}); cell-based 2 L_hat(0) "
                     f"{_fmt(rep.cell_prediction)}; occupation oracle {_fmt(rep.occupation)}; "
                     f"normalization occupation/L_hat(0) = {_fmt(rep.normalization)}")
    assert ok


# 11 -----------------------------------------------------------------------------


def test_criterion_11_fbm(record_criterion):
    scan = fbm_energy_scan(np.sin, 0.75, range(3, 8), 1000, seed=11, dt=1.0 / 2048)
    e2 = scan.e2_raw
    e2_ok = all(a.mean - b.mean > 2 * math.hypot(a.stderr, b.stderr) for a, b in zip(e2, e2[1:]))
    gap = [g.mean for g in scan.projection_gap]
    gap_ok = all(a > b for a, b in zip(gap, gap[1:]))
    ok = e2_ok and gap_ok
    record_criterion(11, "fBm H=0.75, f=sin", ok,
                     f"e2_raw k=3..7: {', '.join(_fmt(e) for e in e2)}; gap: "
                     f"{', '.join(f'{g:.4g}' for g in gap)}")
    assert ok


# 12 -----------------------------------------------------------------------------


def test_criterion_12_chain_rule(record_criterion):
    table = default_table()
    g_list = ["one", "sign-mid", "clip-terminal"]
    lin = chain_rule_probe(Affine(2.0, 0.3), Constant(2.0), (2, 4, 6, 8), [0.5, 1.0], g_list, 2000,
                           seed=12, dt=DT, table=table)
    lin_ok = [r.difference.within(0.0) for r in lin]
    sq = chain_rule_probe(np.square, Affine(2.0, 0.0), (8,), [0.5, 1.0], g_list, 2000, seed=12,
                          dt=DT, table=table)
    sq_ok = [r.difference.within(0.0) for r in sq]
    ok = all(lin_ok) and all(sq_ok)
    record_criterion(12, "chain rule", ok,
                     f"linear F: {sum(lin_ok)}/{len(lin_ok)} probes within 3 se; F=x^2 at k=8: "
                     + "; ".join(f"t={r.t},{r.g}: {_fmt(r.left)} vs {_fmt(r.right)}" for r in sq))
    assert ok


# 13 -----------------------------------------------------------------------------


def test_criterion_13_reproducibility(record_criterion, tmp_path):
    args = ["run", "ito-decompose", "--functional", "square", "--k", "6", "--k-min", "2",
            "--k-max", "6", "--paths", "1000", "--seed", "13"]
    outs = []
    for label, workers in (("a", 1), ("b", 1), ("c", 2), ("d", 4)):
        out = tmp_path / label
        assert main([*args, "--workers", str(workers), "--out-dir", str(out)]) == 0
        outs.append(out)
    files = json.loads((outs[0] / "manifest.json").read_text())["outputs"]
    same = all((o / f).read_bytes() == (outs[0] / f).read_bytes() for o in outs[1:] for f in files)
    record_criterion(13, "reproducibility", same,
                     f"{files} byte-identical over two serial runs and 2 and 4 workers: {same}")
    assert same
