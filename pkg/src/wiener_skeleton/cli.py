"""Experiment runner: ``wiener-skeleton run <experiment> [options]``.

Settings come from built-in defaults, then an optional flat ``key = value``
config file (``--config``), then command-line flags. Every experiment writes
CSV files plus ``manifest.json`` into ``--out-dir``.

Exit codes: 0 success, 2 unknown experiment or bad usage, 3 malformed config
file, 4 output directory not writable.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .errors import DomainError, UsageError
from .montecarlo import Estimate, path_rng

EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_OUTPUT = 4

EXPERIMENTS = (
    "tau-moments",
    "intensity-table",
    "skeleton-sim",
    "ito-decompose",
    "energy-scan",
    "covariation",
    "clark-ocone",
    "local-time",
    "fbm",
    "chain-rule",
)


def _float_list(text: str) -> tuple:
    return tuple(float(x) for x in str(text).replace(";", ",").split(",") if x.strip())


# key -> (type, default, help)
SETTINGS = {
    "seed": (int, 0, "master seed"),
    "paths": (int, 2000, "number of Monte Carlo paths"),
    "samples": (int, 1_000_000, "tau draws (tau-moments)"),
    "k": (int, None, "single level (overrides k-min/k-max)"),
    "k-min": (int, 2, "smallest level"),
    "k-max": (int, 6, "largest level"),
    "horizon": (float, 1.0, "time horizon T"),
    "grid-dt": (float, 1e-4, "grid step of the grid engine"),
    "workers": (int, 1, "worker processes"),
    "functional": (str, None, "catalogue functional (square, abs, identity-terminal, ...)"),
    "functional-y": (str, None, "second functional for covariation (default: same)"),
    "hurst": (float, None, "Hurst index (fbm; default from the functional)"),
    "band": (int, 3, "band m for local time (stop at |B| = 2^m)"),
    "start": (float, 0.0, "start value y"),
    "times": (_float_list, (0.25, 0.5, 0.75, 1.0), "comma-separated reporting times"),
    "s-max": (float, 50.0, "renewal table end"),
    "ds": (float, 5e-4, "renewal table step"),
    "stride": (int, 20, "row stride of the intensity CSV"),
    "out-dir": (str, "out", "output directory"),
}

DEFAULT_FUNCTIONAL = {
    "ito-decompose": "square",
    "energy-scan": "square",
    "covariation": "identity-terminal",
    "clark-ocone": "square-terminal",
    "fbm": "fbm-sin(0.75)",
    "chain-rule": "square",
}


class ConfigError(Exception):
    pass


def read_config(path) -> dict:
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("_", "-")
        if key not in SETTINGS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        conv = SETTINGS[key][0]
        try:
            out[key] = conv(value)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {value!r}") from exc
    return out


def build_parser() -> argparse.ArgumentParser:
    keys = "\n".join(f"  {k:<14} {h}" for k, (_, _, h) in SETTINGS.items())
    parser = argparse.ArgumentParser(
        prog="wiener-skeleton",
        description="Dyadic skeleton experiments for Wiener functionals.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="config file keys (flat key = value, flags override):\n" + keys,
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one experiment",
                         formatter_class=argparse.RawDescriptionHelpFormatter,
                         epilog="config file keys:\n" + keys)
    run.add_argument("experiment", choices=EXPERIMENTS)
    run.add_argument("--config", help="flat key = value settings file")
    for key, (conv, _, help_text) in SETTINGS.items():
        run.add_argument(f"--{key}", type=conv, default=argparse.SUPPRESS, help=help_text)
    return parser


def resolve_settings(args: argparse.Namespace) -> dict:
    settings = {k: d for k, (_, d, _) in SETTINGS.items()}
    if getattr(args, "config", None):
        settings.update(read_config(args.config))
    for key in SETTINGS:
        attr = key.replace("-", "_")
        if hasattr(args, attr):
            settings[key] = getattr(args, attr)
    if settings["functional"] is None:
        settings["functional"] = DEFAULT_FUNCTIONAL.get(args.experiment)
    return settings


def levels_of(settings) -> tuple:
    if settings["k"] is not None:
        return (int(settings["k"]),)
    lo, hi = int(settings["k-min"]), int(settings["k-max"])
    if lo > hi or lo < 0:
        raise UsageError("need 0 <= k-min <= k-max")
    return tuple(range(lo, hi + 1))


# -- output -------------------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return repr(v) if math.isfinite(v) else ("nan" if math.isnan(v) else ("inf" if v > 0 else "-inf"))
    return str(v)


class Writer:
    """Collects CSV outputs of one experiment run."""

    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        self.files: list[str] = []

    def csv(self, name: str, header, rows) -> None:
        path = self.out_dir / name
        with open(path, "w", newline="") as fh:
            fh.write("# manifest=manifest.json\n")
            fh.write(",".join(header) + "\n")
            for row in rows:
                fh.write(",".join(_fmt(v) for v in row) + "\n")
        self.files.append(name)


def _est_row(prefix, est: Estimate):
    return (*prefix, est.mean, est.stderr, est.n)


# -- experiments ------------------------------------------------------------------------


def _fbm_dt(s) -> float:
    """The fBm kernel is O(M^2): unless a grid step is set explicitly, use 1/2048."""
    return 1.0 / 2048 if s["grid-dt"] == SETTINGS["grid-dt"][1] else float(s["grid-dt"])


def exp_tau_moments(s, w: Writer):
    from scipy import integrate, stats

    from .first_exit import default_law

    law = default_law()
    x = law.sample(path_rng(s["seed"], 0), int(s["samples"]))
    m2, _ = integrate.quad(lambda t: t * t * law.density(t), 0, 60, limit=400, points=[0.5, 2])
    ks = stats.kstest(x, law.cdf)
    w.csv("tau_moments.csv", ("statistic", "estimate", "stderr", "n", "reference"), [
        (*_est_row(("mean",), Estimate.from_samples(x)), 1.0),
        (*_est_row(("second_moment",), Estimate.from_samples(x * x)), m2),
        ("ks_distance", float(ks.statistic), math.nan, x.size, 1.628 / math.sqrt(x.size)),
    ])


def exp_intensity_table(s, w: Writer):
    from .intensity import solve_renewal_density

    tab = solve_renewal_density(None, s["s-max"], s["ds"])
    stride = max(1, int(s["stride"]))
    sl = slice(None, None, stride)
    w.csv("intensity_table.csv", ("s", "u", "cumulative"),
          zip(tab.grid[sl], tab.u_values[sl], tab.cumulative[sl]))


def exp_skeleton_sim(s, w: Writer):
    from .skeleton import build_skeleton_exact, hierarchy

    levels = levels_of(s)
    rows = []
    for i in range(int(s["paths"])):
        sk = build_skeleton_exact(None, max(levels), s["horizon"], path_rng(s["seed"], i),
                                  start_value=s["start"])
        hier = hierarchy(sk, levels)
        for k in levels:
            sub = hier[k]
            end = sub.values[-1] if len(sub) else sub.start_value
            rows.append((i, k, len(sub), end))
        if i == 0:
            sk.to_csv(w.out_dir / f"skeleton_k{max(levels)}_path0.csv")
            w.files.append(f"skeleton_k{max(levels)}_path0.csv")
    w.csv("jump_counts.csv", ("path", "k", "jumps", "A_T"), rows)


def _ito_path(index, rng, f, levels, times, horizon, y, table):
    from .projection_calculus import decompose
    from .skeleton import build_skeleton_exact, hierarchy

    sk = build_skeleton_exact(None, max(levels), horizon, rng, start_value=y)
    hier = hierarchy(sk, levels)
    out = []
    for k in levels:
        d = decompose(f, hier[k], table, horizon)
        tt = np.minimum(times, d.delta_x.horizon)
        m = d.martingale(tt)
        out += list(m) + list(m * m) + list(d.drift_part(tt)) + [d.identity_residual()]
    return out


def exp_ito_decompose(s, w: Writer):
    from functools import partial

    from .functionals import from_name
    from .intensity import default_table
    from .montecarlo import run_paths

    f = from_name(s["functional"], s["horizon"])
    levels, times = levels_of(s), np.asarray(s["times"])
    fn = partial(_ito_path, f=f, levels=levels, times=times, horizon=s["horizon"],
                 y=s["start"], table=default_table())
    x = run_paths(fn, s["paths"], s["seed"], s["workers"])
    nt, rows = times.size, []
    for i, k in enumerate(levels):
        base = i * (3 * nt + 1)
        for j, t in enumerate(times):
            for q, name in enumerate(("martingale_mean", "martingale_second_moment", "drift_mean")):
                est = Estimate.from_samples(x[:, base + q * nt + j])
                rows.append(_est_row((name, k, t, "one"), est))
        res = float(np.max(x[:, base + 3 * nt]))
        rows.append(("identity_residual_max", k, s["horizon"], "one", res, 0.0, x.shape[0]))
    w.csv("ito_decompose.csv", ("quantity", "k", "t", "g", "estimate", "stderr", "n_paths"), rows)


def exp_energy_scan(s, w: Writer):
    from .functionals import from_name
    from .projection_calculus import energy

    f = from_name(s["functional"], s["horizon"])
    rep = energy(f, levels_of(s), s["paths"], s["seed"], s["horizon"], s["start"], s["workers"],
                 grid_dt=_fbm_dt(s))
    rows = []
    for k, c, r in rep.rows():
        rows.append(_est_row(("e2_conditional", k, rep.horizon, "one"), c))
        rows.append(_est_row(("e2_raw", k, rep.horizon, "one"), r))
    w.csv("energy_scan.csv", ("quantity", "k", "t", "g", "estimate", "stderr", "n_paths"), rows)


def exp_covariation(s, w: Writer):
    from .functionals import from_name
    from .projection_calculus import TEST_FUNCTIONALS, delta_covariation_probe

    fx = from_name(s["functional"], s["horizon"])
    fy = from_name(s["functional-y"] or s["functional"], s["horizon"])
    rows = delta_covariation_probe(fx, fy, s["times"], TEST_FUNCTIONALS, levels_of(s), s["paths"],
                                   s["seed"], s["horizon"], s["start"], s["workers"])
    w.csv("covariation.csv", ("k", "t", "g", "estimate", "stderr", "n_paths"),
          (_est_row((r.k, r.t, r.g), r.estimate) for r in rows))


def exp_clark_ocone(s, w: Writer):
    from .clark_ocone import mean_density_curve, representation_residual
    from .functionals import from_name

    f = from_name(s["functional"], s["horizon"])
    rows, dens = [], []
    times = [t for t in s["times"] if t < s["horizon"]]
    for k in levels_of(s):
        r = representation_residual(f, k, s["paths"], s["seed"], s["horizon"], s["start"],
                                    s["grid-dt"], workers=s["workers"])
        rows.append((k, r.ratio.mean, r.ratio.stderr, r.residual_mean.mean, r.residual_mean.stderr,
                     r.var_f, r.ratio.n))
        d = mean_density_curve(f, k, times, s["paths"], s["seed"], s["horizon"], s["start"],
                               workers=s["workers"])
        dens += [(k, t, m, e, d.n_paths) for t, m, e in zip(d.times, d.mean, d.stderr)]
    w.csv("clark_ocone_residual.csv",
          ("k", "variance_ratio", "stderr", "residual_mean", "residual_stderr", "var_F", "n_paths"), rows)
    w.csv("clark_ocone_density.csv", ("k", "t", "mean", "stderr", "n_paths"), dens)


def exp_local_time(s, w: Writer):
    from .functionals import ClippedIdentity, ClippedPrimitive, _square, _twice
    from .local_time import covariation_identity_check, energy_identity_check, local_time_curve, tanaka_check

    levels = levels_of(s)
    k = max(levels)
    t, m, y = s["horizon"], s["band"], s["start"]
    xs = np.linspace(-2.0, 2.0, 81)
    mean, se = local_time_curve(k, xs, s["paths"], s["seed"], t, m, y, s["workers"])
    w.csv("local_time_curve.csv", ("x", "L_hat_mean", "L_hat_se"), zip(xs, mean, se))
    rows = []
    for r in covariation_identity_check(_square, _twice, levels, s["paths"], s["seed"], t, m, y,
                                        s["grid-dt"], s["workers"]):
        rows.append(("fak1_square", r.k, r.skeleton_side.mean, r.skeleton_side.stderr,
                     r.grid_oracle.mean, r.grid_oracle.stderr, r.skeleton_side.n))
    for r in energy_identity_check(ClippedPrimitive(0.5), ClippedIdentity(0.5), levels, s["paths"],
                                   s["seed"], t, m, y, s["grid-dt"], s["workers"]):
        rows.append(("fak2_clipped", r.k, r.skeleton_side.mean, r.skeleton_side.stderr,
                     r.grid_oracle.mean, r.grid_oracle.stderr, r.skeleton_side.n))
    w.csv("local_time_identities.csv",
          ("check", "k", "skeleton", "skeleton_stderr", "oracle", "oracle_stderr", "n_paths"), rows)
    rep = tanaka_check(k, s["paths"], s["seed"], t, m, s["grid-dt"], workers=s["workers"])
    w.csv("tanaka.csv", ("quantity", "k", "estimate", "stderr", "n_paths"),
          ((name, k, e.mean, e.stderr, e.n) for name, e in rep.rows()))


def exp_fbm(s, w: Writer):
    from .fbm_experiments import fbm_energy_scan
    from .functionals import from_name

    f = from_name(s["functional"])
    if f.kind != "fbm-state":
        raise UsageError("the fbm experiment needs an fbm functional such as fbm-sin(0.75)")
    hurst = s["hurst"] if s["hurst"] is not None else f.hurst
    scan = fbm_energy_scan(f.func, hurst, levels_of(s), s["paths"], s["seed"], s["horizon"],
                           _fbm_dt(s), s["workers"])
    rows = [(k, e.mean, e.stderr, g.mean, g.stderr, mm.mean, mm.stderr, m2.mean, m2.stderr, e.n)
            for k, e, g, mm, m2 in scan.rows()]
    w.csv("fbm.csv", ("k", "e2_raw", "e2_raw_stderr", "gap", "gap_stderr", "martingale_mean",
                      "martingale_mean_stderr", "martingale_second_moment",
                      "martingale_second_moment_stderr", "n_paths"), rows)


def exp_chain_rule(s, w: Writer):
    from .functionals import from_name
    from .projection_calculus import TEST_FUNCTIONALS, chain_rule_probe

    f = from_name(s["functional"])
    if f.kind != "state" or f.derivative is None:
        raise UsageError("chain-rule needs a state functional with a known derivative")
    times = [t for t in s["times"] if t <= s["horizon"]]
    rows = chain_rule_probe(f.func, f.derivative, levels_of(s), times, TEST_FUNCTIONALS, s["paths"],
                            s["seed"], s["horizon"], s["start"], s["grid-dt"], workers=s["workers"])
    w.csv("chain_rule.csv", ("k", "t", "g", "left", "left_stderr", "right", "right_stderr",
                             "difference", "difference_stderr", "n_paths"),
          ((r.k, r.t, r.g, r.left.mean, r.left.stderr, r.right.mean, r.right.stderr,
            r.difference.mean, r.difference.stderr, r.left.n) for r in rows))


RUNNERS = {
    "tau-moments": exp_tau_moments,
    "intensity-table": exp_intensity_table,
    "skeleton-sim": exp_skeleton_sim,
    "ito-decompose": exp_ito_decompose,
    "energy-scan": exp_energy_scan,
    "covariation": exp_covariation,
    "clark-ocone": exp_clark_ocone,
    "local-time": exp_local_time,
    "fbm": exp_fbm,
    "chain-rule": exp_chain_rule,
}


def _versions() -> dict:
    import numba
    import scipy

    return {"wiener_skeleton": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__, "numba": numba.__version__}


def _prepare_out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise PermissionError(f"output directory {out} is not writable")
    return out


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        settings = resolve_settings(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        out = _prepare_out_dir(settings["out-dir"])
    except OSError as exc:
        print(f"output error: {exc}", file=sys.stderr)
        return EXIT_OUTPUT
    writer = Writer(out)
    start = time.perf_counter()
    try:
        RUNNERS[args.experiment](settings, writer)
    except (UsageError, DomainError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"output error: {exc}", file=sys.stderr)
        return EXIT_OUTPUT
    manifest = {
        "experiment": args.experiment,
        "config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in settings.items()},
        "seed": settings["seed"],
        "versions": _versions(),
        "wall_time_seconds": time.perf_counter() - start,
        "outputs": writer.files,
    }
    try:
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        print(f"output error: {exc}", file=sys.stderr)
        return EXIT_OUTPUT
    print(f"{args.experiment}: wrote {', '.join(writer.files)} to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
