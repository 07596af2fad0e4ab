"""Command-line interface.

Exit codes: 0 success, 1 a check failed, 2 configuration or usage error.
Resolved parameters go to stderr before any work starts, so stdout carries
only data.
"""
from __future__ import annotations

import json
import logging
import math
import sys

import click
import numpy as np

from . import diffusion as D
from . import engine as E
from . import estimators as S
from . import oracle as O
from .experiments import ConfigError, load_config, run_experiment
from .io import FORMATS, write_table
from .model import make_regime, renewal_state

EXIT_CHECK = 1
EXIT_CONFIG = 2


def _fail(msg: str, code: int = EXIT_CONFIG):
    click.echo(f"error: {msg}", err=True)
    sys.exit(code)


def _announce(command: str, params: dict):
    click.echo(f"# {command} " + json.dumps(params, sort_keys=True, default=str), err=True)


def _regime(n, beta, eps):
    try:
        return make_regime(n, beta, eps)
    except ValueError as exc:
        _fail(str(exc))


common_out = [
    click.option("--out", default="-", show_default=True, help="Output path, '-' for stdout."),
    click.option("--format", "fmt", type=click.Choice(FORMATS), default="csv", show_default=True),
    click.option("--seed", type=int, default=0, show_default=True),
]
regime_opts = [
    click.option("--n", type=int, required=True, help="Number of servers N."),
    click.option("--beta", type=float, default=1.0, show_default=True),
    click.option("--eps", type=float, default=0.25, show_default=True),
]


def _apply(opts):
    def deco(f):
        for o in reversed(opts):
            f = o(f)
        return f
    return deco


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose):
    """JSQ many-server simulation lab."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


@main.command()
@_apply(regime_opts + common_out)
@click.option("--b-const", type=float, default=1.0, show_default=True,
              help="Start from the renewal state with this B.")
@click.option("--horizon", type=float, default=10.0, show_default=True, help="Diffusion-time horizon.")
@click.option("--warmup", type=float, default=0.0, show_default=True)
@click.option("--reps", type=int, default=1, show_default=True, help="Replications with seeds seed..seed+reps-1.")
@click.option("--points", type=int, default=1000, show_default=True, help="Grid points per path.")
def simulate(n, beta, eps, out, fmt, seed, b_const, horizon, warmup, reps, points):
    """JSQ sample path on a diffusion-time grid."""
    reg = _regime(n, beta, eps)
    b = E.feasible_b(reg, b_const)
    params = reg.as_dict() | {"b_const": b, "horizon": horizon, "warmup": warmup, "seed": seed,
                              "reps": reps, "points": points}
    _announce("simulate", params)
    if horizon <= 0 or points < 1 or reps < 1:
        _fail("horizon, points and reps must be positive")
    rows = []
    for r in range(reps):
        traj = E.run_jsq(reg, renewal_state(reg, b), horizon, seed=seed + r, warmup_diff=warmup,
                         grid_step_diff=(horizon + warmup) / points)
        g = traj.grid
        for k in range(len(g["t_diff"])):
            rows.append({"n": n, "beta": beta, "eps": eps, "seed": seed + r,
                         "t_diff": float(g["t_diff"][k]), "idle": int(g["idle"][k]),
                         "q2": int(g["q2"][k]), "qbar3": int(g["qbar3"][k]), "s": int(g["s"][k]),
                         "x": float(g["x"][k])})
    write_table(out, rows, params | {"command": "simulate"}, fmt)


@main.command()
@_apply(regime_opts + common_out)
@click.option("--b-const", type=float, default=1.0, show_default=True)
@click.option("--cycles", type=int, default=100, show_default=True)
def renewal(n, beta, eps, out, fmt, seed, b_const, cycles):
    """Per-cycle records of independent renewal cycles."""
    reg = _regime(n, beta, eps)
    b = E.feasible_b(reg, b_const)
    params = reg.as_dict() | {"b_const": b, "cycles": cycles, "seed": seed}
    _announce("renewal", params)
    if cycles < 1:
        _fail("cycles must be positive")
    try:
        batch = E.run_renewal_cycles(reg, b, cycles, seed=seed)
    except ValueError as exc:
        _fail(str(exc))
    ts = reg.time_scale
    rows = []
    for i, c in enumerate(batch):
        rows.append({"n": n, "beta": beta, "eps": eps, "seed": seed, "b_const": b, "cycle": i,
                     "theta_diff": c.theta / ts, "sigma1_diff": c.sigma1 / ts,
                     "sigma2_diff": c.sigma2 / ts, "k_bar": c.k_bar, "events": c.n_events,
                     "int_x": c.integrals["x"], "int_idle_scaled": c.integrals["i_scaled"],
                     "int_qbar3_positive": c.integrals["qbar3_positive"],
                     "sup_qbar3": c.sup_records["qbar3"]})
    write_table(out, rows, params | {"command": "renewal"}, fmt)


@main.command()
@click.option("--beta", type=float, default=1.0, show_default=True)
@click.option("--step", type=float, default=1e-3, show_default=True)
@click.option("--steps", type=int, default=1000, show_default=True)
@click.option("--x0", type=float, default=None, help="Initial value (default 2/beta).")
@click.option("--stride", type=int, default=1, show_default=True)
@_apply(common_out)
def sde(beta, step, steps, x0, stride, out, fmt, seed):
    """Drift-implicit path of the limit diffusion."""
    x0 = 2.0 / beta if x0 is None and beta > 0 else x0
    params = {"beta": beta, "step": step, "steps": steps, "x0": x0, "stride": stride, "seed": seed}
    _announce("sde", params)
    try:
        if not beta > 0:
            raise ValueError("beta must be positive")
        path = D.simulate_sde(D.SdeConfig(beta, step, x0, steps, seed, stride))
    except ValueError as exc:
        _fail(str(exc))
    rows = [{"beta": beta, "seed": seed, "t": float(t), "x": float(v)}
            for t, v in zip(path.times, path.values)]
    write_table(out, rows, params | {"command": "sde"}, fmt)


@main.command()
@click.option("--n", type=int, required=True)
@click.option("--lambda", "lam", type=float, required=True, help="Total arrival rate.")
@click.option("--k-max", type=int, default=None)
@click.option("--jsq", is_flag=True, help="Exact JSQ marginals (n <= 3) instead of M/M/N.")
@click.option("--cap", type=int, default=100, show_default=True)
@click.option("--out", default="-", show_default=True)
@click.option("--format", "fmt", type=click.Choice(FORMATS), default="csv", show_default=True)
def oracle(n, lam, k_max, jsq, cap, out, fmt):
    """Exact stationary tables."""
    params = {"n": n, "lambda": lam, "k_max": k_max, "jsq": jsq, "cap": cap}
    _announce("oracle", params)
    try:
        if jsq:
            sol = O.jsq_exact_small(n, lam, cap)
            rows = []
            for name in ("s", "idle", "q2"):
                for k, p in enumerate(sol.marginal(name)):
                    rows.append({"n": n, "lambda": lam, "variable": name, "k": k, "prob": float(p),
                                 "method": "exact"})
        else:
            pi = O.mmn_stationary(n, lam, k_max)
            rows = [{"n": n, "lambda": lam, "variable": "s", "k": k, "prob": float(p),
                     "method": "exact"} for k, p in enumerate(pi)]
    except ValueError as exc:
        _fail(str(exc))
    write_table(out, rows, params | {"command": "oracle"}, fmt)


@main.command("compare-mmn")
@_apply(regime_opts + common_out)
@click.option("--b-const", type=float, default=1.0, show_default=True)
@click.option("--cycles", type=int, default=200, show_default=True)
def compare_mmn(n, beta, eps, out, fmt, seed, b_const, cycles):
    """Scaled centered stationary mean of JSQ against the exact M/M/N value."""
    reg = _regime(n, beta, eps)
    b = E.feasible_b(reg, b_const)
    params = reg.as_dict() | {"b_const": b, "cycles": cycles, "seed": seed}
    _announce("compare-mmn", params)
    if cycles < 2:
        _fail("need at least two cycles")
    batch = E.run_renewal_cycles(reg, b, cycles, seed=seed)
    jsq = S.regenerative_ratio(batch, "x")
    mmn = O.mmn_scaled_centered_mean(reg)
    base = {"n": n, "beta": beta, "eps": eps, "seed": seed}
    rows = [
        base | {"functional": "jsq_mean_x", "value": jsq.value, "std_err": jsq.std_err,
                "n_units": jsq.n_units, "method": jsq.method},
        base | {"functional": "mmn_mean_x", "value": mmn, "std_err": 0.0, "n_units": 0,
                "method": "exact"},
        base | {"functional": "ratio", "value": jsq.value / mmn, "std_err": jsq.std_err / mmn,
                "n_units": jsq.n_units, "method": jsq.method},
    ]
    write_table(out, rows, params | {"command": "compare-mmn"}, fmt)


@main.command()
@click.argument("config")
@click.option("--out", default=None, help="Override the output path of the config.")
@click.option("--format", "fmt", type=click.Choice(FORMATS), default=None)
@click.option("--workers", type=int, default=None)
def experiment(config, out, fmt, workers):
    """Run a YAML experiment configuration."""
    try:
        cfg = load_config(config)
        if out is not None:
            cfg.out = out
        if fmt is not None:
            cfg.format = fmt
        if workers is not None:
            cfg.workers = workers
        cfg.points()
    except ConfigError as exc:
        _fail(str(exc))
    if cfg.out is None:
        cfg.out = "-"
    _announce("experiment", cfg.as_dict())
    result = run_experiment(cfg)
    for c in result.checks:
        click.echo(f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.detail}", err=True)
    for e in result.errors:
        click.echo(f"ERROR {e}", err=True)
    if not result.ok:
        sys.exit(EXIT_CHECK)


if __name__ == "__main__":  # pragma: no cover
    main()
