"""Command-line entry point.

Exit codes: 0 when every check passed, 1 when a budget flag was raised,
2 on errors.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import lattice
from ._workers import ENV_VAR
from .experiments import ConfigError, ExperimentConfig, emit_plot_data, fit_exponent, run_experiment
from .projections import exceptional_parameters
from .sets import (
    PointSet1D,
    Scale,
    covering_number,
    dumps_points,
    gen_ap_set,
    gen_cantor_set,
    gen_figure3_set,
    gen_random_ds_set,
    is_delta_separated,
    load_points,
    nonconcentration,
)
from .solymosi import sum_product_pipeline
from .tubes import gen_planted_fan

log = logging.getLogger("fanproj")


def _emit(text: str, out):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _floats(spec: str):
    return [float(x) for x in spec.split(",") if x.strip()]


def cmd_generate(args) -> int:
    scale = Scale(args.m)
    kind = args.kind
    if kind == "ap":
        X = gen_ap_set(scale, args.s)
    elif kind == "cantor":
        X = gen_cantor_set(scale, args.s)
    elif kind == "random":
        X = gen_random_ds_set(scale, args.s, args.seed)
    elif kind == "figure3":
        X = gen_figure3_set(scale)
    elif kind == "planted":
        X = gen_planted_fan(
            scale, math.ceil(scale.power(-0.5)), math.ceil(scale.power(-0.35)), seed=args.seed
        ).points
    else:
        n = args.n or (1 << args.m)
        ex = (lattice.gen_grid_example if kind == "grid" else lattice.gen_parallel_lines_example)(n, args.s)
        _emit(lattice.dumps_lattice(ex.P, ex.G), args.out)
        return 0
    _emit(dumps_points(X), args.out)
    return 0


def cmd_check(args) -> int:
    X = load_points(args.points)
    scale = X.scale
    rep = nonconcentration(X, scale, args.s)
    lines = [
        f"points {len(X.points)}",
        f"covering_number {covering_number(X)}",
        f"delta_separated {is_delta_separated(X)}",
        f"nonconcentration s={args.s} constant={rep.constant!r}",
    ]
    if rep.witness:
        lines.append(f"witness {rep.witness}")
    _emit("\n".join(lines) + "\n", args.out)
    if rep.constant > args.max_constant:
        log.warning("check: nonconcentration constant %.4g above %.4g", rep.constant, args.max_constant)
        return 1
    return 0


def _run_config(args, allowed) -> int:
    cfg = ExperimentConfig.load(args.config)
    if allowed and cfg.kind not in allowed:
        raise ConfigError("kind", f"{cfg.kind!r} cannot be run by this verb (expected {', '.join(allowed)})")
    res = run_experiment(cfg, args.out or cfg.out, workers=args.threads)
    for p in res.paths:
        log.info("wrote %s", p)
    return 1 if res.flags else 0


def cmd_sweep(args) -> int:
    if args.config:
        return _run_config(args, None)
    if not args.points:
        raise ConfigError("points", "a point file or --config is required")
    A = load_points(args.points)
    if not isinstance(A, PointSet1D):
        raise ConfigError("points", "sweep needs a subset of [0,1]")
    T = _floats(args.T) if args.T else None
    res = exceptional_parameters(A, A.scale, args.s, args.C_E, T=T, workers=args.threads)
    _emit(res.to_csv(), args.out)
    return 0


def cmd_pipeline(args) -> int:
    if args.config:
        return _run_config(args, ("pipeline",))
    scale = Scale(args.m)
    A = load_points(args.A) if args.A else gen_ap_set(scale, 0.5)
    if args.E == "sqrtdelta":
        E = [0.0, math.sqrt(scale.delta), 1.0]
    else:
        E = _floats(args.E)
    rep = sum_product_pipeline(A, E, A.scale, args.s, args.sigma, workers=args.threads)
    _emit(rep.to_json() + "\n", args.out)
    if not args.quiet:
        sys.stderr.write(rep.summary())
    return 1 if rep.flags else 0


def cmd_discrete(args) -> int:
    if args.config:
        return _run_config(args, ("discrete_st",))
    if args.points:
        P, G = lattice.loads_lattice(Path(args.points).read_text())
        if G is None:
            G = lattice.all_pairs(P.shape[0])
    else:
        gen = lattice.gen_grid_example if args.example == "grid" else lattice.gen_parallel_lines_example
        ex = gen(args.n, args.s)
        P, G = ex.P, ex.G
    res = lattice.rich_line_search(P, G, args.s)
    bad = lattice.bad_directions(P, args.s, args.C_bad)
    out = lattice.bad_directions_to_csv(bad)
    _emit(out, args.out)
    if args.trace:
        Path(args.trace).write_text(res.trace_text())
    if not args.quiet:
        sys.stderr.write(f"rich line {res.line} count={res.count} mode={res.mode}\n")
    for f in res.flags:
        log.warning("rich_line_search: %s", f)
    return 1 if res.flags else 0


def cmd_fit(args) -> int:
    rows = np.loadtxt(args.data, ndmin=2)
    if args.x == "m":
        series = [(2.0 ** -r[0], r[1]) for r in rows]
    else:
        series = [(r[0], r[1]) for r in rows]
    fit = fit_exponent(series)
    _emit(f"slope {fit.slope!r}\nintercept {fit.intercept!r}\nresidual_max {fit.residual_max!r}\n", args.out)
    return 0


def cmd_plot_data(args) -> int:
    paths = emit_plot_data(args.report, args.out or ".")
    for p in paths:
        log.info("wrote %s", p)
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config file (key = value lines)")
    common.add_argument("--out", help="output file or directory")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=None, help=f"worker threads (overrides {ENV_VAR})")
    common.add_argument("--quiet", action="store_true")

    p = argparse.ArgumentParser(prog="fanproj", description="Discretised projection and sum-product experiments.")
    sub = p.add_subparsers(dest="verb", required=True)

    g = sub.add_parser("generate", parents=[common], help="write a generated point set")
    g.add_argument("kind", choices=("ap", "cantor", "random", "figure3", "planted", "grid", "parallel"))
    g.add_argument("--m", type=int, default=10)
    g.add_argument("--s", type=float, default=0.5)
    g.add_argument("--n", type=int, default=None, help="lattice size for grid/parallel")
    g.set_defaults(func=cmd_generate)

    c = sub.add_parser("check", parents=[common], help="separation and non-concentration of a point file")
    c.add_argument("points")
    c.add_argument("--s", type=float, default=0.5)
    c.add_argument("--max-constant", type=float, default=4.0)
    c.set_defaults(func=cmd_check)

    s = sub.add_parser("sweep", parents=[common], help="exceptional parameters of A + tA, or a config run")
    s.add_argument("points", nargs="?")
    s.add_argument("--s", type=float, default=0.5)
    s.add_argument("--C-E", dest="C_E", type=float, default=4.0)
    s.add_argument("--T", help="comma-separated parameters (default: delta^s grid)")
    s.set_defaults(func=cmd_sweep)

    q = sub.add_parser("pipeline", parents=[common], help="run the sum-product pipeline")
    q.add_argument("--m", type=int, default=12)
    q.add_argument("--s", type=float, default=0.55)
    q.add_argument("--sigma", type=float, default=0.5)
    q.add_argument("--A", help="point file for A (default: AP set of exponent 1/2)")
    q.add_argument("--E", default="1", help="comma-separated parameters, or 'sqrtdelta'")
    q.set_defaults(func=cmd_pipeline)

    d = sub.add_parser("discrete", parents=[common], help="lattice bad directions and rich lines")
    d.add_argument("--points", help="lattice file ([points] and optional [pairs])")
    d.add_argument("--example", choices=("grid", "parallel"), default="parallel")
    d.add_argument("--n", type=int, default=1024)
    d.add_argument("--s", type=float, default=0.7)
    d.add_argument("--C-bad", dest="C_bad", type=float, default=2.0)
    d.add_argument("--trace", help="write the dyadic decision trace here")
    d.set_defaults(func=cmd_discrete)

    f = sub.add_parser("fit", parents=[common], help="fit a log-log slope to a two-column file")
    f.add_argument("data")
    f.add_argument("--x", choices=("m", "delta"), default="m", help="meaning of the first column")
    f.set_defaults(func=cmd_fit)

    pd = sub.add_parser("plot-data", parents=[common], help="two-column plot files from a report")
    pd.add_argument("report")
    pd.set_defaults(func=cmd_plot_data)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
