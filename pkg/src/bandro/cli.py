"""Command-line interface: ``bandro {gen-data,band,solve,experiment,oracle-check}``.

Every command takes ``--seed`` (overridden by ``BANDRO_SEED``) and ``--out``.
Exit status is 0 on success, 1 on usage errors and 2 on runtime failures.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys

import numpy as np

from .band_kde import build_kde_band, grid_curve
from .band_sr import build_sr_band, dump_band_curve, write_band_curve
from .core import (BandroError, Box, InfeasibleBandError, InvalidParameterError, Rng, SampleSet,
                   derive_stream, read_dataset, uniform_band, write_dataset)
from .dro import SgdConfig, dual_objective, min_dual_objective, sgd_solve
from .experiments import ExperimentConfig, run_experiment
from .oracle import discretize, inner_sup, inner_sup_lp, robust_value_oracle
from .problems import Newsvendor, Portfolio, true_density

log = logging.getLogger("bandro")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _seed(args) -> int:
    env = os.environ.get("BANDRO_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"BANDRO_SEED must be an integer, got {env!r}") from None
    return args.seed


def _kv(pairs) -> dict:
    out = {}
    for item in pairs or []:
        key, sep, val = item.partition("=")
        if not sep:
            raise UsageError(f"expected key=value, got {item!r}")
        try:
            out[key] = float(val)
        except ValueError:
            out[key] = val
    return out


# ---------------------------------------------------------------------------
# shared builders
# ---------------------------------------------------------------------------

def _need(args, *names):
    missing = [n for n in names if getattr(args, n) is None]
    if missing:
        flags = ", ".join("--" + n.replace("_", "-") for n in missing)
        raise UsageError(f"--kind {args.kind} requires {flags}")


def _build_band(args, data: SampleSet, rng: Rng):
    if args.kind == "sr":
        _need(args, "a", "b", "mu", "U")
        return build_sr_band(data, args.a, args.b, args.mu, args.U, args.alpha, K=args.K,
                             S=args.mc_samples, rng=derive_stream(rng, "band"), c=args.c)
    if args.kind == "kde":
        _need(args, "h")
        box = None
        if args.a is not None and args.b is not None:
            box = Box(np.full(data.m, args.a), np.full(data.m, args.b))
        return build_kde_band(data, args.kernel, args.h, args.delta, box)
    _need(args, "a", "b")
    box = Box([args.a], [args.b])
    return uniform_band(box, args.low, args.high)


def _add_band_flags(p):
    p.add_argument("--kind", choices=["sr", "kde", "uniform"], default="sr")
    p.add_argument("--a", type=float, help="lower end of the support")
    p.add_argument("--b", type=float, help="upper end of the support")
    p.add_argument("--mu", type=float, help="mode (sr)")
    p.add_argument("--U", type=float, help="density cap (sr)")
    p.add_argument("--alpha", type=float, default=0.2, help="significance level (sr)")
    p.add_argument("--K", type=int, help="group size (sr)")
    p.add_argument("--c", type=float, default=1.0, help="group size multiplier (sr)")
    p.add_argument("--mc-samples", type=int, default=100_000, help="coverage replicates (sr)")
    p.add_argument("--kernel", default="boxcar", help="kernel (kde)")
    p.add_argument("--h", type=float, help="bandwidth (kde)")
    p.add_argument("--delta", type=float, default=0.0, help="band half-width (kde)")
    p.add_argument("--low", type=float, help="lower density level (uniform)")
    p.add_argument("--high", type=float, help="upper density level (uniform)")


def _add_common(p, out_help):
    p.add_argument("--seed", type=int, default=0, help="master seed (BANDRO_SEED overrides)")
    p.add_argument("--out", required=True, help=out_help)


def _problem(args):
    if args.problem == "newsvendor":
        return Newsvendor(args.c_s, args.c_h, args.order_cap)
    return Portfolio(args.assets, args.eps, args.gamma)


def _add_problem_flags(p):
    p.add_argument("--problem", choices=["newsvendor", "portfolio"], default="newsvendor")
    p.add_argument("--c-s", type=float, default=19.0, help="shortage cost (newsvendor)")
    p.add_argument("--c-h", type=float, default=1.0, help="holding cost (newsvendor)")
    p.add_argument("--order-cap", type=float, default=250.0, help="max order (newsvendor)")
    p.add_argument("--assets", type=int, default=10, help="number of assets (portfolio)")
    p.add_argument("--eps", type=float, default=0.2, help="CVaR level (portfolio)")
    p.add_argument("--gamma", type=float, default=10.0, help="CVaR weight (portfolio)")


def _load(path) -> SampleSet:
    if path is None:
        raise UsageError("--data is required")
    return read_dataset(path)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    rng = derive_stream(Rng(_seed(args)), "gen-data")
    params = _kv(args.param)
    if args.family == "uniform":
        box = Box([params.get("a", 0.0)], [params.get("b", 1.0)])
        data = SampleSet(box.sample(rng, args.n), seed=rng.seed)
    else:
        data = true_density(args.family, **params).sample(rng, args.n)
    write_dataset(data, args.out)
    print(f"wrote {data.N} observations (m={data.m}) to {args.out}")
    return 0


def cmd_band(args) -> int:
    data = _load(args.data)
    band = _build_band(args, data, Rng(_seed(args)))
    if getattr(band, "feasible", True) is False:
        raise InfeasibleBandError("no unimodal density satisfies the band's mass constraints")
    if band.m == 1:
        lo, hi = band.box.lower[0], band.box.upper[0]
        rows = dump_band_curve(band, np.linspace(lo, hi, args.grid))
    else:
        rows = grid_curve(band, args.grid)
    gb = discretize(band, args.grid, check=False)
    lo_mass, hi_mass = gb.mass_range()
    feasible = lo_mass <= 1.0 <= hi_mass
    write_band_curve(rows, args.out)
    width = float(np.mean(rows[:, -1] - rows[:, -2]))
    print(f"rows={rows.shape[0]} mean_width={width:.6g} "
          f"mass_range=[{lo_mass:.6g}, {hi_mass:.6g}] feasible={feasible}")
    return 0


def cmd_solve(args) -> int:
    data = _load(args.data)
    rng = Rng(_seed(args))
    problem = _problem(args)
    band = _build_band(args, data, rng)
    cfg = SgdConfig(batch=args.batch, eta=args.eta, iters=args.iters, eta_lam=args.eta_lam,
                    sampler=args.sampler)
    sol = sgd_solve(problem, band, cfg, derive_stream(rng, "sgd"), data=data)
    out = {"x": [float(v) for v in sol.x], "lambda": float(sol.lam),
           "F_hat": float(sol.F_hat), "iters": int(sol.iters)}
    if args.oracle:
        oracle = robust_value_oracle(problem, band, sol.x, args.G)
        dual = dual_objective(sol.x, sol.lam, band, problem, quad_nodes=args.G)
        out.update(oracle_value=oracle, dual_value=dual,
                   gap=(dual - oracle) / max(abs(oracle), 1e-12))
    with open(args.out, "w") as fh:
        json.dump(out, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(json.dumps(out, sort_keys=True))
    return 0


def cmd_experiment(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    if args.desk:
        cfg = cfg.desk()
    overrides = {"seed": _seed(args)} if (args.seed_given or "BANDRO_SEED" in os.environ) \
        else {}
    if args.trials is not None:
        overrides["trials"] = args.trials
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)
    jobs = args.jobs if args.jobs is not None else (os.cpu_count() or 1)
    result = run_experiment(cfg, out_dir=args.out, jobs=jobs)
    for size, mean, p20, p80 in result.aggregates:
        print(f"N={size} mean={mean:.6g} p20={p20:.6g} p80={p80:.6g}")
    return 0


def cmd_oracle_check(args) -> int:
    data = _load(args.data)
    problem = _problem(args)
    band = _build_band(args, data, Rng(_seed(args)))
    x = np.asarray(args.x, dtype=float)
    gb = discretize(band, args.G)
    fvals = problem.evaluate(x, gb.centers)
    greedy = inner_sup(gb, fvals)[0]
    lp = inner_sup_lp(gb, fvals)[0]
    dual, lam = min_dual_objective(x, band, problem, quad_nodes=args.G)
    out = {"x": [float(v) for v in x], "greedy": greedy, "lp": lp, "dual_min": dual,
           "lambda_star": lam, "greedy_lp_diff": abs(greedy - lp),
           "duality_gap": abs(dual - greedy) / max(abs(greedy), 1e-12)}
    with open(args.out, "w") as fh:
        json.dump(out, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(json.dumps(out, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bandro", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="sample a case-study law to CSV")
    p.add_argument("--family", required=True,
                   choices=["truncated_normal", "scaled_beta", "truncated_exponential",
                            "factor_normal", "uniform"])
    p.add_argument("--n", type=int, required=True, help="number of observations")
    p.add_argument("--param", action="append", metavar="KEY=VALUE", help="law parameter")
    _add_common(p, "dataset CSV to write")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("band", help="build a band and dump its curve")
    p.add_argument("--data")
    _add_band_flags(p)
    p.add_argument("--grid", type=int, default=201, help="points (per axis) in the curve")
    _add_common(p, "band-curve CSV to write")
    p.set_defaults(func=cmd_band)

    p = sub.add_parser("solve", help="solve the robust problem by stochastic subgradients")
    p.add_argument("--data")
    _add_band_flags(p)
    _add_problem_flags(p)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--eta", type=float, default=0.1)
    p.add_argument("--eta-lam", type=float)
    p.add_argument("--iters", type=int, default=10_000)
    p.add_argument("--sampler", choices=["uniform", "mixture"], default="uniform")
    p.add_argument("--oracle", action="store_true", help="append the grid oracle value and gap")
    p.add_argument("--G", type=int, default=2000, help="oracle cells per axis")
    _add_common(p, "decision JSON to write")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("experiment", help="run a multi-trial out-of-sample experiment")
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.add_argument("--desk", action="store_true", help="20 trials and 20000 evaluation draws")
    p.add_argument("--trials", type=int, help="override the number of trials")
    p.add_argument("--jobs", type=int, help="worker processes (default: logical cores)")
    _add_common(p, "output directory")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("oracle-check", help="compare greedy, LP and dual values at a decision")
    p.add_argument("--data")
    _add_band_flags(p)
    _add_problem_flags(p)
    p.add_argument("--x", type=float, nargs="+", required=True, help="decision vector")
    p.add_argument("--G", type=int, default=2000, help="cells per axis")
    _add_common(p, "JSON report to write")
    p.set_defaults(func=cmd_oracle_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    args = parser.parse_args(argv)
    # the config seed stands unless one is given explicitly
    args.seed_given = any(a == "--seed" or a.startswith("--seed=") for a in argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, InvalidParameterError) as exc:
        parser.print_usage(sys.stderr)
        print(f"bandro: error: {exc}", file=sys.stderr)
        return 1
    except (BandroError, OSError, ValueError) as exc:
        print(f"bandro: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
