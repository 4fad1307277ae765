"""Command-line front end.

Subcommands: ``quantize``, ``simulate``, ``bounds``, ``bennett``, ``presets``.
Exit codes: 0 success, 2 usage, 3 convergence failure, 4 infeasible constraint.
"""

import argparse
import csv
import datetime as _dt
import json
import logging
import os
import sys
import time
import warnings
from importlib import resources

from quantctl import __version__
from quantctl import config as cfgmod
from quantctl._backend import BACKEND
from quantctl.control import prop4_bounds, prop4_fixed_points
from quantctl.density import DEFAULT_POINTS, DEFAULT_TAIL, from_spec
from quantctl.errors import (
    ConvergenceWarning,
    DegenerateCodebookError,
    EmptyCellError,
    InfeasibleConstraintError,
    InvalidParameterError,
)
from quantctl.mrsq import generalized_lloyd_max
from quantctl.quantizer import lloyd_max
from quantctl.silent import min_cell_prob_quantizer
from quantctl.sim import bennett_distortion, enumerate_greedy, run_lqr_exact, run_monte_carlo

EXIT_OK, EXIT_USAGE, EXIT_CONVERGENCE, EXIT_INFEASIBLE = 0, 2, 3, 4

log = logging.getLogger("quantctl")


class UsageError(Exception):
    pass


def _fmt(x):
    return repr(float(x))


def _int_list(text):
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _float_list(text):
    try:
        return [float(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _print_rows(header, rows, out):
    out.write("\t".join(header) + "\n")
    for row in rows:
        out.write("\t".join(x if isinstance(x, str) else _fmt(x) for x in row) + "\n")


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([x if isinstance(x, (str, int)) else _fmt(x) for x in row])
    return path


# ---------------------------------------------------------------------------
# quantize


def cmd_quantize(args, out=sys.stdout):
    d = from_spec(args.pdf, points=args.points, tail_mass=args.tail_mass)
    if args.mrsq is not None:
        rates = args.mrsq
        if args.rate is not None and sum(rates) != args.rate:
            raise UsageError(f"--mrsq rates sum to {sum(rates)}, but --rate is {args.rate}")
        weights = args.weights if args.weights is not None else [1.0] * len(rates)
        if len(weights) != len(rates):
            raise UsageError("--weights needs one entry per --mrsq stage")
        res = generalized_lloyd_max(d, rates, weights, args.tol, args.max_iter)
        mq = res.quantizer
        _print_rows(["stage", "rate", "cells", "distortion"],
                    [(str(t), str(r), str(2 ** sum(rates[:t])), D)
                     for t, (r, D) in enumerate(zip(rates, res.stage_distortions), 1)], out)
        out.write(f"weighted_distortion\t{_fmt(res.distortion)}\n")
        out.write("finest_levels\t" + ",".join(_fmt(x) for x in mq.finest_levels) + "\n")
        for t in range(1, mq.stages + 1):
            out.write(f"points_{t}\t" + ",".join(_fmt(x) for x in mq.stage_points[t - 1]) + "\n")
        return EXIT_OK if res.converged else EXIT_CONVERGENCE
    if args.rate is None:
        raise UsageError("--rate is required unless --mrsq is given")
    if args.delta is not None:
        if args.rate != 1:
            raise UsageError("--delta designs a three-cell quantizer and needs --rate 1")
        sq = min_cell_prob_quantizer(d, args.delta, args.tol, args.max_iter)
        q, D, converged = sq.q, sq.distortion, True
        silent = sq.silent_index
    else:
        res = lloyd_max(d, args.rate, args.tol, args.max_iter)
        q, D, converged = res.quantizer, res.distortion, res.converged
        silent = None
    mass = q.cell_masses(d)
    rows = []
    for l in range(q.cells):
        lo, hi = q.cell(l)
        rows.append((str(l), lo, hi, q.points[l], mass[l]) + (("silent" if l == silent else "sent",) if silent is not None else ()))
    header = ["cell", "p_lo", "p_hi", "c", "probability"] + (["symbol"] if silent is not None else [])
    _print_rows(header, rows, out)
    out.write(f"distortion\t{_fmt(D)}\n")
    return EXIT_OK if converged else EXIT_CONVERGENCE


# ---------------------------------------------------------------------------
# simulate


def _cost_rows(report):
    return [(t, J, se, lb, ub, ca) for t, J, se, lb, ub, ca in report.rows()]


COST_HEADER = ["t", "J_t", "stderr", "LB_t", "UB_t", "cum_avg"]


def _summary(label, report):
    out = {
        "label": label,
        "steady_state": report.steady_state,
        "steady_stderr": report.steady_stderr,
        "average_rate": report.average_rate,
        "priors": int(sum(report.nodes)),
    }
    if report.silence is not None:
        out["silence_frequency"] = float(report.silence.mean())
    return out


def simulate(cfg, outdir, progress=None):
    """Run a validated config and write its CSV files; returns ``(paths, summaries)``."""
    os.makedirs(outdir, exist_ok=True)
    paths, summaries = [], []
    kind = cfg["kind"]
    if kind == "bennett":
        rows = []
        for pdf in cfg["densities"]:
            d = from_spec(pdf, points=DEFAULT_POINTS, tail_mass=DEFAULT_TAIL)
            for R in cfg["bennett_rates"]:
                # Lloyd-Max slows down as the rate grows; report rather than fail
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", ConvergenceWarning)
                    res = lloyd_max(d, R, max_iter=cfg["max_iter"])
                B = bennett_distortion(d, R)
                rows.append((pdf, R, res.distortion, B, res.distortion / B, int(res.converged)))
        paths.append(_write_csv(os.path.join(outdir, "bennett.csv"),
                                ["density", "R", "lloyd_max", "bennett", "ratio", "converged"], rows))
        return paths, summaries
    spec = cfgmod.build_spec(cfg)
    if kind == "lqr_exact":
        rep = run_lqr_exact(spec)
        rows = [(t, g, o) for t, g, o in zip(range(1, spec.horizon + 1), rep.greedy_cumulative, rep.optimal_cumulative)]
        paths.append(_write_csv(os.path.join(outdir, "table1.csv"), ["t", "greedy", "optimal"], rows))
        gap = (rep.greedy_cumulative[-1] - rep.optimal_cumulative[-1]) / rep.optimal_cumulative[-1]
        summaries.append({"label": "lqr_exact", "greedy_total": float(rep.greedy_cumulative[-1]),
                          "optimal_total": float(rep.optimal_cumulative[-1]), "relative_gap": float(gap)})
        return paths, summaries
    exps = cfgmod.experiments(cfg, spec)
    single = len(exps) == 1
    for label, exp in exps:
        if progress:
            progress(f"running {label} ({exp.trials} trials)")
        rep = run_monte_carlo(exp)
        name = "costs.csv" if single else f"costs_{label}.csv"
        paths.append(_write_csv(os.path.join(outdir, name), COST_HEADER, _cost_rows(rep)))
        summaries.append(_summary(label, rep))
    if cfg.get("subcells", 0) > 0:
        rows = [(r.t, r.history, r.probability, r.lo, r.hi, r.xhat, r.mse) for r in enumerate_greedy(spec, cfg["subcells"])]
        paths.append(_write_csv(os.path.join(outdir, "subcells.csv"),
                                ["t", "history", "probability", "lo", "hi", "xhat", "mse"], rows))
    return paths, summaries


def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def cmd_simulate(args, out=sys.stdout):
    if args.preset:
        if args.config:
            raise UsageError("give either a config file or --preset, not both")
        with resources.as_file(cfgmod.preset_path(args.preset)) as p:
            cfg = cfgmod.load(p)
        source = f"preset:{args.preset}"
    elif args.config:
        cfg = cfgmod.load(args.config)
        source = os.path.abspath(args.config)
    else:
        raise UsageError("simulate needs a config file or --preset")
    if args.trials is not None:
        cfg["trials"] = args.trials
    if args.seed is not None:
        cfg["seed"] = args.seed
    cfgmod.validate(cfg)
    started = _now()
    t0 = time.perf_counter()
    paths, summaries = simulate(cfg, args.out, progress=lambda m: print(m, file=sys.stderr) if args.verbose else None)
    manifest = {
        "config": cfg,
        "source": source,
        "version": __version__,
        "backend": BACKEND,
        "seed": cfg.get("seed"),
        "started": started,
        "finished": _now(),
        "elapsed_seconds": round(time.perf_counter() - t0, 3),
        "summaries": summaries,
        "outputs": [os.path.basename(p) for p in paths],
    }
    mpath = os.path.join(args.out, "manifest.json")
    with open(mpath, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for p in paths + [mpath]:
        out.write(p + "\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# bounds / bennett / presets


def cmd_bounds(args, out=sys.stdout):
    lb, ub = prop4_bounds(args.a, args.rate, args.sigma2, args.horizon)
    _print_rows(["t", "LB", "UB"], [(str(t), l, u) for t, (l, u) in enumerate(zip(lb, ub), 1)], out)
    flb, fub = prop4_fixed_points(args.a, args.rate, args.sigma2)
    out.write(f"inf\t{_fmt(flb)}\t{_fmt(fub)}\n")
    return EXIT_OK


def cmd_bennett(args, out=sys.stdout):
    d = from_spec(args.pdf, points=args.points, tail_mass=args.tail_mass)
    rows = []
    for R in args.rate:
        B = bennett_distortion(d, R)
        if args.compare:
            if R != int(R) or R < 0:
                raise UsageError("--compare needs integer rates")
            D = lloyd_max(d, int(R), args.tol, args.max_iter).distortion
            rows.append((_fmt(R), B, D, D / B))
        else:
            rows.append((_fmt(R), B))
    _print_rows(["R", "bennett"] + (["lloyd_max", "ratio"] if args.compare else []), rows, out)
    return EXIT_OK


def cmd_presets(args, out=sys.stdout):
    if args.name is None:
        for name in cfgmod.PRESETS:
            out.write(name + "\n")
        return EXIT_OK
    out.write(cfgmod.preset_path(args.name).read_text())
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="quantctl", description="Quantized feedback control experiments.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def numerics(sp):
        sp.add_argument("--points", type=int, default=DEFAULT_POINTS, help="grid cells for the density")
        sp.add_argument("--tail-mass", type=float, default=DEFAULT_TAIL, help="two-sided mass cut from the tails")
        sp.add_argument("--tol", type=float, default=1e-12)
        sp.add_argument("--max-iter", type=int, default=10_000)

    q = sub.add_parser("quantize", help="design a quantizer for a density")
    q.add_argument("pdf", help="family:params, e.g. gaussian:0,1 (mean, variance)")
    q.add_argument("--rate", type=int)
    q.add_argument("--delta", type=float, help="minimum probability of the silent cell (three cells)")
    q.add_argument("--mrsq", type=_int_list, help="per-stage rates of a multi-resolution quantizer")
    q.add_argument("--weights", type=_float_list, help="per-stage distortion weights")
    numerics(q)
    q.set_defaults(func=cmd_quantize)

    s = sub.add_parser("simulate", help="run an experiment config")
    s.add_argument("config", nargs="?", help="JSON config file (see docs/config.md)")
    s.add_argument("--preset", choices=cfgmod.PRESETS)
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--trials", type=int)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_simulate)

    b = sub.add_parser("bounds", help="lower/upper cost bound sequences")
    b.add_argument("--a", type=float, required=True)
    b.add_argument("--rate", type=float, required=True)
    b.add_argument("--sigma2", type=float, default=1.0)
    b.add_argument("--horizon", type=int, default=30)
    b.set_defaults(func=cmd_bounds)

    n = sub.add_parser("bennett", help="high-rate distortion estimate")
    n.add_argument("pdf")
    n.add_argument("--rate", type=_float_list, required=True, help="one or more rates, comma-separated")
    n.add_argument("--compare", action="store_true", help="also run Lloyd-Max at each rate")
    numerics(n)
    n.set_defaults(func=cmd_bennett)

    r = sub.add_parser("presets", help="list presets or print one")
    r.add_argument("name", nargs="?", choices=cfgmod.PRESETS)
    r.set_defaults(func=cmd_presets)
    return p


def main(argv=None, out=None):
    out = sys.stdout if out is None else out
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", ConvergenceWarning)
            return args.func(args, out)
    except cfgmod.ConfigError as exc:
        print(f"quantctl: config error at {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (UsageError, InvalidParameterError, FileNotFoundError) as exc:
        print(f"quantctl: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InfeasibleConstraintError as exc:
        print(f"quantctl: infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ConvergenceWarning, EmptyCellError, DegenerateCodebookError) as exc:
        print(f"quantctl: design did not converge: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE


if __name__ == "__main__":
    sys.exit(main())
