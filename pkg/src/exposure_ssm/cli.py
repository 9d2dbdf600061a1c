"""Command-line entry point: ``exposure-ssm {simulate,fit,assess,summary}``.

Exit codes: 0 success, 2 validation error, 3 numerical failure.  Errors are
reported as one JSON object on stderr.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import io
from .assessment import assess, summarize
from .statespace import NumericalError
from .stochastics import make_rng

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3


def _key_values(items, flag) -> dict:
    out = {}
    for item in items or []:
        key, sep, val = item.partition("=")
        if not sep:
            raise io.ConfigError(flag, f"expected NAME=VALUE, got {item!r}")
        try:
            out[key] = float(val)
        except ValueError as exc:
            raise io.ConfigError(flag, f"{key} is not a number: {val!r}") from exc
    return out


def _bounds(items) -> dict:
    out = {}
    for item in items or []:
        key, sep, val = item.partition("=")
        lo, sep2, hi = val.partition(",")
        if not (sep and sep2):
            raise io.ConfigError("bounds", f"expected NAME=LOW,HIGH, got {item!r}")
        try:
            out[key] = [float(lo), float(hi)]
        except ValueError as exc:
            raise io.ConfigError(f"bounds.{key}", f"not numeric: {val!r}") from exc
    return out


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--out", help=f"output directory (default ${io.OUTPUT_ENV} or the current directory)")
    p.add_argument("--format", choices=("json", "csv"), default=None, help="report format")
    p.add_argument("--seed", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="exposure-ssm", description="Bayesian state-space exposure models")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="simulate a measurement series with known truth")
    sim.add_argument("--model", required=True, choices=("one-zone", "two-zone", "eddy"))
    sim.add_argument("--param", action="append", metavar="NAME=VALUE", help="override a physical parameter")
    sim.add_argument("--noise", action="append", metavar="NAME=VALUE", help="override a noise setting")
    sim.add_argument("--noise-scale", choices=("natural", "log"), default="natural")
    sim.add_argument("--n", type=int, default=100, help="number of timepoints")
    sim.add_argument("--name", default=None, help="output file name (default sim-<model>.csv)")
    _add_common(sim)

    fit = sub.add_parser("fit", help="fit a model and write samples, report, plot data and manifest")
    fit.add_argument("--config", help="JSON run configuration; command-line flags override it")
    fit.add_argument("--model", choices=("one-zone", "two-zone", "eddy", "random-walk"))
    fit.add_argument("--ssm", choices=("gaussian", "nongaussian", "bnlr"))
    fit.add_argument("--family", choices=("lognormal", "gamma"))
    fit.add_argument("--spatial", choices=("exponential", "unstructured", "none"))
    fit.add_argument("--provenance", choices=("simulation", "chamber"))
    fit.add_argument("--bounds", action="append", metavar="NAME=LOW,HIGH")
    fit.add_argument("--delta-t", type=float)
    fit.add_argument("--data")
    fit.add_argument("--iters", type=int)
    fit.add_argument("--burnin", type=int)
    fit.add_argument("--thin", type=int)
    fit.add_argument("--chains", type=int)
    fit.add_argument("--threads", type=int)
    _add_common(fit)

    ass = sub.add_parser("assess", help="score a saved fit against data")
    ass.add_argument("--fit", required=True, help="posterior-sample CSV written by fit")
    ass.add_argument("--data", required=True)
    ass.add_argument("--truth", help="CSV with truth columns (default: truth in --data, else the data)")
    ass.add_argument("--true", action="append", metavar="NAME=VALUE", help="true parameter value for coverage")
    _add_common(ass)

    summ = sub.add_parser("summary", help="medians, 95%% intervals, acceptance and ESS of a saved fit")
    summ.add_argument("--fit", required=True)
    summ.add_argument("--true", action="append", metavar="NAME=VALUE")
    _add_common(summ)
    return parser


def _emit(report, args, default_name):
    fmt = args.format or "json"
    if args.out or io.OUTPUT_ENV in os.environ:
        out = io.output_dir(args.out)
        out.mkdir(parents=True, exist_ok=True)
        path = out / f"{default_name}.{fmt}"
        io.write_report(report, path, fmt)
        print(path)
    else:
        sys.stdout.write(io.report_json(report) if fmt == "json" else io.report_csv(report))


def cmd_simulate(args) -> int:
    if args.n < 2:
        raise io.ConfigError("n", "need at least two timepoints")
    noise = _key_values(args.noise, "noise")
    noise["scale"] = args.noise_scale
    grid = np.arange(1.0, args.n + 1.0) if args.model == "eddy" else np.arange(0.0, float(args.n))
    seed = 0 if args.seed is None else args.seed
    series = io.simulate_dataset(args.model, _key_values(args.param, "param"), noise, grid, make_rng(seed))
    out = io.output_dir(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / (args.name or f"sim-{args.model}.csv")
    io.write_series(series, path)
    print(path)
    return EXIT_OK


def _config_from_args(args) -> io.RunConfig:
    base = {}
    if args.config:
        try:
            base = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise io.ConfigError("config", f"invalid JSON: {exc}") from exc
        if not isinstance(base, dict):
            raise io.ConfigError("config", "must be a JSON object")
    overrides = {
        "model": args.model,
        "ssm": args.ssm,
        "family": args.family,
        "spatial": args.spatial,
        "provenance": args.provenance,
        "delta_t": args.delta_t,
        "data": args.data,
        "iters": args.iters,
        "burnin": args.burnin,
        "thin": args.thin,
        "chains": args.chains,
        "threads": args.threads,
        "seed": args.seed,
        "out": args.out,
        "format": args.format,
    }
    base.update({k: v for k, v in overrides.items() if v is not None})
    if args.bounds:
        base["bounds"] = {**base.get("bounds", {}), **_bounds(args.bounds)}
    cfg = io.RunConfig.from_dict(base)
    if cfg.data is None:
        raise io.ConfigError("data", "an input CSV is required")
    if not Path(cfg.data).exists():
        raise io.ConfigError("data", f"no such file {cfg.data}")
    return cfg.validate()


def cmd_fit(args) -> int:
    cfg = _config_from_args(args)
    manifest = io.run(cfg)
    print(json.dumps(manifest["outputs"], sort_keys=True))
    return EXIT_OK


def _load_fit(path):
    if not Path(path).exists():
        raise io.ConfigError("fit", f"no such file {path}")
    return io.read_samples(path)


def cmd_assess(args) -> int:
    samples = _load_fit(args.fit)
    if not Path(args.data).exists():
        raise io.ConfigError("data", f"no such file {args.data}")
    data = io.read_series(args.data, samples.kind)
    truth = None
    if args.truth:
        t = io.read_series(args.truth, samples.kind)
        if t.truth is None:
            raise io.ConfigError("truth", f"{args.truth} has no truth columns")
        truth = t.truth
    seed = 0 if args.seed is None else args.seed
    report = assess(samples, data, truth=truth, true_values=_key_values(args.true, "true"), rng=make_rng(seed, 10_000))
    _emit(report, args, "assessment")
    return EXIT_OK


def cmd_summary(args) -> int:
    samples = _load_fit(args.fit)
    report = summarize(samples, _key_values(args.true, "true"))
    _emit(report, args, "summary")
    return EXIT_OK


_COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "assess": cmd_assess, "summary": cmd_summary}


def _fail(code, kind, exc, **extra) -> int:
    payload = {"error": kind, "message": str(exc), **extra}
    sys.stderr.write(json.dumps(io._json_safe(payload), sort_keys=True, default=str) + "\n")
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    try:
        return _COMMANDS[args.command](args)
    except io.ConfigError as exc:
        return _fail(EXIT_INVALID, "validation", exc, field=exc.field)
    except NumericalError as exc:
        return _fail(EXIT_NUMERICAL, "numerical", exc, diagnostics=exc.diagnostics)
    except (ValueError, TypeError, FileNotFoundError, KeyError) as exc:
        return _fail(EXIT_INVALID, "validation", exc)
    except (FloatingPointError, ArithmeticError, np.linalg.LinAlgError) as exc:
        return _fail(EXIT_NUMERICAL, "numerical", exc)


if __name__ == "__main__":
    sys.exit(main())
