"""Command-line entry point.

Every subcommand accepts ``--config FILE`` with ``key = value`` lines;
flags given on the command line override the file.

Exit codes: 0 success, 2 input error, 3 numerical failure (singular or
ill-conditioned Gram, zero standard error), 4 budget exceeded.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

import numpy as np

from . import __version__
from .dataio import fmt_float, read_config, read_dataset, write_dataset, write_nuisance, write_rows
from .dictionary import DictionarySpec
from .errors import (BudgetExceeded, DegenerateScale, IllConditionedError, InputError,
                     NotPositiveDefinite, UnsupportedOrder)
from .pipeline import SCHEMA_VERSION, RunConfig, dumps_report, run_falsify, write_report
from .simgen import TAU_B, TAU_P, DGPSpec, SeriesNuisance, SimulationDGP
from .study import REPLICATE_FIELDS, SUMMARY_FIELDS, StudyConfig, run_study, summarize

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3
EXIT_BUDGET = 4


@dataclasses.dataclass(frozen=True)
class SimulateConfig:
    setup: str = "I"
    n: int = 20_000
    n_train: int = 20_000
    d: int = 4
    seed: int = 0
    output: str | None = None


@dataclasses.dataclass(frozen=True)
class FitConfig:
    functional: str = "ncm"
    treatment_level: int = 1
    fit_family: str = "db6"
    fit_resolution: int = 2
    ridge: float = 0.0
    data: str | None = None
    output: str | None = None


def _tuple(value):
    if isinstance(value, str):
        return tuple(int(t) for t in value.replace(",", " ").split())
    return tuple(value)


def _coerce(cls, values: dict) -> dict:
    """Parse string values by the type of each field's default."""
    out = {}
    known = {f.name: f for f in dataclasses.fields(cls)}
    for key, raw in values.items():
        if key not in known:
            raise InputError(f"unknown option {key!r}")
        default = known[key].default
        try:
            if isinstance(raw, str) and isinstance(default, bool):
                out[key] = raw.lower() in ("1", "true", "yes", "on")
            elif isinstance(raw, str) and isinstance(default, tuple):
                out[key] = _tuple(raw)
            elif isinstance(raw, str) and isinstance(default, int):
                out[key] = int(raw)
            elif isinstance(raw, str) and isinstance(default, float):
                out[key] = float(raw)
            else:
                out[key] = raw
        except ValueError:
            raise InputError(f"{key}: cannot parse {raw!r}") from None
    return out


_RUN_ONLY = ("n_jobs", "output")


def _build(cls, args, exclude=()) -> object:
    values = read_config(args.config) if args.config else {}
    flags = {k: v for k, v in vars(args).items()
             if k not in ("command", "config", "func") and v is not None}
    values.update(flags)
    for key in exclude:
        values.pop(key, None)
    try:
        return cls(**_coerce(cls, values))
    except ValueError as exc:
        if isinstance(exc, InputError):
            raise
        raise InputError(str(exc)) from None


def _add_flags(parser, cls, skip=()):
    for f in dataclasses.fields(cls):
        if f.name in skip or f.name.startswith("_"):
            continue
        flag = "--" + f.name.replace("_", "-")
        parser.add_argument(flag, dest=f.name, default=None, metavar=f.name.upper(),
                            help=f"default: {f.default!r}")


def _ensure_dir(path):
    if not path:
        raise InputError("--output is required")
    os.makedirs(path, exist_ok=True)
    return path


def cmd_simulate(args) -> int:
    cfg = _build(SimulateConfig, args)
    if not cfg.output:
        raise InputError("--output is required")
    try:
        dgp = SimulationDGP(DGPSpec(cfg.setup, d=cfg.d, tau_b=_taus(cfg.d, "b"), tau_p=_taus(cfg.d, "p")))
    except ValueError as exc:
        raise InputError(str(exc)) from None
    if cfg.n < 1 or cfg.n_train < 0:
        raise InputError("n must be positive and n_train nonnegative")
    est_ss, train_ss = np.random.SeedSequence(cfg.seed).spawn(2)
    est = dgp.draw(cfg.n, np.random.default_rng(est_ss)).units
    train = dgp.draw(cfg.n_train, np.random.default_rng(train_ss)).units if cfg.n_train else None
    write_dataset(cfg.output, est, train)
    return EXIT_OK


def _taus(d, which):
    base = TAU_B if which == "b" else TAU_P
    if d == len(base):
        return base
    raise InputError(f"the simulation designs are defined for d={len(base)}")


def cmd_fit_nuisance(args) -> int:
    cfg = _build(FitConfig, args)
    if not cfg.data or not cfg.output:
        raise InputError("--data and --output are required")
    data = read_dataset(cfg.data)
    if data.train is None:
        raise InputError(f"{cfg.data}: no 'train' rows to fit on")
    fs = RunConfig(functional=cfg.functional, treatment_level=cfg.treatment_level).functional_spec
    try:
        spec = DictionarySpec(cfg.fit_family, cfg.fit_resolution, d=data.d, drop_redundant=True)
        model = SeriesNuisance(spec, fs, cfg.ridge).fit(data.train.x, data.train.y, data.train.a)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    write_nuisance(cfg.output, model.predict(data.est.x))
    return EXIT_OK


def cmd_falsify(args) -> int:
    cfg = _build(RunConfig, args)
    report = run_falsify(cfg)
    if cfg.output:
        out = _ensure_dir(cfg.output)
        write_report(report, os.path.join(out, "report.json"), os.path.join(out, "report.csv"))
    else:
        sys.stdout.write(dumps_report(report))
    return EXIT_OK


def cmd_reproduce_tables(args) -> int:
    values = read_config(args.config) if args.config else {}
    n_jobs = args.n_jobs if args.n_jobs is not None else values.get("n_jobs", 1)
    out = args.output if args.output is not None else values.get("output")
    cfg = _build(StudyConfig, args, exclude=_RUN_ONLY)
    try:
        n_jobs = int(n_jobs)
    except ValueError:
        raise InputError(f"n_jobs: cannot parse {n_jobs!r}") from None
    out = _ensure_dir(out)
    rows = run_study(cfg, n_jobs=n_jobs)
    summary = summarize(rows)
    write_rows(os.path.join(out, "replicates.csv"), REPLICATE_FIELDS, rows)
    write_rows(os.path.join(out, "summary.csv"), SUMMARY_FIELDS, summary)
    meta = {"schema_version": SCHEMA_VERSION, "version": __version__, "config": cfg.to_dict(),
            "summary": summary}
    with open(os.path.join(out, "summary.json"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_report(meta))
    for row in summary:
        print(" ".join(f"{k}={fmt_float(v) if isinstance(v, float) else v}" for k, v in row.items()))
    return EXIT_OK


def cmd_selftest(args) -> int:
    from .selftest import run_selftest
    return EXIT_OK if run_selftest(sys.stdout) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hoif", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="draw a dataset from a simulation design")
    _add_flags(p, SimulateConfig)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit-nuisance", help="fit the series nuisances on the training rows")
    _add_flags(p, FitConfig)
    p.set_defaults(func=cmd_fit_nuisance)

    p = sub.add_parser("falsify", help="run the falsification tests on one dataset")
    _add_flags(p, RunConfig)
    p.set_defaults(func=cmd_falsify)

    p = sub.add_parser("reproduce-tables", help="Monte Carlo study on a simulation design")
    _add_flags(p, StudyConfig)
    p.add_argument("--n-jobs", dest="n_jobs", default=None, metavar="N_JOBS")
    p.add_argument("--output", dest="output", default=None, metavar="DIR")
    p.set_defaults(func=cmd_reproduce_tables)

    p = sub.add_parser("selftest", help="quick internal consistency checks")
    p.set_defaults(func=cmd_selftest)

    for p in sub.choices.values():
        p.add_argument("--config", default=None, help="key = value file; flags override it")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InputError, UnsupportedOrder, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (NotPositiveDefinite, IllConditionedError, DegenerateScale) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except BudgetExceeded as exc:
        print(f"budget exceeded: {exc}", file=sys.stderr)
        return EXIT_BUDGET


if __name__ == "__main__":
    sys.exit(main())
