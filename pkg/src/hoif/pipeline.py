"""Run configuration, the falsification pipeline and report serialization."""

from __future__ import annotations

import dataclasses
import json
import math
import warnings
from dataclasses import dataclass, fields

import numpy as np

from . import __version__
from .bootstrap import DEFAULT_REPLICATES, MIN_REPLICATES, boot_var_if2233
from .dataio import Dataset, fmt_float, read_dataset, read_nuisance, write_rows
from .dictionary import DictionarySpec, basis_matrix
from .dml import bias_corrected, cross_fit, psi_hat_1
from .errors import BudgetExceeded, DegenerateScale, InputError, NotPositiveDefinite
from .functional import FunctionalKind, FunctionalSpec, residual_scalars
from .gram import DEFAULT_CONDITION_THRESHOLD, empirical_gram
from .simgen import DEFAULT_FIT_FAMILY, DEFAULT_FIT_RESOLUTION, SeriesNuisance
from .testkit import TestConfig, early_stop, test_m
from .ustat import DEFAULT_FLOP_BUDGET, MAX_EXACT_ORDER, KernelInputs, if22_to_mm

__all__ = [
    "SCHEMA_VERSION",
    "ROW_FIELDS",
    "RunConfig",
    "run_falsify",
    "check_report",
    "dumps_report",
    "write_report",
]

SCHEMA_VERSION = "1.0"
MEMORY_BUDGET_BYTES = 2 << 30

_FUNCTIONAL_ALIASES = {
    "ncm": FunctionalKind.NEG_COUNTERFACTUAL_MEAN,
    "neg_counterfactual_mean": FunctionalKind.NEG_COUNTERFACTUAL_MEAN,
    "ecc": FunctionalKind.EXPECTED_CONDITIONAL_COVARIANCE,
    "expected_conditional_covariance": FunctionalKind.EXPECTED_CONDITIONAL_COVARIANCE,
}


def _int_tuple(value) -> tuple:
    if isinstance(value, str):
        value = [t for t in value.replace(",", " ").split() if t]
    return tuple(int(v) for v in value)


@dataclass(frozen=True)
class RunConfig:
    """Everything that determines a falsification run.

    ``k_list`` is optional; when given it must equal the nominal dictionary
    sizes implied by ``resolutions``. ``nuisance`` is a path to
    precomputed predictions for the estimation rows; without it the
    nuisances are fitted on the training rows with the built-in series
    fitter and a role-swapped cross-fit estimate is reported as well.
    """

    functional: str = "ncm"
    treatment_level: int = 1
    family: str = "db6"
    resolutions: tuple = (6,)
    k_list: tuple = ()
    delta: float = 0.75
    alpha: float = 0.10
    m_max: int = 3
    boot_replicates: int = DEFAULT_REPLICATES
    seed: int = 0
    condition_threshold: float = DEFAULT_CONDITION_THRESHOLD
    flop_budget: float = DEFAULT_FLOP_BUDGET
    fit_family: str = DEFAULT_FIT_FAMILY
    fit_resolution: int = DEFAULT_FIT_RESOLUTION
    ridge: float = 0.0
    n_jobs: int = 1
    data: str | None = None
    nuisance: str | None = None
    output: str | None = None

    _PARSERS = {
        "treatment_level": int, "resolutions": _int_tuple, "k_list": _int_tuple,
        "delta": float, "alpha": float, "m_max": int, "boot_replicates": int, "seed": int,
        "condition_threshold": float, "flop_budget": float, "fit_resolution": int,
        "ridge": float, "n_jobs": int,
    }

    def __post_init__(self):
        for name, parse in self._PARSERS.items():
            try:
                object.__setattr__(self, name, parse(getattr(self, name)))
            except (TypeError, ValueError):
                raise InputError(f"{name}: cannot parse {getattr(self, name)!r}") from None
        if self.functional not in _FUNCTIONAL_ALIASES:
            raise InputError(f"functional must be one of {sorted(_FUNCTIONAL_ALIASES)}")
        checks = [
            (self.treatment_level in (0, 1), "treatment_level must be 0 or 1"),
            (self.family in ("haar", "db6", "cosine"), "family must be haar, db6 or cosine"),
            (len(self.resolutions) > 0, "resolutions must not be empty"),
            (all(r >= 0 for r in self.resolutions), "resolutions must be nonnegative"),
            (math.isfinite(self.delta) and self.delta > 0, "delta must be positive"),
            (0.0 < self.alpha < 1.0, "alpha must lie in (0, 1)"),
            (2 <= self.m_max <= MAX_EXACT_ORDER, f"m_max must lie in 2..{MAX_EXACT_ORDER}"),
            (self.boot_replicates >= MIN_REPLICATES,
             f"boot_replicates must be at least {MIN_REPLICATES}"),
            (self.seed >= 0, "seed must be nonnegative"),
            (self.condition_threshold > 1.0, "condition_threshold must exceed 1"),
            (self.flop_budget > 0, "flop_budget must be positive"),
            (self.ridge >= 0.0, "ridge must be nonnegative"),
            (self.n_jobs != 0, "n_jobs must be nonzero"),
        ]
        for ok, msg in checks:
            if not ok:
                raise InputError(msg)
        if self.k_list and len(self.k_list) != len(self.resolutions):
            raise InputError("k_list and resolutions differ in length")

    @classmethod
    def from_mapping(cls, values: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise InputError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**values)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    @property
    def functional_spec(self) -> FunctionalSpec:
        return FunctionalSpec(_FUNCTIONAL_ALIASES[self.functional], self.treatment_level)

    def dictionaries(self, d: int) -> list:
        return [DictionarySpec(self.family, r, d=d, drop_redundant=True) for r in self.resolutions]

    def check_k_list(self, d: int) -> None:
        if not self.k_list:
            return
        implied = tuple(s.k_nominal for s in self.dictionaries(d))
        if implied != self.k_list:
            raise InputError(f"k_list {list(self.k_list)} does not match resolutions "
                             f"(implied {list(implied)} at d={d})")

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["resolutions"] = list(self.resolutions)
        out["k_list"] = list(self.k_list)
        return out


ROW_FIELDS = (
    "k", "k_eff", "m", "if_value", "se_if", "statistic", "se_ratio", "z", "delta",
    "margin", "reject", "psi_mk", "boot_clipped",
)


def _fit_predict(cfg: RunConfig, fs: FunctionalSpec, fit_on, predict_on):
    spec = DictionarySpec(cfg.fit_family, cfg.fit_resolution, d=fit_on.d, drop_redundant=True)
    model = SeriesNuisance(spec, fs, cfg.ridge).fit(fit_on.x, fit_on.y, fit_on.a)
    return model.predict(predict_on.x)


def _estimates(cfg, fs, data: Dataset, nuisance):
    """DML estimate on the estimation rows, plus the cross-fit when possible."""
    try:
        if nuisance is not None:
            return nuisance, psi_hat_1(fs, data.est, nuisance), None
        fit = _fit_predict(cfg, fs, data.train, data.est)
        est = psi_hat_1(fs, data.est, fit)
        swapped = psi_hat_1(fs, data.train, _fit_predict(cfg, fs, data.est, data.train))
    except ValueError as exc:
        if isinstance(exc, InputError):
            raise
        raise InputError(str(exc)) from None
    return fit, est, (swapped, cross_fit(est, swapped))


def _k_block(cfg, fs, data, fit, est, spec, gram, seed) -> tuple:
    tcfg = TestConfig(cfg.delta, cfg.alpha, m_max=cfg.m_max)
    z = basis_matrix(spec, data.est.x, sparse=True)
    rb, rp, s = residual_scalars(fs, data.est, fit)
    kin = KernelInputs.from_scalars(rb, rp, s, z, gram)
    boot = boot_var_if2233(kin, cfg.boot_replicates, seed, n_jobs=cfg.n_jobs)
    se22 = math.sqrt(max(boot.components["var22"], 0.0))
    rows, outcomes = [], []
    for m in range(2, cfg.m_max + 1):
        stat = if22_to_mm(m, kin, budget=cfg.flop_budget)
        se_if = se22 if m == 2 else boot.se
        if not se_if > 0.0:
            raise DegenerateScale(f"bootstrap se of the order-{m} statistic is zero at k={spec.k_nominal}")
        o = test_m(m, stat, se_if, est, tcfg)
        outcomes.append(o)
        rows.append({
            "k": spec.k_nominal, "k_eff": kin.k, "m": m, "if_value": stat.value,
            "se_if": se_if, "statistic": o.statistic, "se_ratio": o.se_ratio, "z": o.z,
            "delta": o.delta, "margin": o.margin, "reject": o.reject,
            "psi_mk": bias_corrected(est, stat).psi_mk,
            "boot_clipped": bool(boot.clipped) if m > 2 else bool(boot.components["var22"] < 0),
        })
    stop = early_stop(outcomes)
    boot_info = {"k": spec.k_nominal, "M": boot.M, "var22": boot.components["var22"],
                 "var33": boot.components["var33"], "cov": boot.components["cov"],
                 "var2233": boot.variance, "clipped": bool(boot.clipped)}
    return rows, {"k": spec.k_nominal, "reject": stop.reject, "stopped_at": stop.stopped_at}, boot_info


def _check_size(spec: DictionarySpec, n_train: int) -> None:
    if spec.k > n_train:
        raise NotPositiveDefinite(f"k={spec.k} exceeds the {n_train} training rows; the Gram is singular")
    # several dense k x k work arrays are alive at once
    if 6 * 8 * spec.k ** 2 > MEMORY_BUDGET_BYTES:
        raise BudgetExceeded(f"k={spec.k} needs more than {MEMORY_BUDGET_BYTES >> 30} GiB of dense work space")


def run_falsify(cfg: RunConfig, data: Dataset | None = None, nuisance=None) -> dict:
    """Compute the report for one dataset. Deterministic in ``(inputs, cfg)``."""
    if data is None:
        if not cfg.data:
            raise InputError("no dataset given")
        data = read_dataset(cfg.data)
    if nuisance is None and cfg.nuisance:
        nuisance = read_nuisance(cfg.nuisance, len(data.est))
    if nuisance is not None and len(nuisance) != len(data.est):
        raise InputError(f"{len(nuisance)} predictions for {len(data.est)} estimation units")
    if data.train is None:
        raise InputError("the Gram matrix needs 'train' rows")
    if len(data.est) < 6:
        raise InputError("need at least 6 estimation units")
    fs = cfg.functional_spec
    d = data.d
    cfg.check_k_list(d)
    fit, est, cf = _estimates(cfg, fs, data, nuisance)
    specs = cfg.dictionaries(d)
    seeds = np.random.SeedSequence(cfg.seed).spawn(len(specs))
    rows, stops, grams, boots = [], [], [], []
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        TestConfig(cfg.delta, cfg.alpha, k_list=tuple(s.k_nominal for s in specs),
                   m_max=cfg.m_max, n=len(data.est))
        for spec, seed in zip(specs, seeds):
            _check_size(spec, len(data.train))
            s_train = fs.s_bp(data.train.a)
            gram = empirical_gram(s_train, basis_matrix(spec, data.train.x, sparse=True),
                                  condition_threshold=cfg.condition_threshold, strict=True)
            grams.append({"k": spec.k_nominal, "k_eff": spec.k, "condition": gram.condition})
            r, stop, boot = _k_block(cfg, fs, data, fit, est, spec, gram, seed)
            rows.extend(r)
            stops.append(stop)
            boots.append(boot)
    advisories = sorted({str(w.message) for w in caught})
    report = {
        "schema_version": SCHEMA_VERSION,
        "version": __version__,
        "config": {k: v for k, v in cfg.to_dict().items() if k not in ("data", "nuisance", "output", "n_jobs")},
        "seed": cfg.seed,
        "n_est": len(data.est),
        "n_train": len(data.train),
        "d": d,
        "functional": fs.kind.value,
        "nuisance_source": "file" if nuisance is not None else "series",
        "psi1": est.psi1,
        "se_psi1": est.se,
        "cross_fit": None if cf is None else {
            "psi1_swapped": cf[0].psi1, "se_swapped": cf[0].se,
            "psi1_cf": cf[1].psi1, "se_cf": cf[1].se,
        },
        "rows": rows,
        "early_stop": stops,
        "gram": grams,
        "bootstrap": boots,
        "advisories": advisories,
    }
    return report


def check_report(report: dict) -> bool:
    """Recompute every decision from the stored statistic, se ratio, z and delta."""
    for row in report["rows"]:
        margin = row["statistic"] - row["z"] * row["se_ratio"]
        if margin != row["margin"] or (margin >= row["delta"]) != row["reject"]:
            return False
    return True


def _json(obj, indent: int, level: int = 0) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt_float(obj) if math.isfinite(obj) else "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{_json(str(k), indent)}: {_json(v, indent, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        items = [pad + _json(v, indent, level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps_report(report: dict) -> str:
    """JSON text with floats at 17 significant digits and non-finite floats as null."""
    return _json(report, 2) + "\n"


def write_report(report: dict, json_path, csv_path) -> None:
    with open(json_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_report(report))
    write_rows(csv_path, ROW_FIELDS, report["rows"])
