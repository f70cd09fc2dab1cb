"""Monte Carlo studies on the simulation designs.

A study fixes one training sample, the nuisance fit and the training Gram
for every dictionary size, then redraws only the estimation sample in each
replicate. Replicate ``r`` uses child stream ``r`` of the study seed, so
results do not depend on execution order or worker count.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .bootstrap import DEFAULT_REPLICATES, boot_var_if2233
from .dictionary import DictionarySpec, basis_matrix
from .dml import bias_corrected, psi_hat_1, wald_ci
from .functional import FunctionalSpec, residual_scalars
from .gram import empirical_gram
from .simgen import DEFAULT_FIT_FAMILY, DEFAULT_FIT_RESOLUTION, DGPSpec, SeriesNuisance, SimulationDGP
from .testkit import TestConfig, early_stop, test_cs, test_m
from .ustat import KernelInputs, UStatResult, if22, if33

__all__ = [
    "StudyConfig", "Study", "REPLICATE_FIELDS", "SUMMARY_FIELDS",
    "prepare_study", "run_replicate", "run_study", "summarize",
]


@dataclass(frozen=True)
class StudyConfig:
    setup: str = "I"
    n: int = 20_000
    n_train: int = 20_000
    family: str = "db6"
    resolutions: tuple = (6, 7)
    fit_family: str = DEFAULT_FIT_FAMILY
    fit_resolution: int = DEFAULT_FIT_RESOLUTION
    ridge: float = 0.0
    delta: float = 0.75
    alpha: float = 0.10
    boot_replicates: int = DEFAULT_REPLICATES
    replicates: int = 50
    seed: int = 20_231_016
    d: int = 4

    def __post_init__(self):
        if self.n < 6 or self.n_train < 2:
            raise ValueError("sample sizes too small")
        if self.replicates < 1:
            raise ValueError("need at least one replicate")
        if not self.resolutions:
            raise ValueError("need at least one dictionary resolution")

    def dictionaries(self):
        return [DictionarySpec(self.family, int(r), d=self.d, drop_redundant=True)
                for r in self.resolutions]

    def to_dict(self) -> dict:
        out = asdict(self)
        out["resolutions"] = list(self.resolutions)
        return out


@dataclass
class Study:
    config: StudyConfig
    dgp: SimulationDGP
    model: SeriesNuisance
    grams: list
    dictionaries: list
    streams: list = field(repr=False, default_factory=list)

    @property
    def functional(self) -> FunctionalSpec:
        return self.dgp.spec.functional


def _streams(cfg: StudyConfig):
    root = np.random.SeedSequence(cfg.seed)
    train_ss, rep_ss = root.spawn(2)
    return train_ss, rep_ss.spawn(cfg.replicates)


def prepare_study(cfg: StudyConfig) -> Study:
    dgp = SimulationDGP(DGPSpec(cfg.setup, d=cfg.d))
    train_ss, rep_streams = _streams(cfg)
    train = dgp.draw(cfg.n_train, np.random.default_rng(train_ss)).units
    fit_dict = DictionarySpec(cfg.fit_family, cfg.fit_resolution, d=cfg.d, drop_redundant=True)
    model = SeriesNuisance(fit_dict, dgp.spec.functional, cfg.ridge).fit(train.x, train.y, train.a)
    s_train = dgp.spec.functional.s_bp(train.a)
    dicts = cfg.dictionaries()
    grams = [empirical_gram(s_train, basis_matrix(spec, train.x, sparse=True)) for spec in dicts]
    return Study(cfg, dgp, model, grams, dicts, rep_streams)


def _covers(est, alpha) -> bool:
    lo, hi = wald_ci(est, alpha)
    return bool(lo <= 0.0 <= hi)


def run_replicate(study: Study, r: int) -> list:
    """Rows (one per dictionary) for replicate ``r``."""
    cfg = study.config
    fs = study.functional
    data_ss, boot_ss = study.streams[r].spawn(2)
    units = study.dgp.draw(cfg.n, np.random.default_rng(data_ss)).units
    fit = study.model.predict(units.x)
    est = psi_hat_1(fs, units, fit)
    rb, rp, s = residual_scalars(fs, units, fit)
    tcfg = TestConfig(cfg.delta, cfg.alpha, m_max=3)
    rows = []
    boot_seeds = boot_ss.spawn(len(study.dictionaries))
    for spec, gram, bseed in zip(study.dictionaries, study.grams, boot_seeds):
        z = basis_matrix(spec, units.x, sparse=True)
        kin = KernelInputs.from_scalars(rb, rp, s, z, gram)
        v22 = if22(kin)
        v33 = if33(kin)
        v2233 = UStatResult(v22.value + v33.value, 3, kin.k, kin.n, gram.source)
        boot = boot_var_if2233(kin, cfg.boot_replicates, bseed)
        c = boot.components
        se22 = math.sqrt(max(c["var22"], 0.0))
        se33 = math.sqrt(max(c["var33"], 0.0))
        se2233 = boot.se
        o2 = test_m(2, v22, se22, est, tcfg) if se22 > 0 else None
        o3 = test_cs(v2233, se2233, est, tcfg) if se2233 > 0 else None
        stop = early_stop([o2, o3]) if o2 and o3 else None
        psi2 = bias_corrected(est, v22)
        psi3 = bias_corrected(est, v2233)
        rows.append({
            "replicate": r,
            "k": spec.k_nominal,
            "k_eff": kin.k,
            "psi1": est.psi1,
            "se_psi1": est.se,
            "if22": v22.value,
            "if33": v33.value,
            "if2233": v2233.value,
            "se_if22": se22,
            "se_if33": se33,
            "se_if2233": se2233,
            "boot_clipped": boot.clipped,
            "psi2": psi2.psi_mk,
            "psi3": psi3.psi_mk,
            "cover_psi1": _covers(est, cfg.alpha),
            "cover_psi2": _covers(psi2, cfg.alpha),
            "cover_psi3": _covers(psi3, cfg.alpha),
            "margin_m2": o2.margin if o2 else float("nan"),
            "reject_m2": bool(o2.reject) if o2 else False,
            "margin_cs": o3.margin if o3 else float("nan"),
            "reject_cs": bool(o3.reject) if o3 else False,
            "early_reject": bool(stop.reject) if stop else False,
            "early_stopped_at": stop.stopped_at if stop else 2,
            "gram_condition": gram.condition,
        })
    return rows


def run_study(cfg: StudyConfig, n_jobs: int = 1, study: Study | None = None) -> list:
    """All replicate rows in replicate order."""
    study = study or prepare_study(cfg)
    if n_jobs == 1:
        chunks = [run_replicate(study, r) for r in range(cfg.replicates)]
    else:
        from joblib import Parallel, delayed
        chunks = Parallel(n_jobs=n_jobs)(delayed(run_replicate)(study, r)
                                         for r in range(cfg.replicates))
    return [row for chunk in chunks for row in chunk]


REPLICATE_FIELDS = (
    "replicate", "k", "k_eff", "psi1", "se_psi1", "if22", "if33", "if2233",
    "se_if22", "se_if33", "se_if2233", "boot_clipped", "psi2", "psi3",
    "cover_psi1", "cover_psi2", "cover_psi3", "margin_m2", "reject_m2",
    "margin_cs", "reject_cs", "early_reject", "early_stopped_at", "gram_condition",
)

SUMMARY_FIELDS = (
    "k", "replicates", "mc_bias_psi1", "mean_se_psi1", "coverage_psi1",
    "mean_if22", "sd_if22", "mean_se_if22", "mean_if2233", "sd_if2233", "mean_se_if2233",
    "mc_bias_psi3", "sd_psi3", "coverage_psi2", "coverage_psi3",
    "reject_rate_m2", "reject_rate_cs", "reject_rate_early",
)


def summarize(rows, psi_true: float = 0.0) -> list:
    """MC averages, SDs and rates per dictionary size."""
    out = []
    for k in sorted({row["k"] for row in rows}):
        sub = [row for row in rows if row["k"] == k]
        col = lambda key: np.array([row[key] for row in sub], dtype=float)  # noqa: E731
        sd = lambda key: float(np.std(col(key), ddof=1)) if len(sub) > 1 else 0.0  # noqa: E731
        out.append({
            "k": k,
            "replicates": len(sub),
            "mc_bias_psi1": float(col("psi1").mean() - psi_true),
            "mean_se_psi1": float(col("se_psi1").mean()),
            "coverage_psi1": float(col("cover_psi1").mean()),
            "mean_if22": float(col("if22").mean()),
            "sd_if22": sd("if22"),
            "mean_se_if22": float(col("se_if22").mean()),
            "mean_if2233": float(col("if2233").mean()),
            "sd_if2233": sd("if2233"),
            "mean_se_if2233": float(col("se_if2233").mean()),
            "mc_bias_psi3": float(col("psi3").mean() - psi_true),
            "sd_psi3": sd("psi3"),
            "coverage_psi2": float(col("cover_psi2").mean()),
            "coverage_psi3": float(col("cover_psi3").mean()),
            "reject_rate_m2": float(col("reject_m2").mean()),
            "reject_rate_cs": float(col("reject_cs").mean()),
            "reject_rate_early": float(col("early_reject").mean()),
        })
    return out
