"""Distributional and scaling diagnostics computed from stored replicate outputs.

Everything here is a pure function of its inputs, so rerunning on the same
report gives the same answer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

__all__ = [
    "QQData",
    "NormalityCheck",
    "BiasOrdering",
    "qq_data",
    "standardize",
    "normality_check",
    "variance_scaling_check",
    "bias_cancellation_check",
]


@dataclass(frozen=True)
class QQData:
    theoretical: np.ndarray
    empirical: np.ndarray
    degenerate: bool

    def rows(self):
        return list(zip(self.theoretical.tolist(), self.empirical.tolist()))


@dataclass(frozen=True)
class NormalityCheck:
    standardized: np.ndarray
    ks_statistic: float
    p_value: float

    def passes(self, level: float = 0.01) -> bool:
        return bool(self.p_value >= level)


@dataclass(frozen=True)
class BiasOrdering:
    """How far each order's estimate sits from the oracle projected bias."""

    gap_second: float
    gap_third: float
    third_closer: bool
    share_third_closer: float | None


def _finite_1d(values, name):
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise ValueError(f"{name} is empty")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} has non-finite entries")
    return v


def qq_data(values) -> QQData:
    """Normal quantiles at Blom plotting positions against the sorted sample."""
    v = np.sort(_finite_1d(values, "values"))
    n = v.size
    probs = (np.arange(1, n + 1) - 0.375) / (n + 0.25)
    theo = stats.norm.ppf(probs)
    degenerate = bool(n < 2 or np.ptp(v) == 0.0)
    return QQData(theo, v, degenerate)


def standardize(values, ses, center=0.0) -> np.ndarray:
    """``(values - center) / ses`` with each replicate's own standard error."""
    v = _finite_1d(values, "values")
    s = _finite_1d(ses, "ses")
    if v.shape != s.shape:
        raise ValueError("values and ses differ in length")
    if np.any(s <= 0.0):
        raise ValueError("standard errors must be positive")
    return (v - np.asarray(center, dtype=float)) / s


def normality_check(values, ses, center=0.0) -> NormalityCheck:
    """KS test of the standardized values against N(0, 1), asymptotic p-value."""
    zs = standardize(values, ses, center)
    res = stats.kstest(zs, "norm", method="asymp")
    return NormalityCheck(zs, float(res.statistic), float(res.pvalue))


def variance_scaling_check(k, n, variances) -> dict:
    """Least-squares fit of ``log v = c + a log k + b log n``.

    Returns the slopes in ``k`` and ``n``. A slope is reported as nan when
    its regressor does not vary over the grid.
    """
    k = _finite_1d(k, "k")
    n = _finite_1d(n, "n")
    v = _finite_1d(variances, "variances")
    if not (k.size == n.size == v.size):
        raise ValueError("k, n and variances differ in length")
    if np.any(k <= 0) or np.any(n <= 0) or np.any(v <= 0):
        raise ValueError("k, n and variances must be positive")
    cols = [np.ones_like(v)]
    names = []
    for name, x in (("k", k), ("n", n)):
        if np.ptp(x) > 0:
            cols.append(np.log(x))
            names.append(name)
    X = np.column_stack(cols)
    coef, *_ = np.linalg.lstsq(X, np.log(v), rcond=None)
    out = {"slope_k": math.nan, "slope_n": math.nan, "intercept": float(coef[0])}
    for name, c in zip(names, coef[1:]):
        out[f"slope_{name}"] = float(c)
    return out


def bias_cancellation_check(if22, if2233, oracle_bias_k: float) -> BiasOrdering:
    """Compare second- and third-order estimates with the oracle projected bias.

    ``if22`` and ``if2233`` may be scalars (MC means) or per-replicate arrays;
    with arrays the share of replicates where the third order is closer is
    also reported.
    """
    a = _finite_1d(if22, "if22")
    b = _finite_1d(if2233, "if2233")
    if a.shape != b.shape:
        raise ValueError("if22 and if2233 differ in length")
    target = float(oracle_bias_k)
    gap2 = abs(float(a.mean()) - target)
    gap3 = abs(float(b.mean()) - target)
    share = None
    if a.size > 1:
        share = float(np.mean(np.abs(b - target) < np.abs(a - target)))
    return BiasOrdering(gap2, gap3, bool(gap3 <= gap2), share)
