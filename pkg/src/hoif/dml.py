"""First-order (DML) estimates, cross-fitting, Wald intervals and bias correction."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .functional import FunctionalKind, FunctionalSpec, NuisancePredictions, Units, if1_values
from .ustat import UStatResult

__all__ = [
    "DmlEstimate",
    "CorrectedEstimate",
    "psi_hat_1",
    "cross_fit",
    "wald_ci",
    "bias_corrected",
    "split_halves",
]


@dataclass(frozen=True)
class DmlEstimate:
    psi1: float
    se: float
    n: int
    kind: FunctionalKind

    @property
    def point(self) -> float:
        return self.psi1


@dataclass(frozen=True)
class CorrectedEstimate:
    """``psi1 - if_value``; the standard error is carried over from ``psi1``."""

    psi_mk: float
    m: int
    k: int
    se: float
    if_value: float
    psi1: float

    @property
    def point(self) -> float:
        return self.psi_mk


def psi_hat_1(spec: FunctionalSpec, units: Units, fit: NuisancePredictions) -> DmlEstimate:
    """Sample mean of the estimated influence terms and its plug-in standard error."""
    n = len(units)
    if n < 2:
        raise ValueError("need n >= 2")
    h = if1_values(spec, units, fit)
    if not np.all(np.isfinite(h)):
        raise ValueError("influence terms are not finite")
    psi = float(np.mean(h))
    se = math.sqrt(float(np.sum((h - psi) ** 2))) / n
    return DmlEstimate(psi, se, n, spec.kind)


def cross_fit(first: DmlEstimate, swapped: DmlEstimate) -> DmlEstimate:
    """Average of the two role-swapped estimates."""
    if first.kind != swapped.kind:
        raise ValueError("cannot combine different functionals")
    se = 0.5 * math.sqrt(first.se ** 2 + swapped.se ** 2)
    return DmlEstimate(0.5 * (first.psi1 + swapped.psi1), se, first.n + swapped.n, first.kind)


def wald_ci(est, alpha: float = 0.10):
    """Two-sided ``1 - alpha`` interval ``point -/+ z_{alpha/2} se``."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    half = float(norm.ppf(1.0 - alpha / 2.0)) * est.se
    return est.point - half, est.point + half


def bias_corrected(est: DmlEstimate, stat: UStatResult) -> CorrectedEstimate:
    return CorrectedEstimate(est.psi1 - stat.value, stat.order, stat.k, est.se, stat.value, est.psi1)


def split_halves(N: int, seed):
    """Deterministic shuffle into halves of sizes ``floor(N/2)`` and ``ceil(N/2)``."""
    if N < 2:
        raise ValueError("need at least two units to split")
    perm = np.random.default_rng(seed).permutation(N)
    return np.sort(perm[: N // 2]), np.sort(perm[N // 2:])
