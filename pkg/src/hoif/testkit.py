"""Falsification tests of the analyst's claim that the DML bias is small.

Every test compares ``|IF| / se(psi1) - z * se(IF) / se(psi1)`` (the
margin) with ``delta``. The same rule serves the Cauchy-Schwarz null with
the third-order statistic, the projected null with order ``m``, and the
oracle second-order test with a known Gram.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

from scipy.stats import norm

from .dml import DmlEstimate
from .errors import DegenerateScale
from .ustat import UStatResult

__all__ = [
    "TestConfig",
    "TestOutcome",
    "EarlyStop",
    "critical_value",
    "margin",
    "test_cs",
    "test_m",
    "test_oracle_chi2",
    "early_stop",
    "rejection_probability",
]


@dataclass(frozen=True)
class TestConfig:
    """Test settings.

    ``m_max`` is the largest order tried by :func:`early_stop`. ``k_list``
    and ``n`` are optional and only feed the advisory size check.
    """

    __test__ = False

    delta: float = 0.75
    alpha: float = 0.10
    k_list: tuple = ()
    m_max: int = 3
    gram_source: str = "empirical"
    n: int | None = None

    def __post_init__(self):
        if not self.delta > 0.0:
            raise ValueError("delta must be positive")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.m_max < 2:
            raise ValueError("m_max must be at least 2")
        if self.gram_source not in ("empirical", "oracle"):
            raise ValueError("gram_source must be 'empirical' or 'oracle'")
        if self.n and self.k_list:
            cap = self.n / math.log(self.n) ** 2
            big = [k for k in self.k_list if k > cap]
            if big:
                warnings.warn(f"k values {big} exceed n / log(n)^2 = {cap:.0f}", stacklevel=2)

    @property
    def z(self) -> float:
        return critical_value(self.alpha)


@dataclass(frozen=True)
class TestOutcome:
    __test__ = False

    statistic: float
    se_ratio: float
    z: float
    delta: float
    margin: float
    reject: bool
    m: int
    k: int


@dataclass(frozen=True)
class EarlyStop:
    reject: bool
    stopped_at: int


def critical_value(alpha: float) -> float:
    """Two-sided normal cutoff ``z_{alpha/2}``."""
    return float(norm.ppf(1.0 - alpha / 2.0))


def margin(statistic: float, se_ratio: float, z: float) -> float:
    return statistic - z * se_ratio


def _outcome(value: float, se_if: float, est: DmlEstimate, cfg: TestConfig, m: int, k: int):
    if not est.se > 0.0:
        raise DegenerateScale("se of the DML estimate is zero")
    if not se_if > 0.0:
        raise DegenerateScale("se of the influence statistic is zero")
    stat = abs(value) / est.se
    ratio = se_if / est.se
    z = cfg.z
    mg = margin(stat, ratio, z)
    return TestOutcome(stat, ratio, z, cfg.delta, mg, bool(mg >= cfg.delta), m, k)


def test_cs(if2233: UStatResult, se_if: float, est: DmlEstimate, cfg: TestConfig) -> TestOutcome:
    """Test of the Cauchy-Schwarz null with the statistic summed to order 3."""
    return _outcome(if2233.value, se_if, est, cfg, 3, if2233.k)


def test_m(m: int, stat: UStatResult, se_if: float, est: DmlEstimate,
           cfg: TestConfig) -> TestOutcome:
    """Test of the projected null with the statistic summed to order ``m``."""
    if m < 2:
        raise ValueError("m must be at least 2")
    return _outcome(stat.value, se_if, est, cfg, m, stat.k)


def test_oracle_chi2(if22_oracle: UStatResult, se_if: float, est: DmlEstimate,
                     cfg: TestConfig) -> TestOutcome:
    """Second-order test with the Gram treated as known."""
    return _outcome(if22_oracle.value, se_if, est, cfg, 2, if22_oracle.k)


def early_stop(outcomes) -> EarlyStop:
    """Reject only if every order rejects; stop at the first that does not."""
    outcomes = sorted(outcomes, key=lambda o: o.m)
    if not outcomes:
        raise ValueError("need at least one outcome")
    for o in outcomes:
        if not o.reject:
            return EarlyStop(False, o.m)
    return EarlyStop(True, outcomes[-1].m)


def rejection_probability(gamma: float, delta: float, se_ratio: float, z: float) -> float:
    """Limiting rejection probability of the oracle test.

    ``gamma`` is the standardized projected bias and ``se_ratio`` is
    ``se(psi1) / se(IF)``.
    """
    r = se_ratio
    return float(2.0 - norm.cdf(z - (gamma - delta) * r) - norm.cdf(z + (gamma + delta) * r))

