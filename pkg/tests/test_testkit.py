import math

import numpy as np
import pytest
from scipy.stats import norm

from hoif.dml import DmlEstimate
from hoif.errors import DegenerateScale
from hoif.functional import FunctionalKind
from hoif import testkit as tk
from hoif.testkit import TestConfig, critical_value, early_stop, margin, rejection_probability
from hoif.ustat import UStatResult

KIND = FunctionalKind.NEG_COUNTERFACTUAL_MEAN


def est(se):
    return DmlEstimate(0.0, se, 1000, KIND)


def stat(v, m=3):
    return UStatResult(v, m, 256, 1000, "empirical")


def test_margin_arithmetic():
    assert abs(margin(3.0, 0.3, 1.645) - 2.5065) < 1e-12
    o = tk.test_cs(stat(3.0), 0.3, est(1.0), TestConfig(0.75, 0.10))
    assert o.reject and abs(o.margin - (3.0 - critical_value(0.10) * 0.3)) < 1e-15


def test_large_bias_example_rejects():
    o = tk.test_cs(stat(23.82e-3), 3.01e-3, est(8.77e-3), TestConfig(0.75, 0.10))
    assert o.reject and abs(o.margin - 2.152) < 2e-3


def test_zero_statistic_never_rejects():
    o = tk.test_cs(stat(0.0), 0.1, est(1.0), TestConfig())
    assert o.margin < 0 and not o.reject


def test_small_bias_example_does_not_reject():
    o = tk.test_m(2, stat(4.76e-3, 2), 1.35e-3, est(8.10e-3), TestConfig(0.75, 0.10))
    assert not o.reject


def test_m3_equals_cs():
    cfg = TestConfig()
    a = tk.test_cs(stat(0.4), 0.1, est(0.2), cfg)
    b = tk.test_m(3, stat(0.4), 0.1, est(0.2), cfg)
    assert a == b


def test_huge_delta_never_rejects():
    assert not tk.test_m(2, stat(100.0, 2), 0.1, est(0.01), TestConfig(delta=1e6)).reject


def test_decision_rule_and_degenerate_scale():
    cfg = TestConfig()
    for v in np.linspace(-2, 2, 21):
        o = tk.test_oracle_chi2(stat(v, 2), 0.3, est(0.5), cfg)
        assert o.reject == (o.margin >= cfg.delta)
    with pytest.raises(DegenerateScale):
        tk.test_cs(stat(1.0), 0.0, est(1.0), cfg)
    with pytest.raises(DegenerateScale):
        tk.test_cs(stat(1.0), 1.0, est(0.0), cfg)


def test_monotonicity_and_scale_invariance():
    base = tk.test_cs(stat(0.5), 0.1, est(0.2), TestConfig(alpha=0.10))
    tighter = tk.test_cs(stat(0.5), 0.1, est(0.2), TestConfig(alpha=0.05))
    assert tighter.margin < base.margin
    for c in (1e-3, 7.0, 1e4):
        o = tk.test_cs(stat(0.5 * c), 0.1 * c, est(0.2 * c), TestConfig())
        assert o.reject == base.reject
    rejects = [tk.test_cs(stat(v), 0.1, est(0.2), TestConfig(alpha=a)).reject
               for v in np.linspace(0, 1, 11) for a in (0.05, 0.10, 0.20)]
    for i in range(0, len(rejects), 3):
        assert rejects[i] <= rejects[i + 1] <= rejects[i + 2]


def test_early_stop():
    cfg = TestConfig()
    yes = tk.test_m(2, stat(10.0, 2), 0.1, est(1.0), cfg)
    no = tk.test_m(3, stat(0.0, 3), 0.1, est(1.0), cfg)
    yes3 = tk.test_m(3, stat(10.0, 3), 0.1, est(1.0), cfg)
    yes4 = tk.test_m(4, stat(10.0, 4), 0.1, est(1.0), cfg)
    no2 = tk.test_m(2, stat(0.0, 2), 0.1, est(1.0), cfg)
    assert early_stop([yes, yes3, yes4]) == early_stop([yes4, yes, yes3])
    assert early_stop([yes, yes3, yes4]).reject and early_stop([yes, yes3, yes4]).stopped_at == 4
    assert early_stop([no2, yes3]).stopped_at == 2 and not early_stop([no2, yes3]).reject
    assert early_stop([yes, no, yes4]).stopped_at == 3


def test_config_validation_and_advisory():
    with pytest.raises(ValueError):
        TestConfig(delta=0)
    with pytest.raises(ValueError):
        TestConfig(alpha=1.0)
    with pytest.warns(UserWarning):
        TestConfig(k_list=(5000,), n=20000)
    assert abs(TestConfig(alpha=0.10).z - 1.6448536269514722) < 1e-12


def test_rejection_probability_formula():
    assert abs(rejection_probability(0.0, 0.0, 1.0, 1.96) - 2 * (1 - norm.cdf(1.96))) < 1e-12
    assert rejection_probability(10.0, 0.75, 5.0, 1.645) > 0.999


def _synthetic_design(beta, n, reps, seed, with_boot=True):
    """Haar basis on uniform x with known Gram = I; ECC-type residual products."""
    from hoif.bootstrap import boot_var_if22
    from hoif.dictionary import DictionarySpec, basis_matrix
    from hoif.gram import factorize
    from hoif.ustat import KernelInputs, if22
    rng = np.random.default_rng(seed)
    spec = DictionarySpec("haar", 3)
    gram = factorize(np.eye(spec.k))
    out = []
    for r in range(reps):
        x = rng.uniform(size=n)
        f = beta * (2 * x - 1)
        rb = f + rng.standard_normal(n)
        rp = f + rng.standard_normal(n)
        kin = KernelInputs.from_scalars(rb, rp, np.ones(n), basis_matrix(spec, x, sparse=True), gram)
        h = rb * rp
        se_psi = math.sqrt(np.sum((h - h.mean()) ** 2)) / n
        se_if = boot_var_if22(kin, 100, r).se if with_boot else float("nan")
        out.append((if22(kin).value, se_if, se_psi))
    # projection of 2x - 1 on the eight Haar bins: squared norm 1/3 - 1/(3 * 64)
    bias_k = beta ** 2 * (1.0 / 3.0 - 1.0 / 192.0)
    return np.array(out), bias_k


def _rejects(res, cfg, n):
    """Decisions per replicate; a clipped (zero) bootstrap se counts as a rejection."""
    out = []
    for v, s, sp in res:
        try:
            o = tk.test_oracle_chi2(UStatResult(v, 2, 8, n, "oracle"), s, DmlEstimate(0, sp, n, KIND), cfg)
            out.append(o.reject)
        except DegenerateScale:
            out.append(True)
    return np.array(out)


def test_oracle_rejection_rate_matches_normal_formula():
    n, reps, delta = 5000, 500, 0.75
    res, bias_k = _synthetic_design(0.21, n, reps, 31)
    cfg = TestConfig(delta, 0.10)
    rejects = _rejects(res, cfg, n)
    se_psi = res[:, 2].mean()
    gamma = bias_k / se_psi
    r = se_psi / res[:, 0].std(ddof=1)
    p = rejection_probability(gamma, delta, r, cfg.z)
    rate = np.mean(rejects)
    assert 0.1 < p < 0.9
    assert abs(rate - p) <= 3 * math.sqrt(p * (1 - p) / reps)


def test_level_under_small_projected_bias():
    n, reps, delta, alpha = 5000, 500, 0.75, 0.10
    res, bias_k = _synthetic_design(0.05, n, reps, 32)
    assert bias_k / res[:, 2].mean() <= 0.5 * delta
    cfg = TestConfig(delta, alpha)
    rate = np.mean(_rejects(res, cfg, n))
    assert rate <= alpha + 3 * math.sqrt(alpha * (1 - alpha) / reps)
