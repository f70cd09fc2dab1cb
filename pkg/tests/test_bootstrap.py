import itertools
import math

import numpy as np
import pytest

from hoif.bootstrap import (boot_cov_if22_if33, boot_var_if22, boot_var_if33, boot_var_if2233,
                            combine_if2233, draw_weights, exact_moment_var_if22,
                            multinomial_moment, replicate_streams)
from hoif.ustat import KernelInputs, if22, if33

from conftest import random_kin


def compositions(n):
    """Every multinomial outcome of n balls in n cells with its probability."""
    for bars in itertools.combinations(range(2 * n - 1), n - 1):
        counts, prev = [], -1
        for b in bars + (2 * n - 1,):
            counts.append(b - prev - 1)
            prev = b
        w = np.array(counts, dtype=float)
        logp = math.lgamma(n + 1) - sum(math.lgamma(c + 1) for c in counts) - n * math.log(n)
        yield w, math.exp(logp)


def literal_expected_var(kin):
    """E_W[T1 - T2] by full enumeration of the weight distribution."""
    n = kin.n
    K = kin.e_b @ kin.gram.inverse @ kin.e_p.T
    np.fill_diagonal(K, 0.0)
    m1 = m2 = c1 = c2 = 0.0
    for w, p in compositions(n):
        u = w @ K @ w / (n * (n - 1))
        c = (w - 1) @ K @ (w - 1) / (n * (n - 1))
        m1 += p * u
        m2 += p * u * u
        c1 += p * c
        c2 += p * c * c
    return (m2 - m1 ** 2) - 2 * (c2 - c1 ** 2)


def test_draw_weights_sum(rng):
    for n in (2, 5, 30):
        assert draw_weights(n, rng).counts.sum() == n


def test_weight_moments_match_formulas():
    n, draws = 25, 100_000
    W = np.random.default_rng(5).multinomial(n, np.full(n, 1 / n), size=draws).astype(float)
    cases = [
        (W[:, 0], 1.0),
        (W[:, 0] * W[:, 1], (n - 1) / n),
        (W[:, 0] ** 2, (2 * n - 1) / n),
        (W[:, 0] ** 2 * W[:, 1], 2 * (n - 1) ** 2 / n ** 2),
        (W[:, 0] ** 2 * W[:, 1] ** 2, (n - 1) * (4 * n ** 2 - 9 * n + 6) / n ** 3),
    ]
    for sample, target in cases:
        se = sample.std(ddof=1) / math.sqrt(draws)
        assert abs(sample.mean() - target) <= 3 * se


@pytest.mark.parametrize("exps,formula", [
    ((1, 1), lambda n: (n - 1) / n),
    ((1, 1, 1), lambda n: (n - 1) * (n - 2) / n ** 2),
    ((1, 1, 1, 1), lambda n: (n - 1) * (n - 2) * (n - 3) / n ** 3),
    ((2, 1), lambda n: 2 * (n - 1) ** 2 / n ** 2),
    ((2,), lambda n: (2 * n - 1) / n),
    ((2, 1, 1), lambda n: (n - 1) * (2 * n ** 2 - 7 * n + 6) / n ** 3),
    ((2, 2), lambda n: (n - 1) * (4 * n ** 2 - 9 * n + 6) / n ** 3),
])
def test_exact_moments_closed_forms(exps, formula):
    for n in (4, 7, 25):
        assert abs(multinomial_moment(n, exps) - formula(n)) < 1e-13


def test_exact_moments_by_enumeration():
    n = 5
    for exps in [(2, 2), (3, 1), (2, 1, 1), (1, 1, 1, 1)]:
        ref = sum(p * np.prod(w[: len(exps)] ** np.array(exps)) for w, p in compositions(n))
        assert abs(multinomial_moment(n, exps) - ref) < 1e-12


@pytest.mark.parametrize("n", [4, 5, 6])
def test_exact_moment_oracle_matches_enumeration(rng, n):
    kin = random_kin(rng, n, 1, scalar=False)
    assert abs(exact_moment_var_if22(kin) - literal_expected_var(kin)) < 1e-12


def test_exact_moment_bilinearity(rng):
    kin = random_kin(rng, 9, 2)
    base = exact_moment_var_if22(kin)
    assert abs(exact_moment_var_if22(kin.scaled(cb=3.0)) - 9 * base) < 1e-10 * abs(base)
    assert exact_moment_var_if22(kin.scaled(cb=0.0)) == 0.0


def test_exact_moment_guard(rng):
    with pytest.raises(ValueError):
        exact_moment_var_if22(random_kin(rng, 61, 1))
    with pytest.raises(ValueError):
        exact_moment_var_if22(random_kin(rng, 3, 1))


def test_unit_weights_reproduce_statistics(rng):
    kin = random_kin(rng, 12, 3)
    ones = np.ones((3, 12))
    from hoif.bootstrap import _Replicator
    rep = _Replicator(kin)
    full, cen = rep.if22(ones[0])
    assert abs(full - if22(kin).value) < 1e-14 and cen == 0.0
    s1, s2, s3, s4 = rep.if33(ones[0])
    assert abs(s1 - if33(kin).value) < 1e-13 and s2 == s3 == s4 == 0.0
    est = boot_var_if22(kin, weights=ones)
    assert est.variance == 0.0 and est.components["T2"] == 0.0


def test_scalar_and_row_paths_agree(rng):
    kin = random_kin(rng, 15, 3)
    rows = KernelInputs.from_rows(kin.e_b, kin.e_p, kin.s, kin.z, kin.gram)
    a = boot_var_if2233(kin, 60, 4)
    b = boot_var_if2233(rows, 60, 4)
    for key in a.components:
        assert abs(a.components[key] - b.components[key]) <= 1e-10 * (1 + abs(a.components[key]))


def test_zero_residuals_give_zero(rng):
    kin = random_kin(rng, 12, 2)
    assert boot_var_if22(kin.scaled(cb=0.0), 50, 1).variance == 0.0
    assert boot_var_if33(kin.scaled(cp=0.0), 50, 1).variance == 0.0
    assert boot_var_if2233(kin.scaled(cb=0.0), 50, 1).variance == 0.0


def test_combination_arithmetic():
    assert abs(combine_if2233(1.0, 0.2, -0.1) - 1.0) < 1e-15


def test_declared_combinations(rng):
    kin = random_kin(rng, 20, 3)
    est = boot_var_if2233(kin, 80, 2)
    c = est.components
    assert c["var22"] == c["T1"] - c["T2"]
    assert c["var33"] == c["S1"] - c["S2"] - c["S3"] - c["S4"]
    assert est.raw == combine_if2233(c["var22"], c["var33"], c["cov"])
    assert est.variance == max(est.raw, 0.0)
    assert est.clipped == (est.raw < 0)
    assert abs(boot_cov_if22_if33(kin, 80, 2) - c["cov"]) < 1e-15
    assert abs(boot_var_if22(kin, 80, 2).raw - c["var22"]) < 1e-15
    assert abs(boot_var_if33(kin, 80, 2).raw - c["var33"]) < 1e-15


def test_seed_determinism_and_parallel(rng):
    kin = random_kin(rng, 30, 3)
    a = boot_var_if2233(kin, 60, 123)
    b = boot_var_if2233(kin, 60, 123)
    c = boot_var_if2233(kin, 60, 123, n_jobs=2)
    assert a.variance == b.variance == c.variance
    assert a.components == c.components


def test_replicate_streams_independent_of_count():
    a = [g.integers(1 << 30) for g in replicate_streams(5, 3)]
    b = [g.integers(1 << 30) for g in replicate_streams(5, 6)]
    assert a == b[:3]


def test_argument_checks(rng):
    with pytest.raises(ValueError):
        boot_var_if22(random_kin(rng, 3, 1), 50, 0)
    with pytest.raises(ValueError):
        boot_var_if33(random_kin(rng, 5, 1), 50, 0)
    with pytest.raises(ValueError):
        boot_var_if22(random_kin(rng, 10, 1), 10, 0)


def test_mc_matches_exact_moment_small():
    rng = np.random.default_rng(8)
    kin = random_kin(rng, 8, 2)
    est = boot_var_if22(kin, 5000, 3)
    assert abs(est.raw - exact_moment_var_if22(kin)) <= 3 * est.mc_se


def test_cov_vanishes_when_second_order_factor_is_zero(rng):
    """With e_p = 0 every second-order replicate is 0, so the covariance is 0."""
    kin = random_kin(rng, 20, 2)
    assert boot_cov_if22_if33(kin.scaled(cp=0.0), 60, 1) == 0.0


def test_if2233_variance_tracks_resampling_variance():
    """Bootstrap variance of the summed statistic vs its variance over fresh samples."""
    from hoif.gram import factorize
    rng = np.random.default_rng(21)
    k, n, reps = 3, 2000, 500
    a = rng.standard_normal((k, k))
    sigma = a @ a.T / k + np.eye(k)
    L = np.linalg.cholesky(sigma)
    gram = factorize(sigma)
    vals, boots = [], []
    for r in range(reps):
        z = rng.standard_normal((n, k)) @ L.T
        rb = z[:, 0] * 0.5 + rng.standard_normal(n)
        rp = z[:, 1] * 0.5 + rng.standard_normal(n)
        kin = KernelInputs.from_scalars(rb, rp, np.ones(n), z, gram)
        vals.append(if22(kin).value + if33(kin).value)
        if r < 100:
            boots.append(boot_var_if2233(kin, 100, r).variance)
    ratio = np.mean(boots) / np.var(vals, ddof=1)
    assert 0.75 <= ratio <= 1.25
