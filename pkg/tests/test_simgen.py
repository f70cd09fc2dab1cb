import numpy as np
import pytest
from scipy import stats
from sklearn.base import clone

from hoif.dictionary import DictionarySpec, basis_matrix
from hoif.functional import FunctionalKind, FunctionalSpec, NuisancePredictions
from hoif.gram import empirical_gram
from hoif.simgen import (DGPSpec, HolderFnSpec, MarginalDensity, SeriesNuisance, SimulationDGP,
                         correlate_pairs, generate, holder_eval, oracle_bias_k, oracle_csbias,
                         oracle_csbias_k, sample_marginal)

NCM = FunctionalSpec(FunctionalKind.NEG_COUNTERFACTUAL_MEAN)
ECC = FunctionalSpec(FunctionalKind.EXPECTED_CONDITIONAL_COVARIANCE)


@pytest.fixture(scope="module")
def dgp():
    return SimulationDGP(DGPSpec("I"))


class Shifted:
    """Truth plus fixed perturbations, for oracle checks."""

    def __init__(self, dgp, cb=0.0, cp=0.0):
        self.dgp, self.cb, self.cp = dgp, cb, cp

    def predict(self, x):
        b, p, _ = self.dgp.truth(x)
        return NuisancePredictions(b + self.cb * np.cos(3 * x[:, 0]), p + self.cp * (x[:, 1] - 0.4))


def test_constant_signs_sum_to_level_weights():
    spec = HolderFnSpec(0.5, signs="constant")
    x = np.linspace(0, 1, 1001)
    expected = sum(2.0 ** (-0.5 * j) for j in spec.levels)
    assert np.max(np.abs(holder_eval(spec, x) - expected)) < 1e-10


def test_level_amplitude_decays_like_smoothness():
    x = np.linspace(0, 1, 1 << 15)
    s = 0.6
    amps = [np.max(np.abs(holder_eval(HolderFnSpec(s, levels=(j,)), x))) * 2 ** (j * s)
            for j in (3, 6, 9)]
    assert np.ptp(amps) / np.mean(amps) < 0.05


def test_cascade_depth_agreement():
    x = np.random.default_rng(0).uniform(size=2000)
    f12 = holder_eval(HolderFnSpec(0.25, depth=12), x)
    f14 = holder_eval(HolderFnSpec(0.25, depth=14), x)
    assert np.max(np.abs(f12 - f14)) < 1e-2 * np.max(np.abs(f14))


def test_holder_domain():
    with pytest.raises(ValueError):
        holder_eval(HolderFnSpec(0.5), [1.2])
    with pytest.raises(ValueError):
        HolderFnSpec(0.5, signs="random")


def test_marginal_sampler_matches_density():
    dens = MarginalDensity()
    x = sample_marginal(dens, 200_000, np.random.default_rng(1))
    assert x.min() >= 0 and x.max() <= 1
    edges = np.linspace(0, 1, 41)
    hist = np.histogram(x, edges)[0] / len(x)
    mids = dens.grid
    probs = np.array([np.mean(dens.pdf(mids) * ((mids >= lo) & (mids < hi)))
                      for lo, hi in zip(edges[:-1], edges[1:])])
    assert abs(probs.sum() - 1) < 1e-9
    assert np.abs(hist - probs).sum() < 0.02


def test_density_below_envelope():
    dens = MarginalDensity()
    assert np.all(dens.pdf(dens.grid) < dens.envelope)


def test_correlate_pairs_examples():
    draws = [[0.2, 0.8], [0.6, 0.1]]
    assert np.array_equal(correlate_pairs(draws, coins=[0]), [[0.6, 0.8]])
    assert np.array_equal(correlate_pairs(draws, coins=[1]), [[0.2, 0.1]])
    with pytest.raises(ValueError):
        correlate_pairs([[0.1, 0.2]], coins=[0])


def test_correlate_pairs_keeps_marginals():
    rng = np.random.default_rng(2)
    out = correlate_pairs(rng.uniform(size=(40_000, 2)), rng)
    for j in range(2):
        assert stats.kstest(out[:, j], "uniform").pvalue > 0.01
    assert np.corrcoef(out.T)[0, 1] > 0.2


def test_generate_deterministic_and_centred():
    spec = DGPSpec("II")
    a = generate(spec, 500, 7)
    b = generate(spec, 500, 7)
    assert np.array_equal(a.units.y, b.units.y) and np.array_equal(a.units.x, b.units.x)
    assert a.psi_true == 0.0 and a.units.x.shape == (500, 4)
    big = generate(spec, 100_000, 8)
    assert abs(big.b.mean()) < 4 * big.b.std() / np.sqrt(len(big))
    assert np.all((big.pi > 0) & (big.pi < 1))


def test_spec_validation():
    with pytest.raises(ValueError):
        DGPSpec("III")
    with pytest.raises(ValueError):
        DGPSpec("I", d=3)


def test_series_constant_dictionary_is_weighted_mean(rng):
    n = 300
    x = rng.uniform(size=(n, 1))
    a = (rng.uniform(size=n) < 0.3).astype(float)
    y = rng.standard_normal(n) + 2
    spec = DictionarySpec("haar", 0)
    fit = SeriesNuisance(spec, NCM).fit(x, y, a).predict(x[:3])
    assert np.allclose(fit.bhat, y[a == 1].mean(), rtol=1e-12)
    assert np.allclose(fit.phat, 1 / a.mean(), rtol=1e-12)
    fit = SeriesNuisance(spec, ECC).fit(x, y, a).predict(x[:3])
    assert np.allclose(fit.bhat, y.mean()) and np.allclose(fit.phat, a.mean())


def test_series_large_ridge_shrinks_to_zero(rng):
    x = rng.uniform(size=(200, 4))
    y = rng.standard_normal(200)
    a = rng.integers(0, 2, 200).astype(float)
    m = SeriesNuisance(functional=NCM, ridge=1e9).fit(x, y, a)
    assert np.max(np.abs(m.coef_b_)) < 1e-8 and np.max(np.abs(m.coef_p_)) < 1e-8
    assert clone(m).get_params()["ridge"] == 1e9
    with pytest.raises(RuntimeError):
        SeriesNuisance().predict(x)


def _oracle_gram(dgp, dictionary):
    x = dgp.draw_x(20_000, np.random.default_rng(3))
    _, _, lam = dgp.truth(x)
    return empirical_gram(lam, basis_matrix(dictionary, x, sparse=True))


def test_oracle_bias_zero_and_sign(dgp):
    dictionary = DictionarySpec("haar", 3, d=4, drop_redundant=True)
    gram = _oracle_gram(dgp, dictionary)
    zero = oracle_bias_k(dgp, Shifted(dgp), dictionary, gram, 20_000, 4)
    assert zero.value == 0.0 and zero.se == 0.0
    up = oracle_bias_k(dgp, Shifted(dgp, 0.5, 0.5), dictionary, gram, 20_000, 4)
    down = oracle_bias_k(dgp, Shifted(dgp, -0.5, 0.5), dictionary, gram, 20_000, 4)
    assert up.value != 0.0 and down.value == pytest.approx(-up.value, rel=1e-12)
    assert up.se > 0


def test_csbias_homogeneity(dgp):
    one = oracle_csbias(dgp, Shifted(dgp, 0.3, 0.2), 20_000, 5)
    two = oracle_csbias(dgp, Shifted(dgp, 0.6, 0.2), 20_000, 5)
    assert two.value == pytest.approx(2 * one.value, rel=1e-12)
    assert oracle_csbias(dgp, Shifted(dgp), 1000, 5).value == 0.0


def test_projected_csbias_bounds_projected_bias(dgp):
    dictionary = DictionarySpec("haar", 2, d=4, drop_redundant=True)
    gram = _oracle_gram(dgp, dictionary)
    model = Shifted(dgp, 0.5, 0.5)
    bias = oracle_bias_k(dgp, model, dictionary, gram, 50_000, 6)
    cs_k = oracle_csbias_k(dgp, model, dictionary, gram, 50_000, 6)
    cs = oracle_csbias(dgp, model, 50_000, 6)
    assert abs(bias.value) <= cs_k.value + 4 * (bias.se + cs_k.se)
    assert cs_k.value <= cs.value + 4 * (cs_k.se + cs.se)
