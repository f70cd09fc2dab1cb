"""Simulation designs with wavelet Hoelder functions and known nuisances.

The regression and propensity surfaces are additive in ``d = 4`` covariates,
each coordinate passing through a wavelet series whose level-``j`` terms have
size ``2**(-j s)``. Covariate marginals share a rough density and are made
dependent by a max/min pairing scheme that keeps the marginals intact.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np
import scipy.linalg as sla
from scipy.special import expit
from sklearn.base import BaseEstimator

from .dictionary import DictionarySpec, basis_matrix, cascade_table
from .errors import NotPositiveDefinite
from .functional import FunctionalSpec, NuisancePredictions, Units
from .gram import GramFactor

__all__ = [
    "PAPER_LEVELS",
    "TAU_B",
    "TAU_P",
    "HolderFnSpec",
    "holder_eval",
    "MarginalDensity",
    "sample_marginal",
    "correlate_pairs",
    "DGPSpec",
    "SimulationDGP",
    "LabeledDataset",
    "generate",
    "SeriesNuisance",
    "fit_nuisance_series",
    "OracleValue",
    "oracle_bias_k",
    "oracle_csbias",
    "oracle_csbias_k",
]

PAPER_LEVELS = (0, 3, 6, 9, 10, 16)
TAU_B = (-0.2819, 0.4876, -0.1515, -0.1190)
TAU_P = (0.09789, 0.08800, -0.4823, 0.4588)
SETUP_SMOOTHNESS = {"I": 0.25, "II": 0.6}
MARGINAL_SMOOTHNESS = 0.1
DEFAULT_FIT_FAMILY = "db6"
DEFAULT_FIT_RESOLUTION = 2


@dataclass(frozen=True)
class HolderFnSpec:
    """Wavelet series ``scale * sum_j sum_l c_{j,l} 2^{-j(s+1/2)} w_{j,l}(x)``.

    ``w_{j,l}(x) = 2^{j/2} phi(2^j x - l)`` is the db6 father wavelet at
    level ``j`` and shift ``l``; shifts run over every ``l`` whose support
    meets ``[0, 1]``. With ``signs="alternating"`` the coefficient sign is
    ``(-1)^l``; ``signs="constant"`` uses ``+1`` throughout, which sums to a
    constant on ``[0, 1]`` because integer shifts of phi form a partition of
    unity.
    """

    s: float
    scale: float = 1.0
    levels: tuple = PAPER_LEVELS
    signs: str = "alternating"
    depth: int = 12

    def __post_init__(self):
        if self.signs not in ("alternating", "constant"):
            raise ValueError("signs must be 'alternating' or 'constant'")
        if self.s < 0:
            raise ValueError("smoothness must be nonnegative")


@numba.njit(cache=True)
def _holder_kernel(x, levels, weights, table, depth, alternating):
    n = x.shape[0]
    out = np.zeros(n)
    steps = 1 << depth
    last = table.shape[0] - 1
    for i in range(n):
        acc = 0.0
        for li in range(levels.shape[0]):
            t = x[i] * 2.0 ** levels[li]
            base = np.floor(t)
            level_sum = 0.0
            for o in range(11):
                q = base - o
                pos = (t - q) * steps
                idx = int(np.floor(pos))
                if idx < 0 or idx >= last:
                    continue
                frac = pos - idx
                val = table[idx] * (1.0 - frac) + table[idx + 1] * frac
                if alternating and (int(q) & 1):
                    val = -val
                level_sum += val
            acc += weights[li] * level_sum
        out[i] = acc
    return out


def holder_eval(spec: HolderFnSpec, x) -> np.ndarray:
    """Evaluate the series at points ``x`` in ``[0, 1]``."""
    x = np.asarray(x, dtype=float)
    shape = x.shape
    flat = x.ravel()
    if flat.size and (not np.all(np.isfinite(flat)) or flat.min() < 0.0 or flat.max() > 1.0):
        raise ValueError("Hoelder functions are defined on [0, 1]")
    table = cascade_table("db6", spec.depth).values
    levels = np.asarray(spec.levels, dtype=np.int64)
    # 2^{-j(s+1/2)} times the 2^{j/2} normalization of w_{j,l}
    weights = spec.scale * 2.0 ** (-levels * spec.s)
    out = _holder_kernel(flat, levels, weights, table, spec.depth, spec.signs == "alternating")
    return out.reshape(shape)


class MarginalDensity:
    """Density proportional to ``1 + exp(h(x; s_f) / 2)`` on ``[0, 1]``.

    The normalizer comes from a midpoint rule on ``2**grid_bits`` cells and
    the rejection envelope is the largest grid value times ``1.01``.
    """

    def __init__(self, s_f: float = MARGINAL_SMOOTHNESS, grid_bits: int = 20, signs="alternating"):
        self.h = HolderFnSpec(s_f, signs=signs)
        m = 1 << grid_bits
        self.grid = (np.arange(m) + 0.5) / m
        raw = self._raw(self.grid)
        self.normalizer = float(raw.mean())
        self.envelope = 1.01 * float(raw.max()) / self.normalizer

    def _raw(self, x):
        return 1.0 + np.exp(0.5 * holder_eval(self.h, x))

    def pdf(self, x) -> np.ndarray:
        return self._raw(x) / self.normalizer

    def expect(self, fn) -> float:
        """Quadrature of ``E[fn(X)]`` for scalar-valued ``fn``."""
        return float(np.mean(fn(self.grid) * self.pdf(self.grid)))


def sample_marginal(density: MarginalDensity, n: int, rng: np.random.Generator) -> np.ndarray:
    """Rejection sampling from ``density`` with a uniform proposal."""
    out = np.empty(n)
    filled = 0
    batch = max(64, int(1.2 * n * density.envelope))
    while filled < n:
        x = rng.random(batch)
        u = rng.random(batch) * density.envelope
        acc = x[u < density.pdf(x)]
        take = min(len(acc), n - filled)
        out[filled:filled + take] = acc[:take]
        filled += take
    return out


def correlate_pairs(draws, rng: np.random.Generator | None = None, coins=None) -> np.ndarray:
    """Pair consecutive rows; emit the coordinatewise max or min of each pair.

    Each output coordinate comes from one of its two inputs, so a coordinate
    drawn i.i.d. from ``f`` keeps the marginal ``f`` while coordinates become
    positively dependent. ``coins`` (0 for max, 1 for min) override ``rng``.
    """
    draws = np.asarray(draws, dtype=float)
    if draws.ndim != 2 or draws.shape[0] % 2:
        raise ValueError("need an even number of rows")
    first, second = draws[0::2], draws[1::2]
    upper = np.maximum(first, second)
    lower = np.minimum(first, second)
    if coins is None:
        coins = rng.integers(0, 2, size=len(first))
    coins = np.asarray(coins).reshape(-1, 1)
    return np.where(coins == 1, lower, upper)


@dataclass(frozen=True)
class DGPSpec:
    """Simulation law. ``setup`` fixes the smoothness of both nuisances."""

    setup: str = "I"
    d: int = 4
    tau_b: tuple = TAU_B
    tau_p: tuple = TAU_P
    s_f: float = MARGINAL_SMOOTHNESS
    signs: str = "alternating"
    functional: FunctionalSpec = field(default_factory=FunctionalSpec)

    def __post_init__(self):
        if self.setup not in SETUP_SMOOTHNESS:
            raise ValueError("setup must be 'I' or 'II'")
        if len(self.tau_b) != self.d or len(self.tau_p) != self.d:
            raise ValueError("coefficient vectors must have length d")

    @property
    def s(self) -> float:
        return SETUP_SMOOTHNESS[self.setup]


@dataclass(frozen=True)
class LabeledDataset:
    units: Units
    b: np.ndarray
    pi: np.ndarray
    psi_true: float

    def __len__(self):
        return len(self.units)

    @property
    def lam(self) -> np.ndarray:
        """``E[S | X]`` at each unit."""
        return self.pi


class SimulationDGP:
    """Concrete sampler for a :class:`DGPSpec`.

    ``b`` is recentred by its exact mean under the covariate law, computed by
    one-dimensional quadrature since ``b`` is additive and every coordinate
    has the same marginal. This makes the target functional zero.
    """

    def __init__(self, spec: DGPSpec):
        self.spec = spec
        self.marginal = MarginalDensity(spec.s_f, signs=spec.signs)
        self.h_b = HolderFnSpec(spec.s, 1.0, signs=spec.signs)
        self.h_p = HolderFnSpec(spec.s, -2.0, signs=spec.signs)
        mean_hb = self.marginal.expect(lambda t: holder_eval(self.h_b, t))
        self.b_offset = float(np.sum(spec.tau_b) * mean_hb)
        self.tau_b = np.asarray(spec.tau_b, dtype=float)
        self.tau_p = np.asarray(spec.tau_p, dtype=float)

    def b(self, x) -> np.ndarray:
        return holder_eval(self.h_b, x) @ self.tau_b - self.b_offset

    def pi(self, x) -> np.ndarray:
        return expit(holder_eval(self.h_p, x) @ self.tau_p)

    def truth(self, x):
        """True ``(b, p, lambda)`` for the configured functional."""
        b = self.b(x)
        pi = self.pi(x)
        fs = self.spec.functional
        if fs.is_ncm:
            if fs.treatment_level == 0:
                pi = 1.0 - pi
            return b, 1.0 / pi, pi
        return b, pi, np.ones_like(pi)

    def draw_x(self, n: int, rng: np.random.Generator) -> np.ndarray:
        d = self.spec.d
        cols = [sample_marginal(self.marginal, 2 * n, rng) for _ in range(d)]
        return correlate_pairs(np.column_stack(cols), rng)

    def draw(self, n: int, rng: np.random.Generator) -> LabeledDataset:
        x = self.draw_x(n, rng)
        b = self.b(x)
        pi = self.pi(x)
        a = (rng.random(n) < pi).astype(float)
        y = b + rng.standard_normal(n)
        # b is centred and Y - b is independent of A, so both targets are 0
        return LabeledDataset(Units(y, a, x), b, pi, 0.0)

    def draw_ax(self, n: int, rng: np.random.Generator):
        ds = self.draw(n, rng)
        return ds.units.a, ds.units.x


def generate(spec: DGPSpec, n: int, seed) -> LabeledDataset:
    """Draw ``n`` labeled units from ``spec`` with a fresh generator."""
    return SimulationDGP(spec).draw(n, np.random.default_rng(seed))


class SeriesNuisance(BaseEstimator):
    """Penalized series fit of both nuisances from the loss minimization.

    With dictionary matrix ``Z``, weights ``S`` and ridge ``r``, each
    nuisance minimizes ``mean(S h^2 / 2 + m(O, h)) + r |beta|^2`` over
    ``h = Z beta``, giving ``(Z' S Z / n + 2 r I) beta = Z' t / n`` with
    ``t = S Y`` (for ``b``) or ``t = 1`` (inverse propensity) under the
    counterfactual mean, and ``t = Y`` or ``t = A`` under the covariance.

    ``dictionary=None`` uses an additive coarse db6 basis (four columns per
    coordinate). ``predict`` returns both nuisances at once.
    """

    def __init__(self, dictionary: DictionarySpec | None = None,
                 functional: FunctionalSpec | None = None, ridge: float = 0.0):
        self.dictionary = dictionary
        self.functional = functional
        self.ridge = ridge

    def _dictionary_for(self, d: int) -> DictionarySpec:
        if self.dictionary is None:
            return DictionarySpec(DEFAULT_FIT_FAMILY, DEFAULT_FIT_RESOLUTION, d=d, drop_redundant=True)
        if self.dictionary.d != d:
            raise ValueError(f"dictionary covers {self.dictionary.d} coordinates, data has {d}")
        return self.dictionary

    def fit(self, X, y, a):
        if self.ridge < 0:
            raise ValueError("ridge must be nonnegative")
        units = Units(y, a, X)
        fs = self.functional or FunctionalSpec()
        self.dictionary_ = self._dictionary_for(units.d)
        z = basis_matrix(self.dictionary_, units.x)
        s = fs.s_bp(units.a)
        n = len(units)
        gram = z.T @ (s[:, None] * z) / n + 2.0 * self.ridge * np.eye(z.shape[1])
        if fs.is_ncm:
            arm = fs.arm(units.a)
            targets = np.column_stack([arm * units.y, np.ones(n)])
        else:
            targets = np.column_stack([units.y, units.a])
        rhs = z.T @ targets / n
        try:
            chol = np.linalg.cholesky(gram)
        except np.linalg.LinAlgError as exc:
            raise NotPositiveDefinite("nuisance design is singular; add a ridge") from exc
        coef = sla.cho_solve((chol, True), rhs)
        self.coef_b_ = coef[:, 0]
        self.coef_p_ = coef[:, 1]
        return self

    def predict(self, X) -> NuisancePredictions:
        if not hasattr(self, "coef_b_"):
            raise RuntimeError("SeriesNuisance is not fitted")
        z = basis_matrix(self.dictionary_, X)
        return NuisancePredictions(z @ self.coef_b_, z @ self.coef_p_)


def fit_nuisance_series(train: Units, functional: FunctionalSpec,
                        dictionary: DictionarySpec | None = None, ridge: float = 0.0,
                        others=()):
    """Fit on ``train``; return the model and predictions on ``train`` then on
    each sample in ``others``."""
    model = SeriesNuisance(dictionary, functional, ridge).fit(train.x, train.y, train.a)
    preds = [model.predict(train.x)] + [model.predict(u.x) for u in others]
    return model, preds


@dataclass(frozen=True)
class OracleValue:
    value: float
    se: float


def _oracle_draws(dgp: SimulationDGP, model, L: int, seed, chunk: int = 100_000):
    sizes = [chunk] * (L // chunk) + ([L % chunk] if L % chunk else [])
    for size, ss in zip(sizes, np.random.SeedSequence(seed).spawn(len(sizes))):
        rng = np.random.default_rng(ss)
        x = dgp.draw_x(size, rng)
        b, p, lam = dgp.truth(x)
        fit = model.predict(x)
        yield x, lam, fit.bhat - b, fit.phat - p


def oracle_bias_k(dgp: SimulationDGP, model, dictionary: DictionarySpec, gram: GramFactor,
                  L: int, seed) -> OracleValue:
    """``E[lam db z]' Sigma^{-1} E[lam dp z]`` by Monte Carlo.

    Uses the unbiased distinct-pair form over the ``L`` draws; the standard
    error comes from the linearization of the product of means.
    """
    k = gram.k
    sum_b = np.zeros(k)
    sum_p = np.zeros(k)
    diag = 0.0
    rows_b, rows_p = [], []
    for x, lam, db, dp in _oracle_draws(dgp, model, L, seed):
        z = basis_matrix(dictionary, x, sparse=True)
        ub = np.asarray(z.T @ (lam * db)).ravel()
        up = np.asarray(z.T @ (lam * dp)).ravel()
        sum_b += ub
        sum_p += up
        wb = z.multiply((lam * db)[:, None]).tocsr()
        wp = z.multiply((lam * dp)[:, None]).tocsr()
        diag += float(np.sum(wb.multiply(np.asarray(wp @ gram.inverse))))
        rows_b.append((z, lam * db))
        rows_p.append(lam * dp)
    value = (sum_b @ gram.solve(sum_p) - diag) / (L * (L - 1.0))
    gb = gram.solve(sum_b / L)
    gp = gram.solve(sum_p / L)
    infl = []
    for (z, wb_), wp_ in zip(rows_b, rows_p):
        infl.append(wb_ * np.asarray(z @ gp).ravel() + wp_ * np.asarray(z @ gb).ravel())
    infl = np.concatenate(infl)
    return OracleValue(float(value), float(np.std(infl) / np.sqrt(L)))


def _weighted_norms(dgp, model, L, seed):
    vals = []
    for _, lam, db, dp in _oracle_draws(dgp, model, L, seed):
        vals.append(np.column_stack([lam * db * db, lam * dp * dp]))
    return np.concatenate(vals)


def oracle_csbias(dgp: SimulationDGP, model, L: int, seed) -> OracleValue:
    """``sqrt(E[lam db^2] E[lam dp^2])`` with a delta-method standard error."""
    v = _weighted_norms(dgp, model, L, seed)
    mb, mp = v.mean(axis=0)
    value = np.sqrt(mb * mp)
    if value == 0.0:
        return OracleValue(0.0, 0.0)
    grad = np.array([0.5 * np.sqrt(mp / mb) if mb > 0 else 0.0,
                     0.5 * np.sqrt(mb / mp) if mp > 0 else 0.0])
    cov = np.cov(v, rowvar=False) / len(v)
    return OracleValue(float(value), float(np.sqrt(max(grad @ cov @ grad, 0.0))))


def oracle_csbias_k(dgp: SimulationDGP, model, dictionary: DictionarySpec, gram: GramFactor,
                    L: int, seed) -> OracleValue:
    """Product of the norms of the two projected residuals.

    ``E[Pi(lam^{1/2} db)^2] = u' Sigma^{-1} u`` with ``u = E[lam db z]``.
    Each quadratic form uses the unbiased distinct-pair form.
    """
    k = gram.k
    sum_b = np.zeros(k)
    sum_p = np.zeros(k)
    diag_b = diag_p = 0.0
    parts = []
    for x, lam, db, dp in _oracle_draws(dgp, model, L, seed):
        z = basis_matrix(dictionary, x, sparse=True)
        h = np.asarray(z.multiply(np.asarray(z @ gram.inverse)).sum(axis=1)).ravel()
        sum_b += np.asarray(z.T @ (lam * db)).ravel()
        sum_p += np.asarray(z.T @ (lam * dp)).ravel()
        diag_b += float(np.sum((lam * db) ** 2 * h))
        diag_p += float(np.sum((lam * dp) ** 2 * h))
        parts.append((z, lam * db, lam * dp))
    qb = (sum_b @ gram.solve(sum_b) - diag_b) / (L * (L - 1.0))
    qp = (sum_p @ gram.solve(sum_p) - diag_p) / (L * (L - 1.0))
    qb_, qp_ = max(qb, 0.0), max(qp, 0.0)
    value = np.sqrt(qb_ * qp_)
    gb = gram.solve(sum_b / L)
    gp = gram.solve(sum_p / L)
    infl = []
    for z, wb, wp in parts:
        lb = 2.0 * wb * np.asarray(z @ gb).ravel()
        lp = 2.0 * wp * np.asarray(z @ gp).ravel()
        if value > 0:
            infl.append(0.5 * np.sqrt(qp_ / qb_) * lb + 0.5 * np.sqrt(qb_ / qp_) * lp)
        else:
            infl.append(np.zeros_like(lb))
    infl = np.concatenate(infl)
    return OracleValue(float(value), float(np.std(infl) / np.sqrt(L)))
