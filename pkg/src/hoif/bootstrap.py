"""Multinomial-weight bootstrap variances for the second and third order statistics.

Each replicate keeps the estimated inverse Gram fixed and reweights the
estimation units by ``W ~ Multinomial(n; 1/n, ..., 1/n)``. Replicates with
centered weights ``W - 1`` in two slots remove the inflation that plain
reweighting of a degenerate U-statistic produces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import stirling2

from .ustat import KernelInputs, _sum22, _sum33, weighted_grams

__all__ = [
    "DEFAULT_REPLICATES",
    "WeightDraw",
    "BootstrapEstimate",
    "draw_weights",
    "replicate_streams",
    "multinomial_moment",
    "centered_multinomial_moment",
    "boot_var_if22",
    "boot_var_if33",
    "boot_cov_if22_if33",
    "boot_var_if2233",
    "combine_if2233",
    "exact_moment_var_if22",
]

DEFAULT_REPLICATES = 100
MIN_REPLICATES = 50
EXACT_MOMENT_MAX_N = 60


@dataclass(frozen=True)
class WeightDraw:
    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 1 or np.any(c < 0) or c.sum() != len(c):
            raise ValueError("counts must be nonnegative and sum to n")


@dataclass(frozen=True)
class BootstrapEstimate:
    """Bootstrap variance with the pieces it was assembled from.

    ``variance`` is the declared combination of ``components`` clipped at 0;
    ``raw`` keeps the unclipped value and ``clipped`` flags the clip.
    ``mc_se`` is the replicate Monte Carlo standard error of ``raw``.
    """

    variance: float
    raw: float
    M: int
    seed: object
    components: dict = field(default_factory=dict)
    clipped: bool = False
    mc_se: float = float("nan")

    @property
    def se(self) -> float:
        return math.sqrt(self.variance)


def draw_weights(n: int, rng: np.random.Generator) -> WeightDraw:
    """One multinomial draw of ``n`` balls into ``n`` equiprobable cells."""
    if n < 2:
        raise ValueError("need n >= 2")
    return WeightDraw(rng.multinomial(n, np.full(n, 1.0 / n)))


def replicate_streams(seed, M: int):
    """Independent generators, one per replicate index."""
    if isinstance(seed, np.random.Generator):
        return seed.spawn(M)
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return [np.random.default_rng(child) for child in ss.spawn(M)]


def _weight_matrix(n, M, seed, weights):
    if weights is not None:
        W = np.asarray(weights, dtype=float)
        if W.ndim != 2 or W.shape[1] != n:
            raise ValueError("forced weights must be an M x n array")
        return W
    if M < MIN_REPLICATES:
        raise ValueError(f"need at least {MIN_REPLICATES} bootstrap replicates")
    return np.stack([draw_weights(n, rng).counts for rng in replicate_streams(seed, M)]).astype(float)


def _falling(n, j):
    return float(math.perm(n, j))


class _Replicator:
    """Per-replicate weighted statistics sharing precomputed constants."""

    def __init__(self, kin: KernelInputs):
        self.kin = kin
        self.n = kin.n
        if kin.scalar:
            P = kin.gram.inverse
            self.r = kin.rb * kin.rp
            K = weighted_grams(kin.z, np.column_stack([kin.s, self.r]))
            self.X_s = P @ K[0]
            self.Y_r = P @ K[1]

    def if22(self, w) -> tuple:
        c = w - 1.0
        scale = _falling(self.n, 2)
        return _sum22(self.kin, w, w) / scale, _sum22(self.kin, c, c) / scale

    def if33(self, w) -> tuple:
        """Replicates: all weights, then centered in (b, p), (b, Sigma), (p, Sigma)."""
        kin = self.kin
        c = w - 1.0
        if kin.scalar:
            P = kin.gram.inverse
            K = weighted_grams(kin.z, np.column_stack([w * kin.s, w * self.r, w * w * self.r]))
            X_ws = P @ K[0]
            Y_wr = P @ K[1]
            Y_w2r = P @ K[2]
            t_full = float(np.sum(X_ws * Y_w2r.T))
            t_bp = float(np.sum(X_ws * (Y_w2r - 2.0 * Y_wr + self.Y_r).T))
            # both one-sided centerings give u3 = W - 1 and u1 u2 = W^2 - W
            t_side = float(np.sum((X_ws - self.X_s) * (Y_w2r - Y_wr).T))
        else:
            t_full = t_bp = t_side = None
        scale = -1.0 / _falling(self.n, 3)
        return (scale * _sum33(kin, w, w, w, trace=t_full),
                scale * _sum33(kin, c, c, w, trace=t_bp),
                scale * _sum33(kin, c, w, c, trace=t_side),
                scale * _sum33(kin, w, c, c, trace=t_side))


def _check_inputs(kin: KernelInputs, min_n: int):
    if kin.n < min_n:
        raise ValueError(f"bootstrap needs n >= {min_n}")


def _run(kin, M, seed, weights, need33, n_jobs):
    W = _weight_matrix(kin.n, M, seed, weights)
    rep = _Replicator(kin)

    def one(w):
        out = rep.if22(w)
        if need33:
            out = out + rep.if33(w)
        return out

    if n_jobs == 1:
        rows = [one(w) for w in W]
    else:
        from joblib import Parallel, delayed
        rows = Parallel(n_jobs=n_jobs, prefer="threads")(delayed(one)(w) for w in W)
    return np.asarray(rows, dtype=float)


def _finish(raw, M, seed, components, contributions):
    if not all(np.isfinite(v) for v in components.values()):
        raise ArithmeticError("bootstrap components are not finite")
    clipped = raw < 0.0
    mc_se = float(np.std(contributions, ddof=1) / math.sqrt(M)) if M > 1 else float("nan")
    return BootstrapEstimate(max(raw, 0.0), float(raw), M, seed, components, bool(clipped), mc_se)


def _dev(x):
    return x - x.mean()


def _contrib_if22(R):
    """Per-replicate terms whose mean times ``M / (M - 1)`` is ``T1 - T2``."""
    return _dev(R[:, 0]) ** 2 - 2.0 * _dev(R[:, 1]) ** 2


def _contrib_if33(R):
    return _dev(R[:, 2]) ** 2 - _dev(R[:, 3]) ** 2 - _dev(R[:, 4]) ** 2 - _dev(R[:, 5]) ** 2


def _contrib_cov(R):
    return _dev(R[:, 0]) * _dev(R[:, 2]) - 2.0 * _dev(R[:, 1]) * _dev(R[:, 3])


def _var(x):
    return float(np.var(x, ddof=1))


def _cov(x, y):
    return float(np.cov(x, y, ddof=1)[0, 1])


def _parts_if22(R):
    return {"T1": _var(R[:, 0]), "T2": 2.0 * _var(R[:, 1])}


def _parts_if33(R):
    return {"S1": _var(R[:, 2]), "S2": _var(R[:, 3]), "S3": _var(R[:, 4]), "S4": _var(R[:, 5])}


def _cov_2233(R):
    return _cov(R[:, 0], R[:, 2]) - 2.0 * _cov(R[:, 1], R[:, 3])


def boot_var_if22(kin: KernelInputs, M: int = DEFAULT_REPLICATES, seed=0, *,
                  weights=None, n_jobs: int = 1) -> BootstrapEstimate:
    """``T1 - T2``: replicate variance minus twice the centered-replicate variance."""
    _check_inputs(kin, 4)
    R = _run(kin, M, seed, weights, False, n_jobs)
    parts = _parts_if22(R)
    return _finish(parts["T1"] - parts["T2"], len(R), seed, parts, _contrib_if22(R))


def boot_var_if33(kin: KernelInputs, M: int = DEFAULT_REPLICATES, seed=0, *,
                  weights=None, n_jobs: int = 1) -> BootstrapEstimate:
    """``S1 - S2 - S3 - S4`` over the plain and three doubly-centered replicates."""
    _check_inputs(kin, 6)
    R = _run(kin, M, seed, weights, True, n_jobs)
    parts = _parts_if33(R)
    return _finish(parts["S1"] - parts["S2"] - parts["S3"] - parts["S4"], len(R), seed, parts,
                   _contrib_if33(R))


def boot_cov_if22_if33(kin: KernelInputs, M: int = DEFAULT_REPLICATES, seed=0, *,
                       weights=None, n_jobs: int = 1) -> float:
    """Replicate cross-covariance minus twice the centered cross-covariance.

    The centered third-order replicate is the one centered in the b and p
    slots, which pairs with the second-order centering of the same slots.
    """
    _check_inputs(kin, 6)
    return _cov_2233(_run(kin, M, seed, weights, True, n_jobs))


def combine_if2233(var22: float, var33: float, cov: float) -> float:
    return var22 + var33 + 2.0 * cov


def boot_var_if2233(kin: KernelInputs, M: int = DEFAULT_REPLICATES, seed=0, *,
                    weights=None, n_jobs: int = 1) -> BootstrapEstimate:
    """Variance of the second plus third order statistic from shared weights.

    Components hold the unclipped second and third order variances and the
    covariance; the combination is clipped once at the end.
    """
    _check_inputs(kin, 6)
    R = _run(kin, M, seed, weights, True, n_jobs)
    p22 = _parts_if22(R)
    p33 = _parts_if33(R)
    var22 = p22["T1"] - p22["T2"]
    var33 = p33["S1"] - p33["S2"] - p33["S3"] - p33["S4"]
    cov = _cov_2233(R)
    parts = {**p22, **p33, "var22": var22, "var33": var33, "cov": cov}
    contrib = _contrib_if22(R) + _contrib_if33(R) + 2.0 * _contrib_cov(R)
    return _finish(combine_if2233(var22, var33, cov), len(R), seed, parts, contrib)


def multinomial_moment(n: int, exponents) -> float:
    """``E[prod_i W_i^{a_i}]`` over distinct cells of Multinomial(n; 1/n, ...).

    Powers expand into falling factorials through Stirling numbers of the
    second kind, and ``E[prod W_i^{(r_i)}] = n^{(r)} / n^r`` with
    ``r = sum r_i``.
    """
    exps = [int(a) for a in exponents if a]
    total = 0.0
    for rs in np.ndindex(*[a for a in exps]):
        rs = [r + 1 for r in rs]
        coef = 1.0
        for a, r in zip(exps, rs):
            coef *= float(stirling2(a, r, exact=True))
        r = sum(rs)
        total += coef * _falling(n, r) / float(n) ** r if r <= n else 0.0
    return total if exps else 1.0


def centered_multinomial_moment(n: int, exponents) -> float:
    """``E[prod_i (W_i - 1)^{a_i}]`` by binomial expansion."""
    exps = [int(a) for a in exponents]
    total = 0.0
    for bs in np.ndindex(*[a + 1 for a in exps]):
        coef = 1.0
        for a, b in zip(exps, bs):
            coef *= math.comb(a, b) * (-1.0) ** (a - b)
        total += coef * multinomial_moment(n, bs)
    return total


def _pattern_coefficients(n: int):
    """Weights of the pair, shared-index and disjoint pattern sums in
    ``Var_W[U] - 2 Var_W[U^c]``."""
    E, C = multinomial_moment, centered_multinomial_moment
    e11, c11 = E(n, (1, 1)), C(n, (1, 1))
    pair = (E(n, (2, 2)) - e11 ** 2) - 2.0 * (C(n, (2, 2)) - c11 ** 2)
    tri = (E(n, (2, 1, 1)) - e11 ** 2) - 2.0 * (C(n, (2, 1, 1)) - c11 ** 2)
    quad = (E(n, (1, 1, 1, 1)) - e11 ** 2) - 2.0 * (C(n, (1, 1, 1, 1)) - c11 ** 2)
    return pair, tri, quad


def exact_moment_var_if22(kin: KernelInputs) -> float:
    """``E_W[T1 - T2]`` given the data, from exact multinomial moments.

    Test oracle: builds the full ``n x n`` pair kernel, so ``n`` is capped.
    """
    n = kin.n
    if n < 4:
        raise ValueError("need n >= 4")
    if n > EXACT_MOMENT_MAX_N:
        raise ValueError(f"exact-moment oracle limited to n <= {EXACT_MOMENT_MAX_N}")
    K = kin.e_b @ kin.gram.inverse @ kin.e_p.T
    np.fill_diagonal(K, 0.0)
    R = K.sum(axis=1)
    Cs = K.sum(axis=0)
    A = float(np.sum(K * K))
    B = float(np.sum(K * K.T))
    tri = (float(np.sum(R * R)) - A) + (float(R @ Cs) - B) \
        + (float(Cs @ R) - B) + (float(np.sum(Cs * Cs)) - A)
    quad = float(K.sum()) ** 2 - A - B - tri
    c_pair, c_tri, c_quad = _pattern_coefficients(n)
    return (c_pair * (A + B) + c_tri * tri + c_quad * quad) / (n * (n - 1.0)) ** 2
