"""Gram matrices of the dictionary and their Cholesky factors."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import IllConditioned, IllConditionedError, NotPositiveDefinite

__all__ = [
    "DEFAULT_CONDITION_THRESHOLD",
    "GramFactor",
    "factorize",
    "empirical_gram",
    "oracle_gram_mc",
    "solve",
]

DEFAULT_CONDITION_THRESHOLD = 1e8


@dataclass(frozen=True)
class GramFactor:
    """A symmetric positive definite ``k x k`` matrix with its factorization.

    Attributes
    ----------
    matrix : ndarray
    lower : ndarray
        Lower-triangular ``L`` with ``L @ L.T == matrix``.
    condition : float
        Ratio of the extreme eigenvalues.
    source : {"empirical", "oracle", "given"}
    mc_se : ndarray or None
        Entrywise Monte Carlo standard errors (oracle source only).
    """

    matrix: np.ndarray
    lower: np.ndarray
    condition: float
    source: str = "given"
    mc_se: np.ndarray | None = None
    _inverse: list = field(default_factory=list, repr=False, compare=False)

    @property
    def k(self) -> int:
        return self.matrix.shape[0]

    @property
    def inverse(self) -> np.ndarray:
        """Dense inverse, computed once from the factor."""
        if not self._inverse:
            inv = sla.cho_solve((self.lower, True), np.eye(self.k))
            self._inverse.append(0.5 * (inv + inv.T))
        return self._inverse[0]

    def solve(self, v):
        return sla.cho_solve((self.lower, True), np.asarray(v, dtype=float))

    def whiten(self, v):
        """``L^{-1} v`` so that ``a' Sigma^{-1} b = (L^{-1} a)' (L^{-1} b)``."""
        return sla.solve_triangular(self.lower, np.asarray(v, dtype=float), lower=True)

    @property
    def max_entry_se(self) -> float | None:
        if self.mc_se is None:
            return None
        i = np.unravel_index(np.argmax(np.abs(self.matrix)), self.matrix.shape)
        return float(self.mc_se[i])


def factorize(matrix, source: str = "given", *,
              condition_threshold: float = DEFAULT_CONDITION_THRESHOLD,
              strict: bool = False, mc_se=None) -> GramFactor:
    """Cholesky-factorize ``matrix`` without any jitter.

    Raises ``NotPositiveDefinite`` when the factorization fails. A condition
    number above ``condition_threshold`` emits ``IllConditioned`` (or raises
    ``IllConditionedError`` when ``strict``).
    """
    m = np.array(matrix, dtype=float, copy=True)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] == 0:
        raise ValueError("Gram matrix must be square and non-empty")
    if not np.all(np.isfinite(m)):
        raise NotPositiveDefinite("Gram matrix has non-finite entries")
    scale = max(np.abs(m).max(), np.finfo(float).tiny)
    if np.abs(m - m.T).max() > 1e-12 * scale:
        raise ValueError("Gram matrix is not symmetric")
    m = 0.5 * (m + m.T)
    try:
        lower = np.linalg.cholesky(m)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(
            "Gram matrix is not positive definite; k may be too large for the data"
        ) from exc
    eig = np.linalg.eigvalsh(m)
    if eig[0] <= 0.0:
        raise NotPositiveDefinite("Gram matrix is numerically singular")
    cond = float(eig[-1] / eig[0])
    if cond > condition_threshold:
        msg = f"Gram condition number {cond:.3g} exceeds {condition_threshold:.3g}"
        if strict:
            raise IllConditionedError(msg)
        warnings.warn(msg, IllConditioned, stacklevel=2)
    return GramFactor(m, lower, cond, source, None if mc_se is None else np.asarray(mc_se))


def _weighted_cross(z, w):
    """``z' diag(w) z`` for dense or sparse ``z``."""
    if sp.issparse(z):
        out = (z.T @ z.multiply(w[:, None]).tocsr()).toarray()
    else:
        z = np.asarray(z, dtype=float)
        out = z.T @ (w[:, None] * z)
    return 0.5 * (out + out.T)


def empirical_gram(s_bp, basis, **kwargs) -> GramFactor:
    """``(1/n) sum_i S_i z_i z_i'`` over the training rows, factorized.

    Parameters
    ----------
    s_bp : array of shape (n,)
        Bilinear weights, e.g. ``FunctionalSpec.s_bp(a)``.
    basis : array or sparse matrix of shape (n, k)
    """
    s = np.asarray(s_bp, dtype=float)
    n = len(s)
    if n < 1:
        raise ValueError("need at least one training row")
    if basis.shape[0] != n:
        raise ValueError("basis rows must align with the weights")
    return factorize(_weighted_cross(basis, s) / n, "empirical", **kwargs)


def oracle_gram_mc(sampler, s_of_a, basis_fn, draws: int, seed: int,
                   chunk: int = 50_000, **kwargs) -> GramFactor:
    """Monte Carlo Gram ``E[S z z']`` from ``draws`` fresh simulated units.

    ``sampler(n, rng)`` returns ``(a, x)``; ``s_of_a`` maps exposures to
    bilinear weights; ``basis_fn(x)`` evaluates the dictionary. Chunks use
    child streams of ``seed`` so the result depends only on the arguments.
    """
    if draws < 10_000:
        raise ValueError("oracle Gram needs at least 10^4 draws")
    k = None
    total = second = None
    sizes = [chunk] * (draws // chunk) + ([draws % chunk] if draws % chunk else [])
    streams = np.random.SeedSequence(seed).spawn(len(sizes))
    for size, ss in zip(sizes, streams):
        rng = np.random.default_rng(ss)
        a, x = sampler(size, rng)
        s = np.asarray(s_of_a(a), dtype=float)
        z = basis_fn(x)
        part = _weighted_cross(z, s)
        z2 = z.multiply(z) if sp.issparse(z) else np.asarray(z) ** 2
        part2 = _weighted_cross(z2, s * s)
        if k is None:
            k = part.shape[0]
            total = np.zeros((k, k))
            second = np.zeros((k, k))
        total += part
        second += part2
    mean = total / draws
    var = np.maximum(second / draws - mean ** 2, 0.0)
    se = np.sqrt(var / draws)
    return factorize(mean, "oracle", mc_se=se, **kwargs)


def solve(gf: GramFactor, v):
    """``Sigma^{-1} v`` for a vector or a ``k x m`` block."""
    return gf.solve(v)
