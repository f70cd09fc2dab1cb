"""Influence-function U-statistics over distinct index tuples.

For order ``j`` the kernel at a distinct tuple ``(i1, ..., ij)`` is::

    (-1)^j e_b[i1]' S^{-1} (C[i3] - S) S^{-1} ... (C[ij] - S) S^{-1} e_p[i2]

with ``C[i] = s_i z_i z_i'`` and ``S`` the Gram matrix, and the statistic
averages it over all ``n!/(n-j)!`` ordered distinct tuples.

Orders 2 and 3 use closed forms that cost one pass over the rows plus a
weighted Gram accumulation. Orders up to 5 go through a generic engine that
applies Moebius inclusion-exclusion over index coincidences and evaluates
each collapsed sum as an einsum.
"""

from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass
from functools import lru_cache

import numba
import numpy as np
import scipy.sparse as sp

from .errors import BudgetExceeded, UnsupportedOrder
from .gram import GramFactor

__all__ = [
    "MAX_EXACT_ORDER",
    "KernelInputs",
    "UStatResult",
    "if22",
    "if33",
    "if_jj",
    "if22_to_mm",
    "brute_force_ifjj",
    "weighted_sum",
]

MAX_EXACT_ORDER = 5
DEFAULT_FLOP_BUDGET = 5e11
BRUTE_FORCE_GUARD = 10 ** 7


@dataclass(frozen=True)
class UStatResult:
    value: float
    order: int
    k: int
    n: int
    gram_source: str


class KernelInputs:
    """Residual rows, rank-one descriptors and the Gram factor.

    Build with :meth:`from_scalars` when ``e_b[i] = r_b[i] z_i`` and
    ``e_p[i] = r_p[i] z_i`` (both supported functionals), which enables the
    sparse fast path, or with :meth:`from_rows` for arbitrary rows.
    """

    def __init__(self, z, s, gram: GramFactor, *, rb=None, rp=None, eb=None, ep=None):
        if sp.issparse(z):
            z = sp.csr_matrix(z, dtype=float)
            z.sort_indices()
        else:
            z = np.atleast_2d(np.asarray(z, dtype=float))
        self.z = z
        self.s = np.asarray(s, dtype=float).ravel()
        self.gram = gram
        n, k = z.shape
        if len(self.s) != n:
            raise ValueError("s must have one entry per row")
        if gram.k != k:
            raise ValueError(f"Gram is {gram.k} x {gram.k} but the basis has {k} columns")
        if rb is not None:
            self.rb = np.asarray(rb, dtype=float).ravel()
            self.rp = np.asarray(rp, dtype=float).ravel()
            if len(self.rb) != n or len(self.rp) != n:
                raise ValueError("residual scalars must have one entry per row")
            self._eb = self._ep = None
        else:
            eb = np.asarray(eb, dtype=float)
            ep = np.asarray(ep, dtype=float)
            if eb.shape != (n, k) or ep.shape != (n, k):
                raise ValueError("residual rows must be n x k")
            self.rb = self.rp = None
            self._eb, self._ep = eb, ep
        self._cache: dict = {}

    @classmethod
    def from_scalars(cls, rb, rp, s, z, gram):
        return cls(z, s, gram, rb=rb, rp=rp)

    @classmethod
    def from_rows(cls, e_b, e_p, s, z, gram):
        return cls(z, s, gram, eb=e_b, ep=e_p)

    @property
    def n(self) -> int:
        return self.z.shape[0]

    @property
    def k(self) -> int:
        return self.z.shape[1]

    @property
    def scalar(self) -> bool:
        return self.rb is not None

    def dense_z(self) -> np.ndarray:
        return self.z.toarray() if sp.issparse(self.z) else self.z

    @property
    def e_b(self) -> np.ndarray:
        if self._eb is not None:
            return self._eb
        return self.rb[:, None] * self.dense_z()

    @property
    def e_p(self) -> np.ndarray:
        if self._ep is not None:
            return self._ep
        return self.rp[:, None] * self.dense_z()

    def take(self, idx) -> "KernelInputs":
        idx = np.asarray(idx)
        if self.scalar:
            return KernelInputs(self.z[idx], self.s[idx], self.gram,
                                rb=self.rb[idx], rp=self.rp[idx])
        return KernelInputs(self.z[idx], self.s[idx], self.gram,
                            eb=self._eb[idx], ep=self._ep[idx])

    def scaled(self, cb: float = 1.0, cp: float = 1.0) -> "KernelInputs":
        if self.scalar:
            return KernelInputs(self.z, self.s, self.gram, rb=cb * self.rb, rp=cp * self.rp)
        return KernelInputs(self.z, self.s, self.gram, eb=cb * self._eb, ep=cp * self._ep)

    # -- per-row quantities shared by the closed forms -------------------

    def _zmul(self, v):
        """``Z @ v``."""
        return np.asarray(self.z @ v).ravel()

    def _ztmul(self, w):
        """``Z' @ w``."""
        return np.asarray(self.z.T @ w).ravel()

    def row_terms(self):
        """``(qb, qp, dd)`` with ``qb_i = e_b,i' P z_i``, ``qp_i = z_i' P e_p,i``
        and ``dd_i = e_b,i' P e_p,i`` where ``P`` is the inverse Gram."""
        if "rows" not in self._cache:
            P = self.gram.inverse
            if self.scalar:
                h = _row_quadratic(self.z, P)
                out = (self.rb * h, self.rp * h, self.rb * self.rp * h)
            else:
                z = self.dense_z()
                ebP = self._eb @ P
                out = (np.einsum("ik,ik->i", ebP, z),
                       np.einsum("ik,ik->i", z @ P, self._ep),
                       np.einsum("ik,ik->i", ebP, self._ep))
            self._cache["rows"] = out
        return self._cache["rows"]

    def gram_of(self, w) -> np.ndarray:
        """``sum_i w_i z_i z_i'``."""
        return weighted_grams(self.z, np.asarray(w, dtype=float)[:, None])[0]


def _row_quadratic(z, P) -> np.ndarray:
    if sp.issparse(z):
        return _csr_row_quadratic(z.indptr, z.indices, z.data, P)
    return np.einsum("ik,kl,il->i", z, P, z)


@numba.njit(cache=True, nogil=True)
def _csr_row_quadratic(indptr, indices, data, P):
    n = len(indptr) - 1
    out = np.zeros(n)
    for i in range(n):
        acc = 0.0
        for a in range(indptr[i], indptr[i + 1]):
            ca = indices[a]
            va = data[a]
            for b in range(indptr[i], indptr[i + 1]):
                acc += va * P[ca, indices[b]] * data[b]
        out[i] = acc
    return out


@numba.njit(cache=True, nogil=True)
def _csr_weighted_grams(indptr, indices, data, W, k):
    n = len(indptr) - 1
    q = W.shape[1]
    # weight columns innermost so each index pair touches one cache line
    acc = np.zeros((k, k, q))
    w = np.empty(q)
    for i in range(n):
        start, stop = indptr[i], indptr[i + 1]
        nonzero = False
        for c in range(q):
            w[c] = W[i, c]
            if w[c] != 0.0:
                nonzero = True
        if not nonzero:
            continue
        for a in range(start, stop):
            da = data[a]
            ca = indices[a]
            for b in range(a, stop):
                v = da * data[b]
                cb = indices[b]
                for c in range(q):
                    acc[ca, cb, c] += w[c] * v
    out = np.empty((q, k, k))
    for c in range(q):
        for a in range(k):
            out[c, a, a] = acc[a, a, c]
            for b in range(a + 1, k):
                v = acc[a, b, c] + acc[b, a, c]
                out[c, a, b] = v
                out[c, b, a] = v
    return out


def weighted_grams(z, W) -> np.ndarray:
    """Stack of ``z' diag(W[:, c]) z`` for every column ``c`` of ``W``.

    Row indices within each CSR row must be sorted, so that the upper
    triangle is accumulated consistently.
    """
    W = np.ascontiguousarray(W, dtype=float)
    if sp.issparse(z):
        return _csr_weighted_grams(z.indptr, z.indices, z.data, W, z.shape[1])
    z = np.asarray(z, dtype=float)
    out = np.einsum("ic,ik,il->ckl", W, z, z)
    return 0.5 * (out + np.transpose(out, (0, 2, 1)))


# -- orders 2 and 3 in closed form -----------------------------------------

def _sum22(kin: KernelInputs, u1, u2) -> float:
    """``sum_{i1 != i2} u1 u2 e_b,i1' P e_p,i2``."""
    P = kin.gram.inverse
    _, _, dd = kin.row_terms()
    if kin.scalar:
        vb = kin._ztmul(u1 * kin.rb)
        vp = kin._ztmul(u2 * kin.rp)
    else:
        vb = kin._eb.T @ u1
        vp = kin._ep.T @ u2
    return float(vb @ P @ vp - np.sum(u1 * u2 * dd))


def _pkp_trace(kin: KernelInputs, w3, u12) -> float:
    """``sum_i u12_i e_b,i' P K(w3) P e_p,i`` with ``K(w) = sum_l w_l z_l z_l'``."""
    P = kin.gram.inverse
    if kin.scalar:
        Ks = weighted_grams(kin.z, np.column_stack([w3, u12 * kin.rb * kin.rp]))
        return float(np.sum((P @ Ks[0]) * (P @ Ks[1]).T))
    K = kin.gram_of(w3)
    left = (kin._eb * u12[:, None]) @ P
    right = kin._ep @ P
    return float(np.einsum("ik,kl,il->", left, K, right))


def _sum33(kin: KernelInputs, u1, u2, u3, trace=None) -> float:
    """``sum_{distinct} u1 u2 u3 e_b,i1' P (C_i3 - S) P e_p,i2`` (no sign)."""
    P = kin.gram.inverse
    qb, qp, dd = kin.row_terms()
    s = kin.s
    if kin.scalar:
        vb = kin._ztmul(u1 * kin.rb)
        vp = kin._ztmul(u2 * kin.rp)
    else:
        vb = kin._eb.T @ u1
        vp = kin._ep.T @ u2
    beta = P @ vb
    gamma = P @ vp
    zb = kin._zmul(beta)
    zg = kin._zmul(gamma)
    if kin.scalar:
        eb_gamma = kin.rb * zg
        ep_beta = kin.rp * zb
    else:
        eb_gamma = kin._eb @ gamma
        ep_beta = kin._ep @ beta
    t_sum = np.sum(u3)
    s3 = u3 * s
    full = np.sum(s3 * zb * zg) - t_sum * (vb @ gamma)
    m13 = np.sum(u3 * u1 * (s * qb * zg - eb_gamma))
    m23 = np.sum(u3 * u2 * (s * zb * qp - ep_beta))
    u12 = u1 * u2
    if trace is None:
        trace = _pkp_trace(kin, s3, u12)
    m12 = trace - t_sum * np.sum(u12 * dd)
    m123 = np.sum(u12 * u3 * (s * qb * qp - dd))
    return float(full - m12 - m13 - m23 + 2.0 * m123)


def _falling(n: int, j: int) -> float:
    return float(math.perm(n, j))


def _result(value, j, kin):
    return UStatResult(float(value), j, kin.k, kin.n, kin.gram.source)


def if22(kin: KernelInputs) -> UStatResult:
    """Second-order statistic ``sum_{i1 != i2} e_b' S^{-1} e_p / (n (n - 1))``."""
    if kin.n < 2:
        raise ValueError("if22 needs n >= 2")
    one = np.ones(kin.n)
    return _result(_sum22(kin, one, one) / _falling(kin.n, 2), 2, kin)


def if33(kin: KernelInputs) -> UStatResult:
    """Third-order statistic with the ``(-1)^3`` sign."""
    if kin.n < 3:
        raise ValueError("if33 needs n >= 3")
    one = np.ones(kin.n)
    return _result(-_sum33(kin, one, one, one) / _falling(kin.n, 3), 3, kin)


# -- generic engine ---------------------------------------------------------

def _set_partitions(items):
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in _set_partitions(rest):
        for i in range(len(part)):
            yield part[:i] + [[first] + part[i]] + part[i + 1:]
        yield [[first]] + part


@lru_cache(maxsize=None)
def _order_terms(j: int):
    """Collapsed terms for order ``j``.

    Positions are numbered 0 (b slot), 1 (p slot) and 2..j-1 (Gram slots);
    the chain visits 0, 2, 3, ..., j-1, 1. Each term is a tuple
    ``(coef, block_of_position, kept_middle_positions)``: the constrained
    full sum over block indices of the chain in which kept middles take the
    rank-one factor and the others take ``-I``.
    """
    terms = []
    middles = list(range(2, j))
    for part in _set_partitions(list(range(j))):
        mu = 1
        for blk in part:
            mu *= (-1) ** (len(blk) - 1) * math.factorial(len(blk) - 1)
        block_of = [0] * j
        for b, blk in enumerate(part):
            for pos in blk:
                block_of[pos] = b
        for r in range(len(middles) + 1):
            for kept in itertools.combinations(middles, r):
                sign = (-1) ** (len(middles) - r)
                terms.append((mu * sign, tuple(block_of), tuple(kept), len(part)))
    return tuple(terms)


_LETTERS = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ"


def _term_einsum(term, weights, vecs, rowdot):
    """Operands and subscripts for one collapsed term.

    ``vecs`` maps 'b', 'w', 'p' to whitened ``n x k`` arrays. ``rowdot``
    caches per-row inner products between two of them.
    """
    coef, block_of, kept, nblocks = term
    unit = _LETTERS[:nblocks]
    pool = iter(_LETTERS[nblocks:])
    n = vecs["w"].shape[0]
    node = [np.ones(n) for _ in range(nblocks)]
    for pos, blk in enumerate(block_of):
        node[blk] = node[blk] * weights[pos]
    for pos in kept:
        node[block_of[pos]] = node[block_of[pos]] * weights["s"]
    chain = [("b", block_of[0])]
    for pos in kept:
        chain.append(("w", block_of[pos]))
    chain.append(("p", block_of[1]))
    subs, ops = [], []
    for (t1, v1), (t2, v2) in zip(chain[:-1], chain[1:]):
        if v1 == v2:
            key = "".join(sorted((t1, t2)))
            node[v1] = node[v1] * rowdot[key]
        else:
            c = next(pool)
            subs += [unit[v1] + c, unit[v2] + c]
            ops += [vecs[t1], vecs[t2]]
    for b in range(nblocks):
        subs.append(unit[b])
        ops.append(node[b])
    return coef, ",".join(subs) + "->", ops


def _whitened(kin: KernelInputs):
    key = "whitened"
    if key not in kin._cache:
        L = kin.gram.lower
        import scipy.linalg as sla
        w = sla.solve_triangular(L, kin.dense_z().T, lower=True).T
        if kin.scalar:
            b = kin.rb[:, None] * w
            p = kin.rp[:, None] * w
        else:
            b = sla.solve_triangular(L, kin._eb.T, lower=True).T
            p = sla.solve_triangular(L, kin._ep.T, lower=True).T
        vecs = {"b": b, "w": w, "p": p}
        rowdot = {}
        for t1, t2 in itertools.combinations_with_replacement("bpw", 2):
            rowdot["".join(sorted((t1, t2)))] = np.einsum("ik,ik->i", vecs[t1], vecs[t2])
        kin._cache[key] = (vecs, rowdot)
    return kin._cache[key]


_FLOPS = re.compile(r"Optimized FLOP count:\s*([0-9.eE+]+)")


def _generic_sum(j: int, kin: KernelInputs, slot_weights, budget: float) -> float:
    """Distinct-tuple sum (no sign) for any order ``2 <= j <= MAX_EXACT_ORDER``."""
    vecs, rowdot = _whitened(kin)
    weights = {pos: np.asarray(w, dtype=float) for pos, w in enumerate(slot_weights)}
    weights["s"] = kin.s
    mem = max(4 * kin.n * kin.k, 1 << 22)
    plans = []
    flops = 0.0
    for term in _order_terms(j):
        coef, subs, ops = _term_einsum(term, weights, vecs, rowdot)
        path, info = np.einsum_path(subs, *ops, optimize=("greedy", mem))
        match = _FLOPS.search(info)
        flops += float(match.group(1)) if match else 0.0
        plans.append((coef, subs, ops, path))
    if flops > budget:
        raise BudgetExceeded(f"order-{j} statistic needs ~{flops:.3g} flops (budget {budget:.3g})")
    total = 0.0
    for coef, subs, ops, path in plans:
        total += coef * float(np.einsum(subs, *ops, optimize=path))
    return total


def weighted_sum(j: int, kin: KernelInputs, slot_weights=None, *,
                 budget: float = DEFAULT_FLOP_BUDGET, engine: str = "auto") -> float:
    """Distinct-tuple sum of the order-``j`` kernel without sign or scaling.

    ``slot_weights`` holds one length-``n`` vector per slot (b, p, then the
    Gram slots); ``None`` means all ones.
    """
    if not 2 <= j <= MAX_EXACT_ORDER:
        raise UnsupportedOrder(f"order {j} outside 2..{MAX_EXACT_ORDER}")
    if kin.n < j:
        raise ValueError(f"order {j} needs n >= {j}")
    if slot_weights is None:
        slot_weights = [np.ones(kin.n)] * j
    if len(slot_weights) != j:
        raise ValueError("need one weight vector per slot")
    if engine not in ("auto", "closed", "generic"):
        raise ValueError(f"unknown engine {engine!r}")
    if engine != "generic" and j == 2:
        return _sum22(kin, *slot_weights)
    if engine != "generic" and j == 3:
        return _sum33(kin, *slot_weights)
    if engine == "closed":
        raise UnsupportedOrder("closed forms exist only for orders 2 and 3")
    return _generic_sum(j, kin, slot_weights, budget)


def if_jj(j: int, kin: KernelInputs, *, max_order: int = MAX_EXACT_ORDER,
          budget: float = DEFAULT_FLOP_BUDGET, engine: str = "auto") -> UStatResult:
    """Order-``j`` statistic ``(-1)^j (n-j)!/n! * sum over distinct tuples``."""
    if j < 2 or j > min(max_order, MAX_EXACT_ORDER):
        raise UnsupportedOrder(f"order {j} outside 2..{min(max_order, MAX_EXACT_ORDER)}")
    total = weighted_sum(j, kin, budget=budget, engine=engine)
    return _result((-1) ** j * total / _falling(kin.n, j), j, kin)


def if22_to_mm(m: int, kin: KernelInputs, **kwargs) -> UStatResult:
    """Sum of ``if_jj`` for ``j = 2..m``."""
    if m < 2:
        raise UnsupportedOrder("m must be at least 2")
    value = 0.0
    for j in range(2, m + 1):
        value += if_jj(j, kin, **kwargs).value
    return _result(value, m, kin)


# -- brute-force oracle ------------------------------------------------------

@numba.njit(cache=True)
def _brute(j, eb, ep, z, s, Sigma, P):
    n, k = z.shape
    idx = np.zeros(j, dtype=np.int64)
    total = 0.0
    vec = np.zeros(k)
    tmp = np.zeros(k)
    # odometer over ordered tuples; skip any with repeated indices
    count = n ** j
    for code in range(count):
        c = code
        for pos in range(j):
            idx[pos] = c % n
            c //= n
        distinct = True
        for a in range(j):
            for b in range(a + 1, j):
                if idx[a] == idx[b]:
                    distinct = False
        if not distinct:
            continue
        # vec = P e_p[i2]
        for r in range(k):
            acc = 0.0
            for c2 in range(k):
                acc += P[r, c2] * ep[idx[1], c2]
            vec[r] = acc
        # apply slots j-1, ..., 2 from the right: vec <- P (C - Sigma) vec
        for pos in range(j - 1, 1, -1):
            i = idx[pos]
            zv = 0.0
            for c2 in range(k):
                zv += z[i, c2] * vec[c2]
            for r in range(k):
                acc = s[i] * z[i, r] * zv
                for c2 in range(k):
                    acc -= Sigma[r, c2] * vec[c2]
                tmp[r] = acc
            for r in range(k):
                acc = 0.0
                for c2 in range(k):
                    acc += P[r, c2] * tmp[c2]
                vec[r] = acc
        val = 0.0
        for r in range(k):
            val += eb[idx[0], r] * vec[r]
        total += val
    return total


def brute_force_ifjj(j: int, kin: KernelInputs) -> float:
    """Literal loop over all ordered distinct ``j``-tuples (test oracle)."""
    if j < 2:
        raise UnsupportedOrder("order must be at least 2")
    if kin.n < j:
        raise ValueError(f"order {j} needs n >= {j}")
    if kin.n ** j > BRUTE_FORCE_GUARD:
        raise BudgetExceeded(f"n^j = {kin.n ** j} exceeds the brute-force guard")
    Sigma = kin.gram.matrix
    P = np.linalg.inv(Sigma)
    total = _brute(j, np.ascontiguousarray(kin.e_b), np.ascontiguousarray(kin.e_p),
                   np.ascontiguousarray(kin.dense_z()), kin.s, Sigma, P)
    return (-1) ** j * total / _falling(kin.n, j)
