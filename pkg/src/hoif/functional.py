"""Doubly-robust functionals and their per-unit influence-function pieces."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from ._validation import as_vector, check_same_length

__all__ = [
    "FunctionalKind",
    "FunctionalSpec",
    "Units",
    "NuisancePredictions",
    "if1_values",
    "h_values",
    "residual_scalars",
    "residual_rows",
]


class FunctionalKind(str, enum.Enum):
    NEG_COUNTERFACTUAL_MEAN = "neg_counterfactual_mean"
    EXPECTED_CONDITIONAL_COVARIANCE = "expected_conditional_covariance"


@dataclass(frozen=True)
class FunctionalSpec:
    """Which functional to target.

    ``NEG_COUNTERFACTUAL_MEAN`` is minus the mean outcome had everyone
    received ``treatment_level``; its bilinear weight is ``S = A`` and ``p``
    is the inverse propensity. ``EXPECTED_CONDITIONAL_COVARIANCE`` is
    ``E[(Y - E[Y|X]) (A - E[A|X])]`` with ``S = 1``.
    """

    kind: FunctionalKind = FunctionalKind.NEG_COUNTERFACTUAL_MEAN
    treatment_level: int = 1

    def __post_init__(self):
        object.__setattr__(self, "kind", FunctionalKind(self.kind))
        if self.treatment_level not in (0, 1):
            raise ValueError("treatment_level must be 0 or 1")

    @property
    def is_ncm(self) -> bool:
        return self.kind is FunctionalKind.NEG_COUNTERFACTUAL_MEAN

    def arm(self, a: np.ndarray) -> np.ndarray:
        """Exposure as seen by the functional (``1 - A`` for level 0)."""
        a = np.asarray(a, dtype=float)
        if self.is_ncm:
            if not np.all((a == 0.0) | (a == 1.0)):
                raise ValueError("exposure must be binary for the counterfactual mean")
            return a if self.treatment_level == 1 else 1.0 - a
        return a

    def s_bp(self, a: np.ndarray) -> np.ndarray:
        """Per-unit bilinear weight ``S``."""
        if self.is_ncm:
            return self.arm(a)
        return np.ones(np.shape(a), dtype=float)


@dataclass(frozen=True)
class Units:
    """A sample of ``(y, a, x)`` observations with ``x`` in ``[0, 1]^d``."""

    y: np.ndarray
    a: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        y = as_vector(self.y, "y")
        a = as_vector(self.a, "a")
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        if x.ndim != 2:
            raise ValueError("x must be a 2-d array")
        check_same_length(y=y, a=a, x=x)
        if not np.all(np.isfinite(x)):
            raise ValueError("x contains non-finite values")
        if x.size and (x.min() < 0.0 or x.max() > 1.0):
            raise ValueError("x coordinates must lie in [0, 1]")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "x", x)

    def __len__(self) -> int:
        return len(self.y)

    @property
    def d(self) -> int:
        return self.x.shape[1]

    def take(self, idx) -> "Units":
        return Units(self.y[idx], self.a[idx], self.x[idx])


@dataclass(frozen=True)
class NuisancePredictions:
    bhat: np.ndarray
    phat: np.ndarray

    def __post_init__(self):
        b = as_vector(self.bhat, "bhat")
        p = as_vector(self.phat, "phat")
        check_same_length(bhat=b, phat=p)
        object.__setattr__(self, "bhat", b)
        object.__setattr__(self, "phat", p)

    def __len__(self) -> int:
        return len(self.bhat)

    def take(self, idx) -> "NuisancePredictions":
        return NuisancePredictions(self.bhat[idx], self.phat[idx])


def _prepare(spec: FunctionalSpec, units: Units, fit: NuisancePredictions):
    if len(units) != len(fit):
        raise ValueError(f"{len(units)} units but {len(fit)} nuisance predictions")
    a = spec.arm(units.a)
    if spec.is_ncm and np.any(fit.phat[a == 1.0] <= 0.0):
        raise ValueError("inverse-propensity predictions must be positive")
    return units.y, a, fit.bhat, fit.phat


def h_values(spec: FunctionalSpec, units: Units, fit: NuisancePredictions) -> np.ndarray:
    """Per-unit ``H(bhat, phat)``; its sample mean is the DML estimate."""
    y, a, b, p = _prepare(spec, units, fit)
    if spec.is_ncm:
        return a * b * p - b - a * y * p
    return b * p - a * b - y * p + a * y


def if1_values(spec: FunctionalSpec, units: Units, fit: NuisancePredictions,
               psi: float = 0.0) -> np.ndarray:
    """First-order influence values ``H_i - psi``."""
    return h_values(spec, units, fit) - float(psi)


def residual_scalars(spec: FunctionalSpec, units: Units, fit: NuisancePredictions):
    """Scalars ``(r_b, r_p, S)`` such that ``e_b,i = r_b,i z_i`` and
    ``e_p,i = r_p,i z_i`` for both supported functionals."""
    y, a, b, p = _prepare(spec, units, fit)
    if spec.is_ncm:
        return a * (b - y), a * p - 1.0, a
    return b - y, p - a, np.ones_like(a)


def residual_rows(spec: FunctionalSpec, units: Units, fit: NuisancePredictions, basis):
    """The ``n x k`` residual rows ``(e_b, e_p)``."""
    basis = np.asarray(basis.toarray() if hasattr(basis, "toarray") else basis, dtype=float)
    if basis.ndim != 2 or basis.shape[0] != len(units):
        raise ValueError("basis rows must align with units")
    rb, rp, _ = residual_scalars(spec, units, fit)
    return rb[:, None] * basis, rp[:, None] * basis
