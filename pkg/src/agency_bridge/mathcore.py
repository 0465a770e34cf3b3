"""Finite-probability and information kernels.

Every quantity is measured in nats. Zero-probability entries follow the
convention ``0 * ln 0 = 0`` (and ``0 * ln(0 / q) = 0``).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np
from numpy.typing import ArrayLike

from .errors import AbsoluteContinuityViolation, DegenerateNormalizer, InvalidDistribution

NORMALIZATION_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class CategoricalDist:
    """Immutable normalized probability vector.

    The input is checked for nonnegativity and for summing to one within
    ``NORMALIZATION_TOL``, then renormalized exactly once.
    """

    probs: np.ndarray

    def __post_init__(self):
        p = np.array(self.probs, dtype=float).reshape(-1)
        if p.size == 0:
            raise InvalidDistribution("distribution must have at least one entry")
        if not np.all(np.isfinite(p)):
            raise InvalidDistribution(f"non-finite probabilities: {p}")
        if np.any(p < 0):
            raise InvalidDistribution(f"negative probabilities: {p}")
        total = p.sum()
        if abs(total - 1.0) > NORMALIZATION_TOL:
            raise InvalidDistribution(f"probabilities sum to {total!r}, not 1")
        p = p / total
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @property
    def support_size(self) -> int:
        return int(self.probs.size)

    def __len__(self) -> int:
        return self.support_size

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.probs, dtype=dtype)

    def __eq__(self, other):
        if not isinstance(other, CategoricalDist):
            return NotImplemented
        return np.array_equal(self.probs, other.probs)

    __hash__ = None

    def __repr__(self) -> str:
        return f"CategoricalDist({np.array2string(self.probs, precision=6)})"

    @classmethod
    def uniform(cls, n: int) -> "CategoricalDist":
        return cls(np.full(n, 1.0 / n))

    @classmethod
    def delta(cls, n: int, k: int) -> "CategoricalDist":
        p = np.zeros(n)
        p[k] = 1.0
        return cls(p)


DistLike = Union[CategoricalDist, ArrayLike]


def as_probs(p: DistLike) -> np.ndarray:
    """Return the probability array of ``p``, validating raw array input."""
    if isinstance(p, CategoricalDist):
        return p.probs
    return CategoricalDist(p).probs


def entropy(p: DistLike) -> float:
    """Shannon entropy in nats."""
    p = as_probs(p)
    nz = p > 0
    return float(-np.sum(p[nz] * np.log(p[nz])))


def _check_same_support(p: np.ndarray, q: np.ndarray) -> None:
    if p.shape != q.shape:
        raise ValueError(f"support sizes differ: {p.size} vs {q.size}")


def expected_log(p: DistLike, q: DistLike) -> float:
    """``sum_i p_i ln q_i`` over the support of ``p`` (negative cross-entropy)."""
    p, q = as_probs(p), as_probs(q)
    _check_same_support(p, q)
    nz = p > 0
    if np.any(q[nz] == 0):
        bad = np.flatnonzero(nz & (q == 0)).tolist()
        raise AbsoluteContinuityViolation(f"reference has zero mass at indices {bad}")
    return float(np.sum(p[nz] * np.log(q[nz])))


def kl_divergence(p: DistLike, q: DistLike) -> float:
    """``D_KL[p || q]`` in nats.

    Raises
    ------
    AbsoluteContinuityViolation
        If some ``p_i > 0`` has ``q_i == 0``.
    """
    p, q = as_probs(p), as_probs(q)
    _check_same_support(p, q)
    nz = p > 0
    if np.any(q[nz] == 0):
        bad = np.flatnonzero(nz & (q == 0)).tolist()
        raise AbsoluteContinuityViolation(f"reference has zero mass at indices {bad}")
    d = float(np.sum(p[nz] * (np.log(p[nz]) - np.log(q[nz]))))
    # rounding can leave tiny negatives for p == q
    return max(d, 0.0)


def expectation(p: DistLike, values: ArrayLike) -> float:
    p = as_probs(p)
    v = np.asarray(values, dtype=float).reshape(-1)
    if v.shape != p.shape:
        raise ValueError(f"length mismatch: {p.size} probabilities, {v.size} values")
    nz = p > 0
    return float(np.dot(p[nz], v[nz]))


def _gibbs_log_weights(prior: np.ndarray, potentials: ArrayLike, beta: float) -> np.ndarray:
    u = np.asarray(potentials, dtype=float).reshape(-1)
    if u.shape != prior.shape:
        raise ValueError(f"{u.size} potentials for a support of {prior.size}")
    if beta < 0:
        raise ValueError(f"beta must be nonnegative, got {beta}")
    logw = np.full(prior.shape, -np.inf)
    nz = prior > 0
    logw[nz] = np.log(prior[nz]) + beta * u[nz]
    if not np.any(np.isfinite(logw)) or np.any(np.isnan(logw)) or np.any(logw == np.inf):
        raise DegenerateNormalizer(f"Gibbs weights are degenerate: {logw}")
    return logw


def gibbs_with_log_partition(
    prior: ArrayLike, potentials: ArrayLike, beta: float
) -> tuple[CategoricalDist, float]:
    """Gibbs reweighting ``prior_i * exp(beta * u_i) / Z`` and ``ln Z``.

    ``prior`` may be any nonnegative weight vector (not necessarily
    normalized); ``ln Z`` is then ``ln sum_i prior_i exp(beta * u_i)`` for those
    weights, which lets callers use the counting measure (all ones).
    """
    w = prior.probs if isinstance(prior, CategoricalDist) else np.asarray(prior, dtype=float).reshape(-1)
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise InvalidDistribution(f"prior weights must be finite and nonnegative: {w}")
    logw = _gibbs_log_weights(w, potentials, beta)
    m = logw[np.isfinite(logw)].max()
    shifted = np.exp(logw - m)
    total = shifted.sum()
    if not (total > 0 and np.isfinite(total)):
        raise DegenerateNormalizer("Gibbs normalizer is zero or non-finite")
    return CategoricalDist(shifted / total), float(m + np.log(total))


def gibbs(prior: DistLike, potentials: ArrayLike, beta: float) -> CategoricalDist:
    """Gibbs distribution ``prior * exp(beta * potentials)``, normalized.

    Computed in log space so that ``|beta * potential|`` up to several hundred
    is safe. ``beta = 0`` returns the prior.
    """
    return gibbs_with_log_partition(as_probs(prior), potentials, beta)[0]


def log_partition(prior: DistLike, potentials: ArrayLike, beta: float) -> float:
    """``ln sum_i prior_i exp(beta * u_i)``."""
    return gibbs_with_log_partition(as_probs(prior), potentials, beta)[1]


def softmax(x: ArrayLike) -> np.ndarray:
    """Plain softmax, used as a cross-check for uniform-prior Gibbs weights."""
    x = np.asarray(x, dtype=float)
    z = np.exp(x - x.max())
    return z / z.sum()
