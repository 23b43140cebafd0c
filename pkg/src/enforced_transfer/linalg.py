"""Empirical statistics over critique vectors.

Vectors are 1-D float64 arrays, matrices 2-D. Sample collections are either a
list of vectors or an ``(n, d)`` array.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

DEFAULT_RIDGE = 1e-6
SYMMETRY_TOL = 1e-9


class DimensionError(ValueError):
    pass


def _as_samples(samples) -> np.ndarray:
    if isinstance(samples, np.ndarray):
        arr = samples
    else:
        samples = list(samples)
        if not samples:
            raise ValueError("no samples")
        dims = {np.shape(s) for s in samples}
        if len(dims) > 1:
            raise DimensionError("dimension mismatch")
        arr = np.asarray(samples)
    if arr.ndim != 2:
        raise DimensionError("dimension mismatch")
    if arr.shape[0] == 0:
        raise ValueError("no samples")
    arr = arr.astype(np.float64, copy=False)
    if not np.all(np.isfinite(arr)):
        raise ValueError("non-finite sample values")
    return arr


@dataclass(frozen=True)
class ScalarStats:
    mu: float
    sigma: float

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ValueError(f"sigma must be non-negative, got {self.sigma}")


@dataclass(frozen=True, eq=False)
class GaussianStats:
    mean: np.ndarray
    covariance: np.ndarray
    precision: np.ndarray
    ridge: float = DEFAULT_RIDGE

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def __eq__(self, other):
        if not isinstance(other, GaussianStats):
            return NotImplemented
        return (
            self.ridge == other.ridge
            and np.array_equal(self.mean, other.mean)
            and np.array_equal(self.covariance, other.covariance)
            and np.array_equal(self.precision, other.precision)
        )


def empirical_mean(samples) -> np.ndarray:
    """Arithmetic mean with 1/N scaling."""
    x = _as_samples(samples)
    return x.sum(axis=0) / x.shape[0]


def empirical_covariance(samples, mean) -> np.ndarray:
    """Population covariance (1/N) around ``mean``."""
    x = _as_samples(samples)
    mu = np.asarray(mean, dtype=np.float64)
    if mu.shape != (x.shape[1],):
        raise DimensionError("dimension mismatch")
    centered = x - mu
    cov = centered.T @ centered / x.shape[0]
    # matmul rounding can leave ~1ulp asymmetry
    return 0.5 * (cov + cov.T)


def regularized_inverse(m, ridge: float = DEFAULT_RIDGE) -> np.ndarray:
    """Inverse of ``m + ridge * trace(m)/d * I`` through a Cholesky factor."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {m.shape}")
    if not np.allclose(m, m.T, rtol=0.0, atol=SYMMETRY_TOL):
        raise ValueError("matrix is not symmetric")
    if ridge < 0:
        raise ValueError("ridge must be non-negative")
    d = m.shape[0]
    shift = ridge * np.trace(m) / d
    a = m + shift * np.eye(d)
    try:
        chol = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("not positive definite") from exc
    eye = np.eye(d)
    # solve L L^T X = I with two triangular solves
    y = solve_triangular(chol, eye, lower=True)
    inv = solve_triangular(chol.T, y, lower=False)
    inv = 0.5 * (inv + inv.T)
    if not np.all(np.isfinite(inv)):
        raise np.linalg.LinAlgError("not positive definite")
    return inv


def fit_gaussian(samples, ridge: float = DEFAULT_RIDGE) -> GaussianStats:
    mu = empirical_mean(samples)
    cov = empirical_covariance(samples, mu)
    return GaussianStats(mu, cov, regularized_inverse(cov, ridge), ridge)


def mahalanobis(x, stats: GaussianStats) -> float:
    """Squared Mahalanobis distance (no square root)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != stats.mean.shape:
        raise DimensionError(
            f"dimension mismatch: got {x.shape}, expected {stats.mean.shape}"
        )
    diff = x - stats.mean
    return max(float(diff @ stats.precision @ diff), 0.0)


def mahalanobis_batch(xs, stats: GaussianStats) -> np.ndarray:
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 2 or xs.shape[1] != stats.dim:
        raise DimensionError(
            f"dimension mismatch: got {xs.shape}, expected (n, {stats.dim})"
        )
    diff = xs - stats.mean
    return np.maximum(np.einsum("ij,jk,ik->i", diff, stats.precision, diff), 0.0)


def scalar_stats(values) -> ScalarStats:
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValueError("no values")
    mu = v.sum() / v.size
    sigma = np.sqrt(np.sum((v - mu) ** 2) / v.size)
    return ScalarStats(float(mu), float(sigma))
