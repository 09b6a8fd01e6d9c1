"""Small dense linear-algebra helpers used by the prototype and alignment code.

Matrices are plain float64 numpy arrays in row-major order; latent
dimensions stay small (<= 256) so no sparse or blocked paths exist.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidDimension, NotPositiveDefinite

__all__ = ["cholesky", "sample_unit_sphere", "sample_gaussian", "sample_gaussian_batch"]


def cholesky(a: np.ndarray) -> np.ndarray:
    """Lower-triangular factor L with L @ L.T == a.

    Raises NotPositiveDefinite instead of silently regularizing; adding
    jitter is the caller's decision (see prototypes.regularize_covariance).
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidDimension(f"expected a square matrix, got shape {a.shape}")
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from exc


def sample_unit_sphere(dim: int, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Uniform draw(s) from the unit sphere in R^dim (Gaussian, normalized).

    Returns shape (dim,) when size is None, else (size, dim).
    """
    if dim < 1:
        raise InvalidDimension(f"sphere dimension must be >= 1, got {dim}")
    n = 1 if size is None else size
    v = rng.standard_normal((n, dim))
    norms = np.linalg.norm(v, axis=1)
    while (norms == 0.0).any():  # essentially unreachable, kept for correctness
        bad = norms == 0.0
        v[bad] = rng.standard_normal((int(bad.sum()), dim))
        norms = np.linalg.norm(v, axis=1)
    out = v / norms[:, None]
    return out[0] if size is None else out


def sample_gaussian(mu: np.ndarray, chol: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One draw mu + L z with z standard normal and L lower-triangular."""
    mu = np.asarray(mu, dtype=np.float64)
    chol = np.asarray(chol, dtype=np.float64)
    if chol.ndim != 2 or chol.shape[0] != chol.shape[1] or mu.shape != (chol.shape[0],):
        raise InvalidDimension(
            f"mean of shape {mu.shape} does not match factor of shape {chol.shape}"
        )
    return mu + chol @ rng.standard_normal(mu.shape[0])


def sample_gaussian_batch(
    mu: np.ndarray, chol: np.ndarray, n: int, rng: np.random.Generator
) -> np.ndarray:
    """n draws from N(mu, L L^T), shape (n, dim)."""
    mu = np.asarray(mu, dtype=np.float64)
    chol = np.asarray(chol, dtype=np.float64)
    if chol.ndim != 2 or chol.shape[0] != chol.shape[1] or mu.shape != (chol.shape[0],):
        raise InvalidDimension(
            f"mean of shape {mu.shape} does not match factor of shape {chol.shape}"
        )
    z = rng.standard_normal((n, mu.shape[0]))
    return mu + z @ chol.T
