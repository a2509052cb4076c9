"""Two-dimensional projection of node representations by the top two
principal components, computed with deflated power iteration.

Deterministic by construction: fixed start vector, fixed sign convention
(largest-magnitude component positive), fixed iteration order.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError


def _power_iteration(cov: np.ndarray, tol: float, max_iter: int) -> tuple[np.ndarray, float]:
    k = cov.shape[0]
    v = np.full(k, 1.0 / np.sqrt(k))
    lam = 0.0
    for _ in range(max_iter):
        w = cov @ v
        norm = np.linalg.norm(w)
        if norm < tol:
            return np.zeros(k), 0.0
        w /= norm
        if np.linalg.norm(w - v) < tol or np.linalg.norm(w + v) < tol:
            v = w
            lam = norm
            break
        v = w
        lam = norm
    pivot = np.argmax(np.abs(v))
    if v[pivot] < 0:
        v = -v
    return v, float(lam)


def top2_components(data: np.ndarray, tol: float = 1e-9, max_iter: int = 10000):
    """Return (coords N x 2, components 2 x K, mean K) for centered data.

    Rank-deficient inputs produce zero coordinates on the missing axes.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] < 1:
        raise ConfigError(f"projection needs an N x K matrix, got shape {data.shape}")
    mean = data.mean(axis=0)
    centered = data - mean
    cov = centered.T @ centered
    v1, lam1 = _power_iteration(cov, tol, max_iter)
    cov2 = cov - lam1 * np.outer(v1, v1)
    v2, _ = _power_iteration(cov2, tol, max_iter)
    # re-orthogonalize against v1 to shed deflation round-off
    v2 = v2 - (v2 @ v1) * v1
    n2 = np.linalg.norm(v2)
    if n2 > tol:
        v2 = v2 / n2
    else:
        v2 = np.zeros_like(v2)
    comps = np.stack([v1, v2])
    return centered @ comps.T, comps, mean
