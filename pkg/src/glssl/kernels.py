"""Hot inner kernels for the pairwise feature-difference metric.

The metric matrix is M(i,j) = exp(max(0, sum_d alpha_d * |x_id - x_jd|)),
an O(N^2 D) computation that dominates training whenever the graph mask is
dense.  The kernels here are JIT-compiled with numba when it is importable
and fall back to a chunked numpy implementation otherwise.

Determinism contract: every output element is produced by exactly one
thread, and all cross-thread reductions are finished off by numpy in a
fixed order, so results are bitwise identical regardless of thread count.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba
    from numba import njit, prange

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only on stripped installs
    numba = None
    HAVE_NUMBA = False

THREADS_ENV_VAR = "GLSSL_THREADS"


def apply_thread_cap(n: int | None = None) -> int | None:
    """Cap kernel parallelism at ``n`` threads (or $GLSSL_THREADS if unset)."""
    if n is None:
        raw = os.environ.get(THREADS_ENV_VAR)
        if not raw:
            return None
        n = int(raw)
    if not HAVE_NUMBA:
        return None
    n = max(1, min(int(n), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n)
    return n


if HAVE_NUMBA:

    @njit(parallel=True, fastmath=True, cache=True)
    def _metric_forward_nb(x, alpha):
        n, d = x.shape
        m = np.empty((n, n))
        gate = np.zeros((n, n), dtype=np.uint8)
        # interleave row pairs (t, n-1-t) so static chunking stays balanced
        # while only the upper triangle is computed
        for t in prange(n):
            if t % 2 == 0:
                i = t // 2
            else:
                i = n - 1 - t // 2
            for j in range(i, n):
                s = 0.0
                for k in range(d):
                    s += alpha[k] * abs(x[i, k] - x[j, k])
                if s > 0.0:
                    e = np.exp(s)
                    m[i, j] = e
                    m[j, i] = e
                    gate[i, j] = 1
                    gate[j, i] = 1
                else:
                    m[i, j] = 1.0
                    m[j, i] = 1.0
        return m, gate

    @njit(parallel=True, fastmath=True, cache=True)
    def _metric_backward_nb(x, alpha, u):
        # u must already be symmetrized: u = t + t.T for the per-entry
        # upstream factor t; see layers._metric_grads for the algebra.
        n, d = x.shape
        dx = np.zeros((n, d))
        acc = np.zeros((n, d))
        for i in prange(n):
            for j in range(n):
                w = u[i, j]
                if w != 0.0:
                    for k in range(d):
                        delta = x[i, k] - x[j, k]
                        if delta > 0.0:
                            dx[i, k] += w * alpha[k]
                            acc[i, k] += w * delta
                        elif delta < 0.0:
                            dx[i, k] -= w * alpha[k]
                            acc[i, k] -= w * delta
        return dx, acc


def _metric_forward_np(x, alpha):
    n, d = x.shape
    s = np.zeros((n, n))
    for k in range(d):
        col = x[:, k]
        s += alpha[k] * np.abs(col[:, None] - col[None, :])
    gate = (s > 0.0).astype(np.uint8)
    m = np.where(gate, np.exp(np.maximum(s, 0.0)), 1.0)
    return m, gate


def _metric_backward_np(x, alpha, u):
    n, d = x.shape
    dx = np.empty((n, d))
    acc = np.empty((n, d))
    for k in range(d):
        col = x[:, k]
        delta = col[:, None] - col[None, :]
        sign = np.sign(delta)
        dx[:, k] = alpha[k] * np.einsum("ij,ij->i", u, sign)
        acc[:, k] = np.einsum("ij,ij->i", u, np.abs(delta))
    return dx, acc


def metric_forward(x: np.ndarray, alpha: np.ndarray):
    """Return (M, gate) with M(i,j) = exp(relu(alpha . |x_i - x_j|)).

    ``gate`` is 1 exactly where the relu argument was strictly positive,
    which is the information the backward pass needs.
    """
    x = np.ascontiguousarray(x)
    alpha = np.ascontiguousarray(alpha)
    if HAVE_NUMBA:
        return _metric_forward_nb(x, alpha)
    return _metric_forward_np(x, alpha)


def metric_backward(x: np.ndarray, alpha: np.ndarray, u: np.ndarray):
    """Return (dx, dalpha) given the symmetrized upstream factor ``u``.

    dx[i,d]    = alpha[d] * sum_j u[i,j] * sign(x[i,d] - x[j,d])
    dalpha[d]  = 0.5 * sum_ij u[i,j] * |x[i,d] - x[j,d]|
    """
    x = np.ascontiguousarray(x)
    alpha = np.ascontiguousarray(alpha)
    u = np.ascontiguousarray(u)
    if HAVE_NUMBA:
        dx, acc = _metric_backward_nb(x, alpha, u)
    else:
        dx, acc = _metric_backward_np(x, alpha, u)
    return dx, 0.5 * acc.sum(axis=0)
