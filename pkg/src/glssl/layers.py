"""Network layers: linear projection, masked metric graph learning, graph
convolution with degree renormalization, neighborhood attention, and the
fusion head.

The three N x N producing layers are fused tape ops with hand-written
backward rules.  Fusing keeps one output matrix per layer alive instead of
a chain of elementwise intermediates, which is what makes training at a
few thousand nodes fit in memory.  Tests verify each fused rule against
double-loop scalar oracles and central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import autodiff as ad
from . import kernels
from .autodiff import Tensor
from .errors import DegenerateDegreeError, DegenerateRowError, ShapeError
from .graph_prior import GraphPrior


@dataclass
class LayerParams:
    """All trainable symbols of the full network.

    Variants that drop a layer leave the corresponding field as None.
    Output dimensions of the convolution and both attention layers all
    equal the class count.
    """

    p: Tensor | None = None        # input projection, D x D0
    alpha0: Tensor | None = None   # first metric weight vector, D0 x 1
    w0: Tensor | None = None       # first convolution, D0 x D1
    alpha1: Tensor | None = None   # second metric weight vector, D1 x 1
    w1: Tensor | None = None       # second convolution, D1 x C
    w3: Tensor | None = None       # first attention transform, C x C
    gamma3: Tensor | None = None   # first attention aggregation, 2C x 1
    w4: Tensor | None = None       # second attention transform, C x C
    gamma4: Tensor | None = None   # second attention aggregation, 2C x 1
    eta: Tensor | None = None      # fusion coefficients, 3 x 1

    def named(self):
        for f in fields(self):
            t = getattr(self, f.name)
            if t is not None:
                yield f.name, t


def linear_projection(x: Tensor, p: Tensor) -> Tensor:
    """Bare dimension-reducing product X P, no bias, no activation."""
    return ad.matmul(x, p)


def graph_learning(x: Tensor, alpha: Tensor, prior: GraphPrior) -> Tensor:
    """Row-stochastic learned adjacency masked by the prior.

    A(i,j) = prior(i,j) * M(i,j) / sum_k prior(i,k) * M(i,k) with
    M(i,j) = exp(relu(alpha . |x_i - x_j|)).  Gradients flow into x and
    alpha; the prior is a constant mask.  Off-support output entries are
    exactly zero, and support entries are positive (M >= 1 everywhere),
    so the self-loops contributed by build_prior keep every denominator
    strictly positive.
    """
    if prior.n != x.rows:
        raise ShapeError(f"graph_learning: prior has {prior.n} nodes, features {x.rows}")
    if alpha.shape != (x.cols, 1):
        raise ShapeError(
            f"graph_learning: alpha must be {x.cols}x1 for features {x.shape}, got {alpha.shape}"
        )
    if prior.mode == "ones":
        return _learned_adjacency_dense(x, alpha)
    return _learned_adjacency_masked(x, alpha, prior)


def _learned_adjacency_dense(x: Tensor, alpha: Tensor) -> Tensor:
    avec = alpha.data[:, 0]
    m, gate = kernels.metric_forward(x.data, avec)
    r = m.sum(axis=1)  # >= N since every M entry is >= 1
    a_arr = m
    a_arr /= r[:, None]

    def bw(g: np.ndarray):
        c = np.einsum("ij,ij->i", g, a_arr)
        t = g - c[:, None]
        t *= a_arr
        t *= gate
        u = t + t.T
        dx, dalpha = kernels.metric_backward(x.data, avec, u)
        gx = dx if x.requires_grad else None
        ga = dalpha[:, None] if alpha.requires_grad else None
        return gx, ga

    return ad.record(a_arr, (x, alpha), bw)


def _learned_adjacency_masked(x: Tensor, alpha: Tensor, prior: GraphPrior) -> Tensor:
    rows, cols = prior.rows, prior.cols
    n = prior.n
    avec = alpha.data[:, 0]
    s = np.abs(x.data[rows] - x.data[cols]) @ avec
    gate = s > 0.0
    m = np.where(gate, np.exp(np.where(gate, s, 0.0)), 1.0)
    denom = np.bincount(rows, weights=m, minlength=n)
    zero = np.flatnonzero(denom == 0.0)
    if zero.size:
        raise DegenerateRowError(int(zero[0]), context="graph_learning")
    a_edge = m / denom[rows]
    a_arr = np.zeros((n, n))
    a_arr[rows, cols] = a_edge

    def bw(g: np.ndarray):
        g_edge = g[rows, cols]
        c = np.bincount(rows, weights=g_edge * a_edge, minlength=n)
        t = (g_edge - c[rows]) * a_edge * gate
        diffs = x.data[rows] - x.data[cols]
        gx = None
        if x.requires_grad:
            contrib = t[:, None] * np.sign(diffs) * avec[None, :]
            gx = np.zeros_like(x.data)
            np.add.at(gx, rows, contrib)
            np.subtract.at(gx, cols, contrib)
        ga = (t @ np.abs(diffs))[:, None] if alpha.requires_grad else None
        return gx, ga

    return ad.record(a_arr, (x, alpha), bw)


def _renorm_propagation(a: Tensor, degree_from: str) -> Tensor:
    """D^-1/2 (I + a) D^-1/2 with D taken from (I + a) or from a alone."""
    if a.rows != a.cols:
        raise ShapeError(f"propagation needs a square adjacency, got {a.shape}")
    d = a.data.sum(axis=1)
    if degree_from == "a_hat":
        d = d + 1.0
    bad = np.flatnonzero(d <= 0.0)
    if bad.size:
        raise DegenerateDegreeError(int(bad[0]), float(d[bad[0]]))
    s = 1.0 / np.sqrt(d)
    p_arr = a.data * s[:, None]
    p_arr *= s[None, :]
    idx = np.arange(a.rows)
    p_arr[idx, idx] += s * s

    def bw(g: np.ndarray):
        gp = g * p_arr
        dd = -(gp.sum(axis=1) + gp.sum(axis=0)) / (2.0 * d)
        da = g * s[:, None]
        da *= s[None, :]
        da += dd[:, None]
        return (da,)

    return ad.record(p_arr, (a,), bw)


def graph_conv(x: Tensor, a: Tensor, w: Tensor, degree_from: str = "a_hat") -> Tensor:
    """ReLU(D^-1/2 (I + a) D^-1/2 x w), recomputing the propagation matrix
    from the (learned) adjacency on every call."""
    prop = _renorm_propagation(a, degree_from)
    return ad.relu(ad.matmul(prop, ad.matmul(x, w)))


def _attention_coefficients(h: Tensor, gamma: Tensor, a: Tensor) -> Tensor:
    n, dh = h.shape
    if gamma.shape != (2 * dh, 1):
        raise ShapeError(
            f"attention: gamma must be {2 * dh}x1 for transformed features {h.shape},"
            f" got {gamma.shape}"
        )
    if a.shape != (n, n):
        raise ShapeError(f"attention: adjacency {a.shape} does not match {n} nodes")
    g1 = gamma.data[:dh, 0]
    g2 = gamma.data[dh:, 0]
    u = h.data @ g1
    v = h.data @ g2
    # single N x N buffer: logits -> exp(relu) -> masked -> normalized
    beta_arr = u[:, None] + v[None, :]
    np.maximum(beta_arr, 0.0, out=beta_arr)
    np.exp(beta_arr, out=beta_arr)
    beta_arr *= a.data
    t = beta_arr.sum(axis=1)
    zero = np.flatnonzero(t == 0.0)
    if zero.size:
        raise DegenerateRowError(int(zero[0]), context="graph_attention")
    beta_arr /= t[:, None]

    def bw(g: np.ndarray):
        c = np.einsum("ij,ij->i", g, beta_arr)
        dbh = (g - c[:, None]) / t[:, None]
        logits = u[:, None] + v[None, :]
        gate = logits > 0.0
        np.maximum(logits, 0.0, out=logits)
        e = np.exp(logits, out=logits)
        ga = dbh * e if a.requires_grad else None
        dlog = dbh * a.data
        dlog *= e
        dlog *= gate
        du = dlog.sum(axis=1)
        dv = dlog.sum(axis=0)
        gh = None
        if h.requires_grad:
            gh = np.outer(du, g1) + np.outer(dv, g2)
        gg = None
        if gamma.requires_grad:
            gg = np.concatenate([h.data.T @ du, h.data.T @ dv])[:, None]
        return gh, gg, ga

    return ad.record(beta_arr, (h, gamma, a), bw)


def graph_attention(x: Tensor, a: Tensor, w: Tensor, gamma: Tensor):
    """Attention over the learned graph's support.

    beta_hat(i,j) = exp(relu(gamma . [h_i || h_j])) * a(i,j) with h = x w,
    beta its row normalization, output ReLU(beta h).  Returns (output, beta).
    """
    h = ad.matmul(x, w)
    beta = _attention_coefficients(h, gamma, a)
    return ad.relu(ad.matmul(beta, h)), beta


def fusion_logits(x2: Tensor, x3: Tensor, x4: Tensor, eta: Tensor) -> Tensor:
    if not (x2.shape == x3.shape == x4.shape):
        raise ShapeError(
            f"fusion: inputs must share a shape, got {x2.shape}, {x3.shape}, {x4.shape}"
        )
    if eta.shape != (3, 1):
        raise ShapeError(f"fusion: eta must be 3x1, got {eta.shape}")
    e1 = ad.gather_rows(eta, [0])
    e2 = ad.gather_rows(eta, [1])
    e3 = ad.gather_rows(eta, [2])
    return ad.add(
        ad.add(ad.scalar_mul(e1, x2), ad.scalar_mul(e2, x3)), ad.scalar_mul(e3, x4)
    )


def fusion(x2: Tensor, x3: Tensor, x4: Tensor, eta: Tensor) -> Tensor:
    """Row softmax of the coefficient-weighted sum of the three heads."""
    return ad.row_softmax(fusion_logits(x2, x3, x4, eta))
