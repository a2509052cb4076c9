"""Training objective: masked cross-entropy plus the graph structure loss.

The structure loss combines a Laplacian-style smoothness term (taken as a
trace so it is scalar), Frobenius sparsity pressure on both learned
adjacencies, and a consistency term tying the two adjacencies together.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, IngestionError, ShapeError


@dataclass
class LossWeights:
    lambda1: float = 0.1
    lambda2: float = 0.01
    lambda3: float = 0.001

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "lambda3"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative, got {getattr(self, name)}")


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        bad = int(np.flatnonzero((labels < 0) | (labels >= num_classes))[0])
        raise IngestionError(
            f"label {labels[bad]} at row {bad} outside [0, {num_classes})"
        )
    out = np.zeros((labels.size, num_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def classification_loss(z: Tensor, y_onehot: np.ndarray, labeled: np.ndarray) -> Tensor:
    """Summed cross-entropy over the labeled rows, -sum_{k in S} ln Z[k, y_k].

    z holds post-softmax probabilities; the log is clamped at 1e-12 so a
    confidently wrong row cannot produce an infinite loss.
    """
    labeled = np.asarray(labeled, dtype=np.intp)
    if labeled.size == 0:
        raise ConfigError("classification loss needs a nonempty labeled set")
    y_onehot = np.asarray(y_onehot, dtype=np.float64)
    if y_onehot.shape != z.shape:
        raise ShapeError(f"labels shape {y_onehot.shape} does not match z {z.shape}")
    zs = ad.gather_rows(z, labeled)
    picked = ad.mul(ad.log(zs, floor=1e-12), ad.tensor(y_onehot[labeled]))
    return ad.scale(ad.sum_all(picked), -1.0)


def masked_gram_sum(a: Tensor, gram: np.ndarray) -> Tensor:
    """sum_ij a(i,j) * gram(i,j) as one fused scalar op (= tr(X^T A X) when
    gram = X X^T), avoiding an N x N product tensor on the tape."""
    if a.shape != gram.shape:
        raise ShapeError(f"gram shape {gram.shape} does not match adjacency {a.shape}")
    out = np.array([[np.einsum("ij,ij->", a.data, gram)]])
    return ad.record(out, (a,), lambda g: (g[0, 0] * gram,))


def frobenius_sq_diff(a: Tensor, b: Tensor) -> Tensor:
    """||a - b||_F^2 without keeping the difference matrix on the tape."""
    if a.shape != b.shape:
        raise ShapeError(f"frobenius_sq_diff: shapes {a.shape} and {b.shape} differ")
    d = a.data - b.data
    out = np.array([[np.vdot(d, d)]])

    def bw(g: np.ndarray):
        d2 = a.data - b.data
        d2 *= 2.0 * g[0, 0]
        ga = d2 if a.requires_grad else None
        gb = -d2 if b.requires_grad else None
        return ga, gb

    return ad.record(out, (a, b), bw)


def _trace_term(a: Tensor, gram: np.ndarray, feat_sq: float) -> Tensor:
    return ad.sub(ad.scalar(feat_sq), masked_gram_sum(a, gram))


def graph_loss(
    x: np.ndarray,
    a0: Tensor,
    a1: Tensor | None,
    weights: LossWeights,
    gram: np.ndarray | None = None,
) -> Tensor:
    """Structure loss on the raw feature matrix.

    lambda1 [tr(X^T (I - A0) X) + tr(X^T (I - A1) X)]
    + lambda2 [||A0||_F^2 + ||A1||_F^2] + lambda3 ||A0 - A1||_F^2.

    Gradient flows into the adjacencies only; x is treated as data.  When
    a1 is None (single-graph variants) its terms and the consistency term
    are dropped.  Pass a precomputed gram = x x^T to amortize the one
    expensive product across training episodes.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != a0.rows:
        raise ShapeError(f"features for {x.shape[0]} nodes, adjacency {a0.shape}")
    if gram is None:
        gram = x @ x.T
    feat_sq = float(np.vdot(x, x))
    total = ad.scale(_trace_term(a0, gram, feat_sq), weights.lambda1)
    total = ad.add(total, ad.scale(ad.frobenius_sq(a0), weights.lambda2))
    if a1 is not None:
        total = ad.add(total, ad.scale(_trace_term(a1, gram, feat_sq), weights.lambda1))
        total = ad.add(total, ad.scale(ad.frobenius_sq(a1), weights.lambda2))
        total = ad.add(total, ad.scale(frobenius_sq_diff(a0, a1), weights.lambda3))
    return total


def graph_loss_layered(
    feats0: Tensor,
    a0: Tensor,
    feats1: Tensor | None,
    a1: Tensor | None,
    weights: LossWeights,
) -> Tensor:
    """Alternative reading of the structure loss: each trace term uses the
    representation its adjacency was computed from, and gradients flow
    into those representations as well."""

    def term(feats: Tensor, a: Tensor) -> Tensor:
        smooth = ad.sub(
            ad.frobenius_sq(feats), ad.sum_all(ad.mul(feats, ad.matmul(a, feats)))
        )
        return ad.add(
            ad.scale(smooth, weights.lambda1),
            ad.scale(ad.frobenius_sq(a), weights.lambda2),
        )

    total = term(feats0, a0)
    if a1 is not None:
        if feats1 is None:
            raise ConfigError("layered graph loss needs features for the second graph")
        total = ad.add(total, term(feats1, a1))
        total = ad.add(total, ad.scale(frobenius_sq_diff(a0, a1), weights.lambda3))
    return total


def total_loss(lc: Tensor, lg: Tensor | None) -> Tensor:
    """Plain sum of the classification and structure losses."""
    if lc.shape != (1, 1) or (lg is not None and lg.shape != (1, 1)):
        raise ShapeError("loss terms must be 1x1 scalars")
    if lg is None:
        return lc
    return ad.add(lc, lg)
