"""Initial adjacency prior: either a normalized edge graph or the all-ones
fallback used when no graph comes with the data.

Edges are symmetrized, self-loops added, weights binarized, and rows
normalized to sum to 1.  The self-loops guarantee every row of the learned
adjacency has positive mass, so the masked metric normalization can never
hit a zero denominator.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, IngestionError


class GraphPrior:
    """Immutable prior mask for the graph learning layers.

    mode == "edges": support is the symmetrized edge set plus self-loops,
    stored as parallel (row, col) index arrays sorted lexicographically.
    mode == "ones": every pair is in the support; nothing is materialized
    until a dense form is requested.
    """

    def __init__(self, n: int, mode: str, rows=None, cols=None):
        if n < 1:
            raise ConfigError(f"prior needs at least one node, got n={n}")
        self.n = int(n)
        self.mode = mode
        self.rows = rows
        self.cols = cols
        self._dense = None
        self._kipf = None

    @property
    def support_size(self) -> int:
        return self.n * self.n if self.mode == "ones" else self.rows.size

    def normalized_dense(self) -> np.ndarray:
        """Row-stochastic dense form (cached).  1/N everywhere in ones mode."""
        if self._dense is None:
            if self.mode == "ones":
                self._dense = np.full((self.n, self.n), 1.0 / self.n)
            else:
                a = np.zeros((self.n, self.n))
                a[self.rows, self.cols] = 1.0
                self._dense = a / a.sum(axis=1, keepdims=True)
        return self._dense

    def kipf_dense(self) -> np.ndarray:
        """Symmetric renormalization D^-1/2 (A + I) D^-1/2 of the binary graph."""
        if self._kipf is None:
            if self.mode == "ones":
                a = np.ones((self.n, self.n))
            else:
                a = np.zeros((self.n, self.n))
                a[self.rows, self.cols] = 1.0
            d = a.sum(axis=1)
            s = 1.0 / np.sqrt(d)
            self._kipf = a * s[:, None] * s[None, :]
        return self._kipf


def build_prior(n: int, edges=None) -> GraphPrior:
    """Build the prior from an optional (i, j) edge list.

    Duplicates and self-loops in the input are tolerated; direction is
    ignored.  With no edges the all-ones fallback is returned.
    """
    if edges is None:
        return GraphPrior(n, "ones")
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if edges.size:
        bad = np.flatnonzero((edges < 0).any(axis=1) | (edges >= n).any(axis=1))
        if bad.size:
            i, j = edges[bad[0]]
            raise IngestionError(
                f"edge list line {bad[0]}: pair ({i}, {j}) out of range for n={n}"
            )
    src = np.concatenate([edges[:, 0], edges[:, 1], np.arange(n)])
    dst = np.concatenate([edges[:, 1], edges[:, 0], np.arange(n)])
    flat = np.unique(src * n + dst)
    return GraphPrior(n, "edges", rows=flat // n, cols=flat % n)
