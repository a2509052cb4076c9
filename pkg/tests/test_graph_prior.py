"""Prior construction: symmetrize + self-loops + row normalization, and the
all-ones fallback."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from glssl.errors import IngestionError
from glssl.graph_prior import build_prior


def test_single_edge_hand_computed():
    # edge (0,1) on 3 nodes: symmetrize, self-loops, row-normalize
    prior = build_prior(3, [(0, 1)])
    expected = np.array([[0.5, 0.5, 0.0], [0.5, 0.5, 0.0], [0.0, 0.0, 1.0]])
    np.testing.assert_allclose(prior.normalized_dense(), expected, atol=1e-15)


def test_no_edges_is_uniform():
    prior = build_prior(2, None)
    assert prior.mode == "ones"
    np.testing.assert_array_equal(prior.normalized_dense(), np.full((2, 2), 0.5))


def test_single_node():
    np.testing.assert_array_equal(build_prior(1, None).normalized_dense(), [[1.0]])
    np.testing.assert_array_equal(build_prior(1, []).normalized_dense(), [[1.0]])


def test_out_of_range_edge_reports_line():
    with pytest.raises(IngestionError, match=r"line 1.*\(0, 7\)"):
        build_prior(3, [(0, 1), (0, 7)])


@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 5)), max_size=15), st.integers(0, 99))
def test_idempotent_under_duplication_and_reversal(edges, seed):
    rng = np.random.default_rng(seed)
    doubled = edges + [(j, i) for i, j in edges]
    rng.shuffle(doubled)
    a = build_prior(6, edges).normalized_dense()
    b = build_prior(6, doubled).normalized_dense()
    np.testing.assert_array_equal(a, b)


@given(st.lists(st.tuples(st.integers(0, 7), st.integers(0, 7)), max_size=20))
def test_rows_sum_to_one(edges):
    dense = build_prior(8, edges).normalized_dense()
    np.testing.assert_allclose(dense.sum(axis=1), np.ones(8), atol=1e-12)


def test_support_is_symmetrized_edges_plus_loops():
    edges = [(0, 1), (2, 3), (1, 0), (1, 1)]
    prior = build_prior(4, edges)
    dense = prior.normalized_dense()
    expected = np.zeros((4, 4), dtype=bool)
    for i, j in edges:
        expected[i, j] = expected[j, i] = True
    np.fill_diagonal(expected, True)
    np.testing.assert_array_equal(dense > 0, expected)
    assert prior.support_size == int(expected.sum())


def test_kipf_form_is_symmetric_renormalization():
    prior = build_prior(3, [(0, 1)])
    k = prior.kipf_dense()
    # binary symmetrized + self-loops: degrees (2, 2, 1)
    expected = np.array(
        [[1 / 2, 1 / 2, 0.0], [1 / 2, 1 / 2, 0.0], [0.0, 0.0, 1.0]]
    )
    np.testing.assert_allclose(k, expected, atol=1e-15)
    assert np.allclose(k, k.T)
