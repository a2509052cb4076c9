"""Layer contracts against independent double-loop scalar oracles, plus the
structural invariants (row-stochasticity, support containment, scaling)."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import away_from_kinks, numeric_grad, rel_err
from glssl import autodiff as ad
from glssl import layers
from glssl.errors import DegenerateDegreeError, ShapeError
from glssl.graph_prior import build_prior

# ---------------------------------------------------------------------------
# double-loop oracles, written directly from the layer definitions


def oracle_graph_learning(x, alpha, prior_dense):
    n, d = x.shape
    a = np.zeros((n, n))
    for i in range(n):
        denom = 0.0
        for j in range(n):
            s = sum(alpha[k] * abs(x[i, k] - x[j, k]) for k in range(d))
            m = math.exp(max(0.0, s))
            a[i, j] = prior_dense[i, j] * m
            denom += prior_dense[i, j] * m
        for j in range(n):
            a[i, j] /= denom
    return a


def oracle_graph_conv(x, a, w, degree_from="a_hat"):
    n = a.shape[0]
    a_hat = np.eye(n) + a
    d = np.zeros(n)
    for i in range(n):
        d[i] = a_hat[i].sum() if degree_from == "a_hat" else a[i].sum()
    prop = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            prop[i, j] = a_hat[i, j] / math.sqrt(d[i]) / math.sqrt(d[j])
    return np.maximum(prop @ x @ w, 0.0)


def oracle_attention(x, a, w, gamma):
    n = x.shape[0]
    h = x @ w
    dh = h.shape[1]
    beta_hat = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            logit = 0.0
            for k in range(dh):
                logit += gamma[k] * h[i, k] + gamma[dh + k] * h[j, k]
            beta_hat[i, j] = math.exp(max(0.0, logit)) * a[i, j]
    beta = beta_hat / beta_hat.sum(axis=1, keepdims=True)
    return np.maximum(beta @ h, 0.0), beta


def random_instance(rng, n, d):
    x = rng.uniform(-1, 1, (n, d))
    alpha = rng.uniform(-1, 1, (d, 1))
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < 0.5]
    prior = build_prior(n, pairs if pairs else None)
    return x, alpha, prior


# ---------------------------------------------------------------------------
# linear projection


def test_projection_identity_and_zeros(rng):
    x = rng.normal(size=(4, 4))
    out = layers.linear_projection(ad.tensor(x), ad.tensor(np.eye(4)))
    np.testing.assert_array_equal(out.data, x)
    out = layers.linear_projection(ad.tensor(np.zeros((3, 4))), ad.tensor(rng.normal(size=(4, 2))))
    np.testing.assert_array_equal(out.data, np.zeros((3, 2)))


def test_projection_matches_double_loop(rng):
    x = rng.uniform(-1, 1, (4, 6))
    p = rng.uniform(-1, 1, (6, 3))
    expected = np.array(
        [[sum(x[i, k] * p[k, j] for k in range(6)) for j in range(3)] for i in range(4)]
    )
    out = layers.linear_projection(ad.tensor(x), ad.tensor(p))
    assert np.abs(out.data - expected).max() < 1e-12


# ---------------------------------------------------------------------------
# graph learning


def test_graph_learning_zero_alpha_reproduces_prior(rng):
    x = rng.normal(size=(5, 3))
    prior = build_prior(5, [(0, 1), (1, 2), (3, 4)])
    a = layers.graph_learning(ad.tensor(x), ad.tensor(np.zeros((3, 1))), prior)
    np.testing.assert_allclose(a.data, prior.normalized_dense(), atol=1e-15)


def test_graph_learning_ones_prior_hand_example():
    # continues the metric example: row 0 weights (1, e, e^2)
    x = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 2.0]])
    alpha = np.array([[1.0], [1.0]])
    a = layers.graph_learning(ad.tensor(x), ad.tensor(alpha), build_prior(3, None))
    denom = 1 + math.e + math.e**2
    np.testing.assert_allclose(
        a.data[0], [1 / denom, math.e / denom, math.e**2 / denom], rtol=1e-14
    )


def test_graph_learning_identical_rows_uniform(rng):
    x = np.tile(rng.normal(size=(1, 4)), (6, 1))
    alpha = rng.normal(size=(4, 1))
    a = layers.graph_learning(ad.tensor(x), ad.tensor(alpha), build_prior(6, None))
    np.testing.assert_allclose(a.data, np.full((6, 6), 1 / 6), atol=1e-15)


@pytest.mark.parametrize("seed", range(20))
def test_graph_learning_matches_double_loop(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 6))
    d = int(rng.integers(1, 5))
    x, alpha, prior = random_instance(rng, n, d)
    got = layers.graph_learning(ad.tensor(x), ad.tensor(alpha), prior).data
    want = oracle_graph_learning(x, alpha[:, 0], prior.normalized_dense())
    assert np.abs(got - want).max() < 1e-10


@pytest.mark.parametrize("edges", [True, False])
def test_graph_learning_gradients_match_fd(rng, edges):
    n, d = 5, 3
    x = away_from_kinks(rng, (n, d), margin=1e-2)
    alpha = away_from_kinks(rng, (d, 1), margin=1e-2)
    prior = build_prior(n, [(0, 1), (1, 2), (2, 3), (3, 4)] if edges else None)
    w = rng.uniform(-1, 1, (n, n))

    def make(xt, at):
        return ad.sum_all(ad.mul(layers.graph_learning(xt, at, prior), ad.tensor(w)))

    params = [ad.parameter(x.copy()), ad.parameter(alpha.copy())]
    ad.backward(make(*params))

    def value(arrs):
        return float(make(ad.tensor(arrs[0]), ad.tensor(arrs[1])).data[0, 0])

    for which, p in enumerate(params):
        fd = numeric_grad(value, [x, alpha], which)
        assert rel_err(fd, p.grad).max() < 1e-5


def test_graph_learning_row_stochastic_and_support(rng):
    for _ in range(5):
        n = int(rng.integers(2, 8))
        d = int(rng.integers(1, 4))
        x, alpha, prior = random_instance(rng, n, d)
        a = layers.graph_learning(ad.tensor(x), ad.tensor(alpha), prior).data
        np.testing.assert_allclose(a.sum(axis=1), np.ones(n), atol=1e-9)
        assert (a >= 0).all()
        mask = prior.normalized_dense() > 0
        assert not a[~mask].any(), "support leaked outside the prior"


def test_graph_learning_scale_invariance(rng):
    # scaling x by c > 0 and alpha by 1/c leaves the output unchanged
    x, alpha, prior = random_instance(rng, 5, 3)
    c = 3.7
    a1 = layers.graph_learning(ad.tensor(x), ad.tensor(alpha), prior).data
    a2 = layers.graph_learning(ad.tensor(c * x), ad.tensor(alpha / c), prior).data
    assert np.abs(a1 - a2).max() < 1e-12


def test_graph_learning_prior_size_mismatch(rng):
    with pytest.raises(ShapeError):
        layers.graph_learning(
            ad.tensor(rng.normal(size=(4, 2))), ad.tensor(np.zeros((2, 1))), build_prior(5, None)
        )


# ---------------------------------------------------------------------------
# graph convolution


def test_graph_conv_row_stochastic_reduces_to_half_form(rng):
    # rows of a sum exactly to 1 -> degrees are exactly 2
    a = np.array([[0.5, 0.5, 0.0], [0.25, 0.5, 0.25], [0.0, 0.75, 0.25]])
    x = rng.uniform(-1, 1, (3, 4))
    w = rng.uniform(-1, 1, (4, 2))
    got = layers.graph_conv(ad.tensor(x), ad.tensor(a), ad.tensor(w)).data
    want = np.maximum(((np.eye(3) + a) / 2.0) @ x @ w, 0.0)
    assert np.abs(got - want).max() < 1e-12


def test_graph_conv_zero_adjacency_identity_weights(rng):
    x = np.abs(rng.normal(size=(4, 4)))
    out = layers.graph_conv(ad.tensor(x), ad.tensor(np.zeros((4, 4))), ad.tensor(np.eye(4)))
    np.testing.assert_allclose(out.data, x, atol=1e-15)


@pytest.mark.parametrize("seed", range(20))
def test_graph_conv_matches_double_loop(seed):
    rng = np.random.default_rng(100 + seed)
    n = int(rng.integers(2, 6))
    dl, dn = int(rng.integers(1, 5)), int(rng.integers(1, 4))
    x = rng.uniform(-1, 1, (n, dl))
    a = rng.uniform(0.0, 1.0, (n, n))
    a /= a.sum(axis=1, keepdims=True)
    w = rng.uniform(-1, 1, (dl, dn))
    mode = "a_hat" if seed % 2 == 0 else "a_l"
    got = layers.graph_conv(ad.tensor(x), ad.tensor(a), ad.tensor(w), mode).data
    want = oracle_graph_conv(x, a, w, mode)
    assert np.abs(got - want).max() < 1e-10


def test_graph_conv_gradients_match_fd(rng):
    n, dl, dn = 4, 3, 2
    x = away_from_kinks(rng, (n, dl), margin=1e-2)
    a = rng.uniform(0.05, 1.0, (n, n))
    w = away_from_kinks(rng, (dl, dn), margin=1e-2)
    sel = rng.uniform(0.5, 1.5, (n, dn))

    def make(xt, at, wt):
        return ad.sum_all(ad.mul(layers.graph_conv(xt, at, wt), ad.tensor(sel)))

    params = [ad.parameter(x.copy()), ad.parameter(a.copy()), ad.parameter(w.copy())]
    ad.backward(make(*params))

    def value(arrs):
        return float(make(*[ad.tensor(v) for v in arrs]).data[0, 0])

    for which, p in enumerate(params):
        fd = numeric_grad(value, [x, a, w], which)
        assert rel_err(fd, p.grad).max() < 1e-5, f"input {which}"


def test_graph_conv_degenerate_degree_error():
    with pytest.raises(DegenerateDegreeError, match=r"\(0,0\)"):
        layers.graph_conv(
            ad.tensor(np.ones((2, 2))),
            ad.tensor(np.zeros((2, 2))),
            ad.tensor(np.eye(2)),
            degree_from="a_l",
        )


# ---------------------------------------------------------------------------
# graph attention


def test_attention_zero_gamma_beta_equals_adjacency(rng):
    a = rng.uniform(0.1, 1.0, (4, 4))
    a /= a.sum(axis=1, keepdims=True)
    x = rng.uniform(-1, 1, (4, 3))
    w = rng.uniform(-1, 1, (3, 2))
    out, beta = layers.graph_attention(
        ad.tensor(x), ad.tensor(a), ad.tensor(w), ad.tensor(np.zeros((4, 1)))
    )
    np.testing.assert_allclose(beta.data, a, atol=1e-15)
    np.testing.assert_allclose(out.data, np.maximum(a @ x @ w, 0.0), atol=1e-12)


def test_attention_single_node(rng):
    x = rng.uniform(-1, 1, (1, 3))
    w = rng.uniform(-1, 1, (3, 2))
    gamma = rng.uniform(-1, 1, (4, 1))
    out, beta = layers.graph_attention(
        ad.tensor(x), ad.tensor(np.array([[1.0]])), ad.tensor(w), ad.tensor(gamma)
    )
    np.testing.assert_array_equal(beta.data, [[1.0]])
    np.testing.assert_allclose(out.data, np.maximum(x @ w, 0.0), atol=1e-15)


@pytest.mark.parametrize("seed", range(20))
def test_attention_matches_double_loop(seed):
    rng = np.random.default_rng(200 + seed)
    n = int(rng.integers(2, 6))
    dl, dn = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    x = rng.uniform(-1, 1, (n, dl))
    a = rng.uniform(0.05, 1.0, (n, n))
    a /= a.sum(axis=1, keepdims=True)
    w = rng.uniform(-1, 1, (dl, dn))
    gamma = rng.uniform(-1, 1, (2 * dn, 1))
    out, beta = layers.graph_attention(ad.tensor(x), ad.tensor(a), ad.tensor(w), ad.tensor(gamma))
    want_out, want_beta = oracle_attention(x, a, w, gamma[:, 0])
    assert np.abs(beta.data - want_beta).max() < 1e-10
    assert np.abs(out.data - want_out).max() < 1e-10


def test_attention_beta_rows_and_support(rng):
    n = 5
    x = rng.uniform(-1, 1, (n, 3))
    prior = build_prior(n, [(0, 1), (1, 2), (3, 4)])
    a_mask = prior.normalized_dense()
    w = rng.uniform(-1, 1, (3, 2))
    gamma = rng.uniform(-1, 1, (4, 1))
    _, beta = layers.graph_attention(
        ad.tensor(x), ad.tensor(a_mask), ad.tensor(w), ad.tensor(gamma)
    )
    np.testing.assert_allclose(beta.data.sum(axis=1), np.ones(n), atol=1e-9)
    assert not beta.data[a_mask == 0].any()


def test_attention_gradients_match_fd(rng):
    n, dl, dn = 4, 3, 2
    x = away_from_kinks(rng, (n, dl), margin=1e-2)
    a = rng.uniform(0.05, 1.0, (n, n))
    a /= a.sum(axis=1, keepdims=True)
    w = away_from_kinks(rng, (dl, dn), margin=1e-2)
    gamma = away_from_kinks(rng, (2 * dn, 1), margin=1e-2)
    sel = rng.uniform(0.5, 1.5, (n, dn))

    def make(xt, at, wt, gt):
        out, beta = layers.graph_attention(xt, at, wt, gt)
        return ad.add(ad.sum_all(ad.mul(out, ad.tensor(sel))), ad.frobenius_sq(beta))

    arrays = [x, a, w, gamma]
    params = [ad.parameter(v.copy()) for v in arrays]
    ad.backward(make(*params))

    def value(arrs):
        return float(make(*[ad.tensor(v) for v in arrs]).data[0, 0])

    for which, p in enumerate(params):
        fd = numeric_grad(value, arrays, which)
        assert rel_err(fd, p.grad).max() < 1e-5, f"input {which}"


def test_attention_gamma_shape_error(rng):
    with pytest.raises(ShapeError):
        layers.graph_attention(
            ad.tensor(rng.normal(size=(3, 2))),
            ad.tensor(np.eye(3)),
            ad.tensor(rng.normal(size=(2, 2))),
            ad.tensor(np.zeros((3, 1))),  # needs 2*2 = 4 rows
        )


# ---------------------------------------------------------------------------
# fusion


def test_fusion_selects_first_head(rng):
    x2 = rng.uniform(-1, 1, (4, 3))
    x3 = rng.uniform(-1, 1, (4, 3))
    x4 = rng.uniform(-1, 1, (4, 3))
    eta = np.array([[1.0], [0.0], [0.0]])
    z = layers.fusion(ad.tensor(x2), ad.tensor(x3), ad.tensor(x4), ad.tensor(eta))
    want = ad.row_softmax(ad.tensor(x2)).data
    np.testing.assert_allclose(z.data, want, atol=1e-15)


def test_fusion_linearity_on_equal_heads(rng):
    x2 = rng.uniform(-1, 1, (4, 3))
    eta = np.array([[0.2], [0.5], [-0.4]])
    z = layers.fusion(ad.tensor(x2), ad.tensor(x2), ad.tensor(x2), ad.tensor(eta))
    want = ad.row_softmax(ad.tensor(eta.sum() * x2)).data
    np.testing.assert_allclose(z.data, want, atol=1e-12)


def test_fusion_equal_logits_uniform():
    x = np.full((2, 4), 1.7)
    z = layers.fusion(ad.tensor(x), ad.tensor(x), ad.tensor(x), ad.tensor(np.full((3, 1), 0.3)))
    np.testing.assert_allclose(z.data, np.full((2, 4), 0.25), atol=1e-15)


def test_fusion_rows_sum_to_one_and_grads(rng):
    arrays = [rng.uniform(-1, 1, (3, 4)) for _ in range(3)] + [rng.uniform(-1, 1, (3, 1))]
    sel = rng.uniform(0.5, 1.5, (3, 4))

    def make(a2, a3, a4, eta):
        return ad.sum_all(ad.mul(layers.fusion(a2, a3, a4, eta), ad.tensor(sel)))

    params = [ad.parameter(v.copy()) for v in arrays]
    z = layers.fusion(*[ad.tensor(v) for v in arrays])
    np.testing.assert_allclose(z.data.sum(axis=1), np.ones(3), atol=1e-12)
    ad.backward(make(*params))

    def value(arrs):
        return float(make(*[ad.tensor(v) for v in arrs]).data[0, 0])

    for which, p in enumerate(params):
        fd = numeric_grad(value, arrays, which)
        assert rel_err(fd, p.grad).max() < 1e-5, f"input {which}"
