import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ccvgae import autodiff as ad
from ccvgae import objective as obj
from ccvgae import theory

from conftest import check_grad


def bce_oracle(p, edges, n):
    """Direct double-loop summation of the rebalanced cross-entropy."""
    labels = [[1.0 if i == j or (min(i, j), max(i, j)) in edges else 0.0 for j in range(n)]
              for i in range(n)]
    m = sum(map(sum, labels))
    total = n * n
    pos_w, norm = ((total - m) / m, total / (2 * (total - m))) if m < total else (1.0, 1.0)
    acc = 0.0
    for i in range(n):
        for j in range(n):
            pij = min(max(p[i][j], 1e-10), 1 - 1e-10)
            y = labels[i][j]
            acc += pos_w * y * math.log(pij) + (1 - y) * math.log(1 - pij)
    return -norm * acc / total


def const(x):
    return ad.Tape().const(x)


def kl(mu, ls, n):
    t = ad.Tape()
    return obj.kl_loss(t.const(mu), t.const(ls), n).item()


# ---------------------------------------------------------------- reconstruction


def test_train_labels_include_self_loops():
    lab = obj.train_labels([(0, 1)], 3)
    assert np.array_equal(lab, [[1, 1, 0], [1, 1, 0], [0, 0, 1]])
    assert np.array_equal(obj.train_labels(np.array([[0, 2.0], [2.0, 0]]), 2), np.ones((2, 2)))


def test_class_weights():
    lab = obj.train_labels([(0, 1)], 3)
    assert obj.class_weights(lab) == pytest.approx((4 / 5, 9 / 8))  # 5 positives of 9
    assert obj.class_weights(np.ones((2, 2))) == (1.0, 1.0)


def test_recon_half_probabilities_two_nodes():
    # A + I is all ones on two linked nodes, so the loss is plain -log(0.5)
    loss = obj.recon_loss(const(np.full((2, 2), 0.5)), [(0, 1)], 2).item()
    assert loss == pytest.approx(bce_oracle([[0.5] * 2] * 2, {(0, 1)}, 2), abs=1e-15)
    assert loss == pytest.approx(math.log(2))


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2**31 - 1))
def test_recon_matches_direct_summation(n, seed):
    r = np.random.default_rng(seed)
    pairs = list(itertools.combinations(range(n), 2))
    edges = {e for e in pairs if r.random() < 0.4}
    p = r.uniform(0.01, 0.99, size=(n, n))
    want = bce_oracle(p.tolist(), edges, n)
    assert obj.recon_loss(const(p), edges, n).item() == pytest.approx(want, rel=1e-12)
    logits = np.log(p) - np.log1p(-p)
    assert obj.recon_loss_logits(const(logits), edges, n).item() == pytest.approx(want, rel=1e-9)


def test_recon_perfect_predictions_vanish():
    n, edges = 4, {(0, 1), (2, 3)}
    lab = obj.train_labels(edges, n)
    p = np.where(lab > 0, 1 - 1e-12, 1e-12)
    assert obj.recon_loss(const(p), edges, n).item() < 1e-8


def test_recon_clamps_exact_zero_and_one():
    p = np.array([[1.0, 0.0], [0.0, 1.0]])
    loss = obj.recon_loss(const(p), [], 2).item()
    assert np.isfinite(loss)


def test_recon_monotone_in_off_edge_probability():
    p = np.full((3, 3), 0.6)
    high = p.copy()
    high[0, 2] = 0.9
    low = p.copy()
    low[0, 2] = 0.1
    edges = {(0, 1)}
    assert obj.recon_loss(const(low), edges, 3).item() < obj.recon_loss(const(high), edges, 3).item()


def test_recon_shape_error():
    with pytest.raises(ad.DimensionError):
        obj.recon_loss(const(np.full((2, 2), 0.5)), [], 3)


# ---------------------------------------------------------------- KL


def test_kl_examples():
    assert kl(np.zeros((3, 2)), np.zeros((3, 2)), 3) == 0.0
    mu = np.zeros((4, 1))
    mu[0, 0] = 1.0
    assert kl(mu, np.zeros((4, 1)), 4) == pytest.approx(0.5 / 4)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_kl_nonnegative_and_closed_form(seed):
    r = np.random.default_rng(seed)
    mu, ls = r.normal(size=(5, 3)), r.normal(scale=0.7, size=(5, 3))
    got = kl(mu, ls, 5)
    s2 = np.exp(2 * ls)
    want = np.sum(0.5 * (s2 + mu ** 2 - 1) - ls) / 5
    assert got >= 0 and got == pytest.approx(want, rel=1e-12)


# ---------------------------------------------------------------- DAG penalty


def test_dag_penalty_examples():
    assert obj.dag_penalty(const(np.zeros((3, 3)))).item() == 0.0
    assert obj.dag_penalty(const([[0.0, 1.0], [0.0, 0.0]])).item() == pytest.approx(0.0, abs=1e-15)
    assert obj.dag_penalty(const([[0.0, 1.0], [1.0, 0.0]])).item() == pytest.approx(0.5, abs=1e-15)
    with pytest.raises(ValueError):
        obj.dag_penalty(const(np.zeros((2, 2))), r=0.0)
    with pytest.raises(ValueError):
        obj.dag_penalty(const(np.zeros((2, 2))), form="expm")


def test_dag_literal_form():
    # tr((I - B/2)^2) - 2 = (0.25 + 2.25) - 2 for the 2-cycle
    h = obj.dag_penalty(const([[0.0, 1.0], [1.0, 0.0]]), form="paper_literal_abs").item()
    assert h == pytest.approx(0.5)
    assert obj.dag_penalty(const([[0.0, 1.0], [0.0, 0.0]]), form="paper_literal_abs").item() == \
        pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("k", [2, 3, 4])
def test_dag_penalty_iff_acyclic_exhaustive(k):
    off = ~np.eye(k, dtype=bool)
    for bits in itertools.product((0.0, 1.0), repeat=k * k - k):
        phi = np.zeros((k, k))
        phi[off] = bits
        h = obj.dag_penalty(const(phi)).item()
        if theory.acyclicity_oracle(phi):
            assert abs(h) < 1e-9
        else:
            assert h > 1e-6


def test_dag_penalty_zero_on_random_weighted_dags():
    r = np.random.default_rng(11)
    for _ in range(200):
        phi = theory.random_dag(int(r.integers(1, 9)), r)
        assert abs(obj.dag_penalty(const(phi)).item()) < 1e-9


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**31 - 1), st.floats(0.1, 5.0))
def test_dag_penalty_nonnegative(k, seed, r):
    phi = np.random.default_rng(seed).normal(size=(k, k))
    assert obj.dag_penalty(const(phi), r=r).item() >= -1e-12


# ---------------------------------------------------------------- MSE and total


def test_mse_examples():
    assert obj.mse_loss(np.ones((2, 3)), const(np.ones((2, 3)))).item() == 0.0
    assert obj.mse_loss(np.array([[1.0]]), const([[0.0]])).item() == 1.0
    assert obj.mse_loss(np.array([[1.0, 3.0]]), const([[2.0, 1.0]])).item() == 2.5
    with pytest.raises(ad.DimensionError):
        obj.mse_loss(np.ones((1, 2)), const([[1.0]]))


def test_total_loss_examples_and_linearity():
    t = ad.Tape()
    r, kl, dag, mse = (t.const(v) for v in (1.5, 0.25, 0.7, 2.0))
    assert obj.total_loss(r, kl, dag, mse, 0.0, 0.0).item() == 1.75
    zero = t.const(0.0)
    assert obj.total_loss(zero, zero, zero, zero).item() == 0.0
    for alpha, beta in [(1.0, 1.0), (2.0, 1.0), (1.0, 2.0), (3.5, 0.25)]:
        got = obj.total_loss(r, kl, dag, mse, alpha, beta).item()
        assert got == pytest.approx(1.75 + alpha * 0.7 + beta * 2.0, rel=1e-15)
    assert ad.scale(dag, 2.0).item() == 2 * ad.scale(dag, 1.0).item()


# ---------------------------------------------------------------- gradients


@pytest.mark.parametrize("k", [3, 4, 5])
def test_loss_gradients(k, rng):
    edges = {(0, 1), (1, 2)}
    logits = rng.normal(size=(k, k))
    p = rng.uniform(0.05, 0.95, size=(k, k))
    mu, ls = rng.normal(size=(k, k)), rng.normal(scale=0.5, size=(k, k))
    phi = rng.normal(size=(k, k))
    x, xh = rng.normal(size=(k, k)), rng.normal(size=(k, k))
    assert check_grad(lambda t, n: obj.recon_loss(n[0], edges, k), [p]) < 1e-5
    assert check_grad(lambda t, n: obj.recon_loss_logits(n[0], edges, k), [logits]) < 1e-5
    assert check_grad(lambda t, n: obj.kl_loss(n[0], n[1], k), [mu, ls]) < 1e-5
    for form in obj.DAG_FORMS:
        assert check_grad(lambda t, n: obj.dag_penalty(n[0], 1.3, form), [phi]) < 1e-5
    assert check_grad(lambda t, n: obj.mse_loss(x, n[0]), [xh]) < 1e-5
