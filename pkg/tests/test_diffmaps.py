import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.distance import cdist

from epde.diffmaps import (DiffusionConfig, EmbeddingError, choose_epsilon, embed, kernel_matrix,
                           local_linear_loo, select_unique)


def circle(n=400):
    th = 2 * np.pi * np.arange(n) / n
    return th, np.c_[np.cos(th), np.sin(th)]


def test_kernel_values():
    D = np.array([[0.0, 1.0, 2.5], [1.0, 0.0, 0.3], [2.5, 0.3, 0.0]])
    W = kernel_matrix(D, 1.0)
    assert W[0, 0] == 1.0
    assert W[0, 1] == pytest.approx(np.exp(-1.0)) == pytest.approx(0.3679, abs=1e-4)
    for i in range(3):
        for j in range(3):
            assert W[i, j] == pytest.approx(np.exp(-D[i, j] ** 2), rel=1e-15)
    np.testing.assert_array_equal(W, W.T)
    with pytest.raises(ValueError):
        kernel_matrix(D, 0.0)


def test_choose_epsilon_examples():
    D = np.full((12, 12), 3.0)
    np.fill_diagonal(D, 0)
    assert choose_epsilon(D) == 3.0
    X = np.r_[np.arange(10.0), np.arange(10.0)][:, None]
    assert choose_epsilon(cdist(X, X, "cityblock")) > 0
    with pytest.raises(EmbeddingError):
        choose_epsilon(np.zeros((4, 4)))


def test_choose_epsilon_on_a_line_grid():
    h, n, k = 0.25, 41, 7
    x = h * np.arange(n)
    D = np.abs(x[:, None] - x[None, :])
    # brute-force oracle: k-th smallest positive distance per point, then the median
    kth = [sorted(d for j, d in enumerate(row) if j != i)[k - 1] for i, row in enumerate(D)]
    assert choose_epsilon(D, k=7) == pytest.approx(np.median(kth), rel=1e-12)
    assert choose_epsilon(D, k=7) == pytest.approx(4 * h)


def test_circle_benchmark():
    th, X = circle()
    e = embed(cdist(X, X))
    Y = e.coords[:, :2]
    target = np.c_[np.cos(th), np.sin(th)]
    # optimal orthogonal map from the two coordinates onto (cos, sin)
    U, _, Vt = np.linalg.svd((Y - Y.mean(0)).T @ target)
    Z = (Y - Y.mean(0)) @ U @ Vt
    for k in range(2):
        assert np.corrcoef(Z[:, k], target[:, k])[0, 1] >= 0.99
    assert e.eigenvalues[0] == pytest.approx(e.eigenvalues[1], rel=1e-6)


def test_embedding_invariants():
    X = np.random.default_rng(0).random((60, 2))
    e = embed(cdist(X, X), DiffusionConfig(n_eigs=6))
    assert e.coords.shape == (60, 6)
    assert (np.diff(e.eigenvalues) <= 0).all()
    assert (e.eigenvalues > 0).all() and (e.eigenvalues <= 1).all()
    D = cdist(X, X)
    W = kernel_matrix(D, e.epsilon_used)
    pi = W.sum(1) / W.sum()
    # orthogonal to constants under the stationary measure
    assert np.abs(pi @ e.eigenvectors).max() <= 1e-10
    np.testing.assert_allclose(e.coords, e.eigenvectors * e.eigenvalues)
    # sign convention: the largest-magnitude entry of each eigenvector is positive
    idx = np.abs(e.eigenvectors).argmax(0)
    assert (e.eigenvectors[idx, np.arange(6)] > 0).all()


def test_right_eigenvectors_of_the_markov_operator():
    X = np.random.default_rng(1).random((40, 3))
    D = cdist(X, X)
    e = embed(D, DiffusionConfig(n_eigs=4))
    W = kernel_matrix(D, e.epsilon_used)
    P = W / W.sum(1, keepdims=True)
    np.testing.assert_allclose(P @ e.eigenvectors, e.eigenvectors * e.eigenvalues, atol=1e-10)


def test_duplicated_points_give_duplicated_eigenvectors():
    X = np.random.default_rng(2).random((30, 2))
    D = cdist(X, X)
    cfg = DiffusionConfig(epsilon=0.3, n_eigs=3)
    a = embed(D, cfg)
    XX = np.r_[X, X]
    b = embed(cdist(XX, XX), cfg)
    for k in range(3):
        u, v = a.eigenvectors[:, k], b.eigenvectors[:, k]
        np.testing.assert_allclose(v[:30], v[30:], atol=1e-9)
        assert abs(np.corrcoef(u, v[:30])[0, 1]) > 1 - 1e-9


@settings(max_examples=15, deadline=None)
@given(st.floats(1e-3, 1e3))
def test_scale_invariance(c):
    X = np.random.default_rng(3).random((35, 2))
    D = cdist(X, X)
    a = embed(D, DiffusionConfig(epsilon=0.4, n_eigs=4))
    b = embed(c * D, DiffusionConfig(epsilon=0.4 * c, n_eigs=4))
    np.testing.assert_allclose(b.eigenvectors, a.eigenvectors, atol=1e-10)
    np.testing.assert_allclose(b.eigenvalues, a.eigenvalues, atol=1e-12)
    assert embed(c * D).epsilon_used == pytest.approx(c * embed(D).epsilon_used)


def test_input_validation():
    with pytest.raises(ValueError):
        embed(np.array([[0.0, 1.0], [2.0, 0.0]]))
    with pytest.raises(ValueError):
        embed(np.ones((4, 4)))
    with pytest.raises(ValueError):
        embed(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        embed(-np.eye(3) + 0)
    with pytest.raises(EmbeddingError):
        embed(np.zeros((5, 5)))


def test_arc_harmonic_flagged():
    t = np.linspace(0, 1, 200)
    X = np.c_[t, 0.05 * np.sin(3 * t)]
    e = embed(cdist(X, X), DiffusionConfig(n_eigs=4))
    flags = select_unique(e)
    assert flags[0] and not flags[1]
    assert e.residuals[1] < 0.5
    assert abs(np.corrcoef(e.coords[:, 0], t)[0, 1]) > 0.95


def test_rectangle_has_two_unique_coordinates():
    g = np.stack(np.meshgrid(np.linspace(0, 3, 36), np.linspace(0, 1, 12)), -1).reshape(-1, 2)
    e = embed(cdist(g, g), DiffusionConfig(n_eigs=6))
    flags = select_unique(e)
    assert flags.sum() == 2
    uniq = e.unique_coords()[0]
    # one unique coordinate tracks the long side, the other the short side
    cor = np.abs(np.corrcoef(np.c_[uniq, g].T)[:2, 2:])
    assert cor[:, 0].max() > 0.95 and cor[:, 1].max() > 0.95


def test_single_coordinate_is_unique():
    X = np.random.default_rng(4).random((20, 1))
    e = embed(cdist(X, X), DiffusionConfig(n_eigs=1))
    assert select_unique(e).tolist() == [True]


def test_local_linear_reproduces_linear_functions():
    X = np.random.default_rng(5).random((50, 2))
    y = 3 * X[:, 0] - X[:, 1] + 2
    np.testing.assert_allclose(local_linear_loo(X, y), y, atol=1e-6)
    np.testing.assert_array_equal(local_linear_loo(X, y, bandwidth=0.0), np.full(50, y.mean()))


def test_knn_sparse_kernel():
    th, X = circle(60)
    e = embed(cdist(X, X), DiffusionConfig(knn=3, n_eigs=2))
    r = np.hypot(*e.coords.T)
    assert r.std() / r.mean() < 0.05
    with pytest.raises(ValueError):
        embed(cdist(X, X), DiffusionConfig(normalization="bogus"))
    d = embed(cdist(X, X), DiffusionConfig(normalization="density", n_eigs=2))
    assert d.eigenvalues[0] == pytest.approx(d.eigenvalues[1], rel=1e-6)
