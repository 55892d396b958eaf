import numpy as np
import pytest

from lcgldl.errors import DataError, NumericalError
from lcgldl.ldp import (SubMlpParams, center_kernel, init_sub_params, kpca_fit, kpca_transform,
                        ldp_loss, ldp_loss_grad, project_targets, sub_mlp_backward, sub_mlp_forward, sym_eigen)


def pca_scores(Y, p):
    """Centered PCA scores, eigenvectors of the covariance from sym_eigen."""
    Yc = Y - Y.mean(axis=0)
    vals, vecs = sym_eigen(Yc.T @ Yc / (Y.shape[0] - 1))
    return Yc @ vecs[:, :p]


def match_signs(a, b):
    signs = np.sign(np.sum(a * b, axis=0))
    return a * signs


def test_sym_eigen_identity():
    vals, vecs = sym_eigen(np.eye(3))
    np.testing.assert_array_equal(vals, [1, 1, 1])
    np.testing.assert_allclose(vecs.T @ vecs, np.eye(3), atol=1e-15)


def test_sym_eigen_two_by_two():
    vals, vecs = sym_eigen(np.array([[2.0, 1.0], [1.0, 2.0]]))
    np.testing.assert_allclose(vals, [3.0, 1.0], atol=1e-14)
    r = 1 / np.sqrt(2)
    assert abs(abs(vecs[:, 0] @ [r, r]) - 1) < 1e-14
    assert abs(abs(vecs[:, 1] @ [r, -r]) - 1) < 1e-14


@pytest.mark.parametrize("k", [1, 2, 5, 12, 30])
def test_sym_eigen_reconstructs(rng, k):
    A = rng.normal(size=(k, k))
    S = A + A.T
    vals, vecs = sym_eigen(S)
    scale = np.linalg.norm(S)
    np.testing.assert_allclose(vecs @ np.diag(vals) @ vecs.T, S, atol=1e-8 * scale)
    np.testing.assert_allclose(vecs.T @ vecs, np.eye(k), atol=1e-8)
    np.testing.assert_allclose(S @ vecs, vecs * vals, atol=1e-8 * scale)
    assert np.all(np.diff(vals) <= 0)


def test_sym_eigen_rejects_asymmetric():
    with pytest.raises(DataError):
        sym_eigen(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_sym_eigen_reports_non_convergence(rng):
    A = rng.normal(size=(6, 6))
    with pytest.raises(NumericalError):
        sym_eigen(A + A.T, max_sweeps=1)


def test_linear_kpca_equals_pca(rng):
    Y = rng.dirichlet(np.ones(6), size=30)
    model = kpca_fit(Y, 4, kernel="linear")
    ref = pca_scores(Y, 4)
    np.testing.assert_allclose(match_signs(model.train_scores, ref), ref, atol=1e-8)
    np.testing.assert_allclose(match_signs(kpca_transform(model, Y), ref), ref, atol=1e-8)


def test_kpca_invariants(rng):
    Y = rng.dirichlet(np.ones(6), size=40)
    model = kpca_fit(Y, 3)
    assert model.kernel == "rbf" and model.gamma > 0
    assert np.all(model.eigvals > 0) and np.all(np.diff(model.eigvals) <= 0)
    np.testing.assert_allclose(kpca_transform(model, Y), model.train_scores, atol=1e-8)
    Kc = center_kernel(model.kernel_matrix(Y))
    assert np.abs(Kc.sum(axis=1)).max() < 1e-8


@pytest.mark.parametrize("t, p", [(68, 32), (18, 16)])
def test_kpca_benchmark_dimensions(rng, t, p):
    Y = rng.dirichlet(np.ones(t), size=120)
    model = kpca_fit(Y, p)
    assert model.p == p
    assert project_targets(model, Y[:7]).shape == (7, p)


def test_kpca_subsampled_fit(rng):
    Y = rng.dirichlet(np.ones(5), size=300)
    model = kpca_fit(Y, 3, max_rows=100, seed=4)
    assert model.train_labels.shape == (100, 5)
    out = project_targets(model, Y)
    np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-9)


def test_kpca_errors(rng):
    Y = rng.dirichlet(np.ones(4), size=10)
    with pytest.raises(DataError):
        kpca_fit(Y, 4)
    # rank-1 label set: only one positive component exists
    flat = np.tile([0.25, 0.25, 0.25, 0.25], (10, 1))
    flat[:5] = [0.7, 0.1, 0.1, 0.1]
    with pytest.raises(NumericalError, match="only 1 positive"):
        kpca_fit(flat, 2, kernel="linear")


def test_project_targets(rng):
    Y = rng.dirichlet(np.ones(6), size=30)
    model = kpca_fit(Y, 4, kernel="linear")
    out = project_targets(model, Y)
    np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-9)
    ref = match_signs(pca_scores(Y, 4), model.train_scores)
    e = np.exp(ref - ref.max(axis=1, keepdims=True))
    np.testing.assert_allclose(out, e / e.sum(axis=1, keepdims=True), atol=1e-8)
    dup = project_targets(model, np.vstack([Y[3], Y[3]]))
    np.testing.assert_array_equal(dup[0], dup[1])


def test_sub_mlp_forward(rng):
    pred = rng.dirichlet(np.ones(68), size=5)
    zero = SubMlpParams(np.zeros((68, 32)), np.zeros(32))
    np.testing.assert_allclose(sub_mlp_forward(zero, pred), 1 / 32, rtol=1e-15)
    out = sub_mlp_forward(init_sub_params(68, 32, seed=1), pred)
    assert out.shape == (5, 32)
    np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-9)
    with pytest.raises(DataError):
        sub_mlp_forward(zero, pred[:, :10])


def test_ldp_loss():
    assert ldp_loss(np.array([[0.6, 0.4]]), np.array([[0.5, 0.5]])) == pytest.approx(0.2, abs=1e-15)
    a = np.array([[0.2, 0.8]])
    assert ldp_loss(a, a) == 0.0
    b = np.array([[0.7, 0.3]])
    assert ldp_loss(a, b) == ldp_loss(b, a)


def test_sub_mlp_backward_zero(rng):
    params = init_sub_params(5, 3, seed=0)
    g_pred, g = sub_mlp_backward(rng.dirichlet(np.ones(5), size=2), params, np.zeros((2, 3)))
    assert g_pred.shape == (2, 5) and not g_pred.any()
    assert g.W.shape == (5, 3) and not g.W.any() and not g.b.any()


def test_sub_mlp_backward_finite_differences(rng):
    t, p, b = 5, 3, 2
    params = init_sub_params(t, p, seed=3).map(lambda a: a + rng.normal(scale=1.0, size=a.shape))
    pred = rng.dirichlet(np.ones(t), size=b)
    target = rng.dirichlet(np.ones(p), size=b)
    low = sub_mlp_forward(params, pred)
    assert np.min(np.abs(low - target)) > 1e-3
    g_pred, g = sub_mlp_backward(pred, params, ldp_loss_grad(low, target))
    step = 1e-5

    def numeric(f, x):
        out = np.zeros_like(x)
        for idx in np.ndindex(x.shape):
            e = np.zeros_like(x)
            e[idx] = step
            out[idx] = (f(x + e) - f(x - e)) / (2 * step)
        return out

    checks = [
        (g_pred, numeric(lambda x: ldp_loss(sub_mlp_forward(params, x), target), pred)),
        (g.W, numeric(lambda w: ldp_loss(sub_mlp_forward(SubMlpParams(w, params.b), pred), target), params.W)),
        (g.b, numeric(lambda v: ldp_loss(sub_mlp_forward(SubMlpParams(params.W, v), pred), target), params.b)),
    ]
    for a, n in checks:
        rel = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
        assert rel.max() < 1e-4
