"""Label distribution projection: KPCA targets, the sub-MLP head and its L1 loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from lcgldl.errors import DataError, NumericalError
from lcgldl.net import _ParamMixin, sigmoid, softmax, softmax_backward

JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100
# kernel matrices larger than this go to LAPACK instead of Jacobi
JACOBI_MAX_DIM = 96


def sym_eigen(S: np.ndarray, tol: float = JACOBI_TOL, max_sweeps: int = JACOBI_MAX_SWEEPS):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns eigenvalues in descending order and the matching orthonormal
    eigenvectors as columns.  Sweeps stop once the off-diagonal Frobenius
    norm drops below ``tol`` relative to ``max(1, ||S||_F)``.
    """
    A = np.array(S, dtype=np.float64)
    k = A.shape[0]
    if A.ndim != 2 or A.shape[1] != k:
        raise DataError(f"sym_eigen needs a square matrix, got {A.shape}")
    scale = max(1.0, float(np.linalg.norm(A)))
    if np.max(np.abs(A - A.T), initial=0.0) > 1e-8 * scale:
        raise DataError("sym_eigen input is not symmetric")
    A = 0.5 * (A + A.T)
    V = np.eye(k)
    threshold = tol * scale

    off_mask = ~np.eye(k, dtype=bool)

    def off_norm():
        return float(np.sqrt(np.sum(A[off_mask] ** 2)))

    sweeps = 0
    while off_norm() >= threshold:
        if sweeps == max_sweeps:
            raise NumericalError(f"Jacobi did not converge in {max_sweeps} sweeps (off-norm {off_norm():.3e})")
        for p in range(k - 1):
            for q in range(p + 1, k):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                diff = A[q, q] - A[p, p]
                if abs(apq) < 1e-150 * abs(diff):
                    # theta would overflow; tan -> 1 / (2 theta)
                    tan = apq / diff
                else:
                    theta = diff / (2.0 * apq)
                    tan = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0)) if theta != 0 else 1.0
                c = 1.0 / np.sqrt(tan * tan + 1.0)
                s = tan * c
                ap = A[:, p].copy()
                aq = A[:, q].copy()
                A[:, p] = c * ap - s * aq
                A[:, q] = s * ap + c * aq
                ap = A[p, :].copy()
                aq = A[q, :].copy()
                A[p, :] = c * ap - s * aq
                A[q, :] = s * ap + c * aq
                A[p, q] = A[q, p] = 0.0
                vp = V[:, p].copy()
                V[:, p] = c * vp - s * V[:, q]
                V[:, q] = s * vp + c * V[:, q]
        sweeps += 1
    vals = np.diag(A).copy()
    order = np.argsort(-vals, kind="stable")
    return vals[order], V[:, order]


def _eigh_descending(S):
    if S.shape[0] <= JACOBI_MAX_DIM:
        return sym_eigen(S)
    vals, vecs = np.linalg.eigh(S)
    return vals[::-1], vecs[:, ::-1]


def median_gamma(labels: np.ndarray) -> float:
    """RBF bandwidth ``1 / median`` of the off-diagonal pairwise squared distances."""
    sq = np.sum(labels * labels, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * labels @ labels.T, 0.0)
    iu = np.triu_indices(labels.shape[0], k=1)
    med = float(np.median(d2[iu])) if iu[0].size else 0.0
    return 1.0 / med if med > 0 else 1.0


@dataclass(frozen=True)
class KpcaModel:
    kernel: str
    gamma: float | None
    train_labels: np.ndarray
    kernel_row_means: np.ndarray
    kernel_grand_mean: float
    eigvecs: np.ndarray
    eigvals: np.ndarray
    train_scores: np.ndarray

    @property
    def p(self) -> int:
        return self.eigvals.shape[0]

    def kernel_matrix(self, a, b=None) -> np.ndarray:
        return kernel_matrix(a, self.train_labels if b is None else b, self.kernel, self.gamma)


def kernel_matrix(a, b, kernel: str, gamma: float | None) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if kernel == "linear":
        return a @ b.T
    if kernel == "rbf":
        d2 = np.sum(a * a, axis=1)[:, None] + np.sum(b * b, axis=1)[None, :] - 2.0 * a @ b.T
        return np.exp(-gamma * np.maximum(d2, 0.0))
    raise DataError(f"unknown kernel {kernel!r}")


def center_kernel(K: np.ndarray) -> np.ndarray:
    col = K.mean(axis=0)
    return K - col[None, :] - K.mean(axis=1)[:, None] + K.mean()


def kpca_fit(labels: np.ndarray, p: int, kernel: str = "rbf", gamma: float | None = None,
             max_rows: int | None = None, seed: int = 0) -> KpcaModel:
    """Fit kernel PCA on label rows and keep the top ``p`` components.

    ``max_rows`` caps the number of rows used to build the kernel matrix
    (a seeded subsample); the remaining rows are projected out-of-sample.
    """
    labels = np.asarray(labels, dtype=np.float64)
    m, t = labels.shape
    if not 1 <= p < t:
        raise DataError(f"projection dimension must satisfy 1 <= p < t={t}, got {p}")
    fit_rows = labels
    if max_rows is not None and m > max_rows:
        pick = np.random.default_rng(int(seed) & 0xFFFFFFFFFFFFFFFF).choice(m, size=max_rows, replace=False)
        fit_rows = labels[np.sort(pick)]
    if fit_rows.shape[0] < p:
        raise DataError(f"need at least p={p} rows to fit KPCA, got {fit_rows.shape[0]}")
    if kernel == "rbf" and gamma is None:
        gamma = median_gamma(fit_rows)
    K = kernel_matrix(fit_rows, fit_rows, kernel, gamma)
    Kc = center_kernel(K)
    vals, vecs = _eigh_descending(0.5 * (Kc + Kc.T))
    positive = vals > max(1e-10 * max(vals[0], 0.0), 1e-300)
    achievable = int(np.count_nonzero(positive))
    if achievable < p:
        raise NumericalError(f"only {achievable} positive kernel eigenvalues, cannot project to p={p}")
    vals = vals[:p]
    alphas = vecs[:, :p] / np.sqrt(vals)
    model = KpcaModel(kernel, gamma, fit_rows, K.mean(axis=0), float(K.mean()), alphas, vals,
                      Kc @ alphas)
    return model


def kpca_transform(model: KpcaModel, labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.float64)
    if labels.ndim != 2 or labels.shape[1] != model.train_labels.shape[1]:
        raise DataError(f"label batch shape {labels.shape} does not match fitted width {model.train_labels.shape[1]}")
    k = model.kernel_matrix(labels)
    kc = k - model.kernel_row_means[None, :] - k.mean(axis=1)[:, None] + model.kernel_grand_mean
    return kc @ model.eigvecs


def project_targets(model: KpcaModel, labels: np.ndarray) -> np.ndarray:
    return softmax(kpca_transform(model, labels))


@dataclass
class SubMlpParams(_ParamMixin):
    W: np.ndarray
    b: np.ndarray


def init_sub_params(t: int, p: int, seed: int) -> SubMlpParams:
    rng = np.random.default_rng(int(seed) & 0xFFFFFFFFFFFFFFFF)
    bound = 1.0 / np.sqrt(t)
    return SubMlpParams(rng.uniform(-bound, bound, size=(t, p)), np.zeros(p))


def _sub_forward(params, pred):
    pred = np.asarray(pred, dtype=np.float64)
    if pred.ndim != 2 or pred.shape[1] != params.W.shape[0]:
        raise DataError(f"sub-MLP input shape {pred.shape} does not match width {params.W.shape[0]}")
    act = sigmoid(pred @ params.W + params.b)
    return act, softmax(act)


def sub_mlp_forward(params: SubMlpParams, pred: np.ndarray) -> np.ndarray:
    return _sub_forward(params, pred)[1]


def ldp_loss(pred_low: np.ndarray, target_low: np.ndarray) -> float:
    if np.shape(pred_low) != np.shape(target_low):
        raise DataError(f"shape mismatch: {np.shape(pred_low)} vs {np.shape(target_low)}")
    return float(np.abs(np.asarray(pred_low) - target_low).sum() / np.shape(pred_low)[0])


def ldp_loss_grad(pred_low, target_low) -> np.ndarray:
    return np.sign(pred_low - target_low) / pred_low.shape[0]


def sub_mlp_backward(pred: np.ndarray, params: SubMlpParams, grad_low: np.ndarray):
    """Gradients of a loss on the head output w.r.t. its input and its parameters."""
    act, out = _sub_forward(params, pred)
    if grad_low.shape != out.shape:
        raise DataError(f"grad shape {grad_low.shape} does not match head output {out.shape}")
    g_act = softmax_backward(out, grad_low)
    g_pre = g_act * act * (1.0 - act)
    grads = SubMlpParams(np.asarray(pred).T @ g_pre, g_pre.sum(axis=0))
    return g_pre @ params.W.T, grads
