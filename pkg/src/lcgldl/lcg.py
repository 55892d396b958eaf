"""Label covariance, the Gaussian-sampled correlation grid, and its L1 matching loss.

Each cell (i, j) of the grid holds ``l`` samples drawn around the (i, j)
entry of a label covariance matrix with a fixed variance.  During training
both the predicted-batch covariance and the training-label covariance are
expanded this way with independent noise and compared cell by cell.
Gradients treat the noise as constant (reparameterization).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from lcgldl.errors import DataError

DEFAULT_SIGMA2 = 0.5
SYMMETRY_TOL = 1e-6


@dataclass(frozen=True)
class LabelCorrelationGrid:
    grid: np.ndarray
    l: int
    sigma2: float
    source_cov: np.ndarray


def covariance(labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.float64)
    m = labels.shape[0]
    if labels.ndim != 2 or m < 2:
        raise DataError(f"covariance needs at least 2 rows, got shape {labels.shape}")
    centered = labels - labels.mean(axis=0)
    cov = centered.T @ centered / (m - 1)
    # (A^T A) is symmetric in exact arithmetic; force it bitwise
    return 0.5 * (cov + cov.T)


def draw_noise(rng: np.random.Generator, t: int, l: int) -> np.ndarray:
    """Standard-normal noise for one predicted grid and one target grid, shape t×t×l×2."""
    return rng.standard_normal((t, t, l, 2))


def build_grid(cov: np.ndarray, l: int | None = None, sigma2: float = DEFAULT_SIGMA2,
               seed: int = 0, noise: np.ndarray | None = None) -> LabelCorrelationGrid:
    cov = np.asarray(cov, dtype=np.float64)
    t = cov.shape[0]
    if cov.ndim != 2 or cov.shape[1] != t:
        raise DataError(f"covariance must be square, got {cov.shape}")
    if np.max(np.abs(cov - cov.T), initial=0.0) > SYMMETRY_TOL:
        raise DataError("covariance matrix is not symmetric")
    l = t if l is None else int(l)
    if l < 1:
        raise DataError(f"samples per cell must be positive, got {l}")
    if sigma2 < 0:
        raise DataError(f"grid variance must be nonnegative, got {sigma2}")
    if noise is None:
        noise = np.random.default_rng(int(seed) & 0xFFFFFFFFFFFFFFFF).standard_normal((t, t, l))
    grid = cov[:, :, None] + np.sqrt(sigma2) * noise
    return LabelCorrelationGrid(grid, l, float(sigma2), cov)


def _grid_diff(pred_labels, true_cov, sigma2, draws):
    pred_labels = np.asarray(pred_labels, dtype=np.float64)
    if pred_labels.ndim != 2 or pred_labels.shape[0] < 2:
        raise DataError(f"batch covariance needs at least 2 rows, got shape {pred_labels.shape}")
    t = pred_labels.shape[1]
    if draws.ndim != 4 or draws.shape[:2] != (t, t) or draws.shape[3] != 2:
        raise DataError(f"noise tensor must have shape ({t}, {t}, l, 2), got {draws.shape}")
    scale = np.sqrt(sigma2)
    pred_grid = covariance(pred_labels)[:, :, None] + scale * draws[..., 0]
    true_grid = np.asarray(true_cov)[:, :, None] + scale * draws[..., 1]
    return pred_grid - true_grid


def lcg_loss(pred_labels, true_cov, l, sigma2, draws) -> float:
    """Mean absolute difference between the predicted and target grids."""
    diff = _grid_diff(pred_labels, true_cov, sigma2, draws[:, :, :l])
    return float(np.abs(diff).mean())


def lcg_loss_backward(pred_labels, true_cov, l, sigma2, draws) -> np.ndarray:
    pred_labels = np.asarray(pred_labels, dtype=np.float64)
    diff = _grid_diff(pred_labels, true_cov, sigma2, draws[:, :, :l])
    # d loss / d C_pred, not symmetric because (i,j) and (j,i) carry different noise
    g_cov = np.sign(diff).sum(axis=2) / diff.size
    b = pred_labels.shape[0]
    centered = pred_labels - pred_labels.mean(axis=0)
    return centered @ (g_cov + g_cov.T) / (b - 1)


def grid_residuals(pred_labels, true_cov, l, sigma2, draws) -> np.ndarray:
    return _grid_diff(pred_labels, true_cov, sigma2, draws[:, :, :l]).ravel()
