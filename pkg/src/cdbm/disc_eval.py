"""Kernel-PCA analysis of layer representations.

For each layer (raw input, middle-layer mean activation, top-layer mean
activation) an RBF kernel matrix is built over the evaluation samples at
several scales.  The quality of a representation is measured by how much of
the one-hot label matrix is captured by the leading kernel principal
components: the residual

    e(l, d, sigma) = || T - U_d U_d' T ||_F^2

with U_d the top-d eigenvectors of the raw (uncentered) empirical kernel.
Per-d minimization over sigma and averaging over d compress the curves into
a single per-layer score.
"""

from dataclasses import dataclass

import numpy as np

from .model_core import Dbm2Params
from .sampler import mean_representation

DEFAULT_SIGMA_GRID = (1.0, 10.0, 100.0, 1000.0, 10000.0)


def one_hot_labels(labels, n_classes=10):
    """n x n_classes one-hot matrix from integer labels."""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError("labels out of range")
    T = np.zeros((labels.shape[0], n_classes))
    T[np.arange(labels.shape[0]), labels] = 1.0
    return T


def rbf_kernel_matrix(features, sigma2):
    """K_ij = exp(-||f_i - f_j||^2 / (2 sigma2)); symmetric, unit diagonal."""
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    F = np.asarray(features, dtype=np.float64)
    if not np.all(np.isfinite(F)):
        raise ValueError("features contain non-finite values")
    sq = np.sum(F * F, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (F @ F.T)
    np.maximum(d2, 0.0, out=d2)
    K = np.exp(-d2 / (2.0 * sigma2))
    K = 0.5 * (K + K.T)
    np.fill_diagonal(K, 1.0)
    return K


def layer_features(m: Dbm2Params, X, steps=100, rng=None):
    """Features per depth: raw input, then mean activations of the two
    hidden layers under the clamped sampler."""
    X = np.asarray(X, dtype=np.float64)
    mean_y, mean_z = mean_representation(m, X, steps=steps, rng=rng)
    return {0: X, 1: mean_y, 2: mean_z}


def deep_kernels(m: Dbm2Params, X, sigma_grid=DEFAULT_SIGMA_GRID, steps=100,
                 rng=None):
    """Empirical kernels per (layer, sigma2): {layer: {sigma2: K}}."""
    feats = layer_features(m, X, steps=steps, rng=rng)
    return {l: {s2: rbf_kernel_matrix(F, s2) for s2 in sigma_grid}
            for l, F in feats.items()}


def kernel_eigensystem(K):
    """Eigenvalues/vectors of a symmetric kernel sorted by decreasing
    eigenvalue; ties broken by the original index (stable)."""
    evals, evecs = np.linalg.eigh(K)
    order = np.argsort(-evals, kind="stable")
    return evals[order], evecs[:, order]


def residual_curve_from_kernel(K, T):
    """Residuals at every d in 0..n as one pass over the eigensystem.

    The eigenvectors are orthonormal, so the captured label norm is a
    cumulative sum of squared projections and curve[d] = ||T||_F^2 - cum[d].
    """
    T = np.asarray(T, dtype=np.float64)
    _, U = kernel_eigensystem(K)
    coeffs = U.T @ T
    captured = np.concatenate(([0.0], np.cumsum(np.sum(coeffs ** 2, axis=1))))
    total = float(np.sum(T * T))
    return np.maximum(total - captured, 0.0)


def projection_residual(K, T, d) -> float:
    """|| T - U_d U_d' T ||_F^2 for the d leading kernel components."""
    n = np.asarray(K).shape[0]
    if not 0 <= d <= n:
        raise ValueError(f"d must lie in 0..{n}")
    return float(residual_curve_from_kernel(K, T)[d])


@dataclass(frozen=True)
class ResidualCurves:
    """Residual tensor e[layer, d, sigma_index] with its reductions.

    ``e_min`` minimizes over sigma per (layer, d); ``auc_raw`` averages
    e_min over d = 1..n as defined; ``auc`` additionally divides by
    ||T||_F^2 so scores are comparable across sample counts (the fraction
    of label norm left unexplained, averaged over the d sweep).
    """

    e: np.ndarray
    e_min: np.ndarray
    auc_raw: np.ndarray
    auc: np.ndarray
    sigma_grid: tuple
    label_norm2: float

    @property
    def n_layers(self):
        return self.e.shape[0]


def residual_curves(m: Dbm2Params, X, T, sigma_grid=DEFAULT_SIGMA_GRID,
                    steps=100, rng=None) -> ResidualCurves:
    """Full residual analysis over layers, component counts and scales."""
    kernels = deep_kernels(m, X, sigma_grid=sigma_grid, steps=steps, rng=rng)
    return residual_curves_from_kernels(kernels, T, sigma_grid)


def residual_curves_from_kernels(kernels, T, sigma_grid) -> ResidualCurves:
    T = np.asarray(T, dtype=np.float64)
    n = T.shape[0]
    layers = sorted(kernels.keys())
    e = np.empty((len(layers), n + 1, len(sigma_grid)))
    for li, l in enumerate(layers):
        for si, s2 in enumerate(sigma_grid):
            e[li, :, si] = residual_curve_from_kernel(kernels[l][s2], T)
    e_min = e.min(axis=2)
    auc_raw = e_min[:, 1:].mean(axis=1)
    label_norm2 = float(np.sum(T * T))
    return ResidualCurves(e=e, e_min=e_min, auc_raw=auc_raw,
                          auc=auc_raw / label_norm2,
                          sigma_grid=tuple(sigma_grid),
                          label_norm2=label_norm2)


def kpca2_scatter(kernels, T, sigma_grid, layer=None):
    """Sample coordinates on the two leading kernel components of the
    deepest layer, at the sigma2 that minimizes the d = 2 residual.

    Returns (coords, sigma2) with coords of shape (n, 2), scaled by the
    square roots of the eigenvalues.
    """
    if layer is None:
        layer = max(kernels.keys())
    best_s2, best_res = None, np.inf
    for s2 in sigma_grid:
        res = projection_residual(kernels[layer][s2], T, 2)
        if res < best_res:
            best_s2, best_res = s2, res
    evals, evecs = kernel_eigensystem(kernels[layer][best_s2])
    scale = np.sqrt(np.maximum(evals[:2], 0.0))
    return evecs[:, :2] * scale, best_s2
