"""Agreement metrics between predicted and reference heatmaps."""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata

EPS = 1e-12


class MetricError(ValueError):
    """Inputs cannot be scored (shape mismatch, degenerate maps)."""


def _as_map(m) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise MetricError(f"expected a 2-D map, got shape {m.shape}")
    return m


def _check_same_shape(pred: np.ndarray, gt: np.ndarray):
    if pred.shape != gt.shape:
        raise MetricError(f"map shapes differ: {pred.shape} vs {gt.shape}")


def normalize_map(m) -> np.ndarray:
    """Scale a non-negative map so its entries sum to 1."""
    m = _as_map(m)
    if (m < 0).any():
        raise MetricError("map has negative entries")
    total = m.sum()
    if total <= 0:
        raise MetricError("all-zero map cannot be normalized")
    return m / total


def kld(pred, gt) -> float:
    """Reference-weighted divergence D(gt || pred) between normalized maps.

    Lower is better; 0 for identical maps up to epsilon guards. The
    direction weights errors by where the reference mass sits, following
    the saliency-benchmark convention.
    """
    pred, gt = _as_map(pred), _as_map(gt)
    _check_same_shape(pred, gt)
    p = normalize_map(pred)
    g = normalize_map(gt)
    return float(np.sum(g * np.log(g / (p + EPS) + EPS)))


def sim(pred, gt) -> float:
    """Histogram intersection of the normalized maps; 1 iff identical."""
    pred, gt = _as_map(pred), _as_map(gt)
    _check_same_shape(pred, gt)
    return float(np.minimum(normalize_map(pred), normalize_map(gt)).sum())


def auc_j(pred, gt) -> float:
    """Judd-style AUC of ranking reference pixels above the rest.

    The reference map is max-normalized and binarized at 0.5 (>=, so the
    peak is always positive); the prediction then ranks positives against
    negatives with ties counted as half. Both all-positive and all-negative
    binarizations are rejected. Invariant under strictly increasing
    rescalings of the prediction.
    """
    pred, gt = _as_map(pred), _as_map(gt)
    _check_same_shape(pred, gt)
    peak = gt.max()
    if peak <= 0:
        raise MetricError("all-zero reference map")
    positive = (gt / peak >= 0.5).ravel()
    n_pos = int(positive.sum())
    n_neg = positive.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("degenerate reference map: binarization is single-class")
    ranks = rankdata(pred.ravel())
    u = ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def center_bias(height: int, width: int, sigma: float | None = None) -> np.ndarray:
    """Isotropic Gaussian at the image center, normalized to sum 1.

    The no-learning baseline heatmap; sigma defaults to min(H, W) / 6.
    """
    if sigma is None:
        sigma = min(height, width) / 6.0
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    cy, cx = (height - 1) / 2.0, (width - 1) / 2.0
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    m = np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2.0 * sigma * sigma))
    return m / m.sum()
