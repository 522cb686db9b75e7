"""Training objectives: rendering, target-mean pruning and soft-histogram entropy."""

from __future__ import annotations

import numpy as np

from .errors import ValidationError
from .metrics import dssim_with_grad

ENTROPY_EPS = 1e-12


def rendering_loss(rendered, gt, lambda_dssim: float = 0.2) -> tuple[float, np.ndarray]:
    """(1 - lambda) * L1 + lambda * D-SSIM, with gradient w.r.t. ``rendered``."""
    r = np.asarray(rendered, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if r.shape != g.shape:
        raise ValidationError(f"rendered {r.shape} and ground truth {g.shape} differ")
    diff = r - g
    l1 = float(np.mean(np.abs(diff)))
    d_l1 = np.sign(diff) / diff.size
    if lambda_dssim == 0.0:
        return l1, d_l1
    ds, d_ds = dssim_with_grad(r, g)
    value = (1.0 - lambda_dssim) * l1 + lambda_dssim * ds
    return value, (1.0 - lambda_dssim) * d_l1 + lambda_dssim * d_ds


def pruning_loss(scores, target: float) -> tuple[float, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0:
        raise ValidationError("pruning loss needs at least one score")
    gap = s.mean() - target
    return float(gap * gap), np.full(s.shape, 2.0 * gap / s.size)


def bin_centers(bins: int) -> np.ndarray:
    return (np.arange(bins) + 0.5) / bins


def _kernel(scores, bins, sigma):
    s = np.asarray(scores, dtype=np.float64)
    diff = s[:, None] - bin_centers(bins)[None, :]
    return diff, np.exp(-(diff**2) / (2.0 * sigma**2))


def soft_histogram(scores, bins: int = 250, sigma: float = 0.01) -> np.ndarray:
    """Normalized soft bin occupancy using Gaussian kernels at bin centers."""
    if bins < 2:
        raise ValidationError("need at least 2 bins")
    if not sigma > 0:
        raise ValidationError("kernel width must be positive")
    _, k = _kernel(scores, bins, sigma)
    h = k.sum(axis=0)
    total = h.sum()
    if total == 0.0:
        return np.full(bins, 1.0 / bins)
    return h / total


def normalized_entropy(p, bins: int | None = None) -> float:
    p = np.asarray(p, dtype=np.float64)
    b = bins or len(p)
    return float(-np.sum(p * np.log(p + ENTROPY_EPS)) / np.log(b))


def entropy_loss(scores, bins: int = 250, sigma: float = 0.01, eps: float = ENTROPY_EPS) -> tuple[float, np.ndarray]:
    """1 - normalized entropy of the soft histogram, with gradient w.r.t. scores."""
    if bins < 2:
        raise ValidationError("need at least 2 bins")
    diff, k = _kernel(scores, bins, sigma)
    h = k.sum(axis=0)
    total = h.sum()
    p = h / total
    log_b = np.log(bins)
    ent = -np.sum(p * np.log(p + eps)) / log_b
    d_p = -(np.log(p + eps) + p / (p + eps)) / log_b
    d_h = (d_p - np.dot(d_p, p)) / total
    d_k = -k * diff / sigma**2
    d_scores = -(d_k @ d_h)
    return float(1.0 - ent), d_scores


def total_loss(parts, lambdas) -> float:
    """Weighted sum of (render, prune, entropy) parts."""
    return float(sum(w * v for w, v in zip(lambdas, parts)))


def total_loss_grad(grads, lambdas) -> np.ndarray:
    out = None
    for w, g in zip(lambdas, grads):
        term = w * np.asarray(g, dtype=np.float64)
        out = term if out is None else out + term
    return out
