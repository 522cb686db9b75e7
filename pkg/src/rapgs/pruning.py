"""Pruning operators, the opacity baseline and hard score histograms."""

from __future__ import annotations

import math

import numpy as np

from .errors import ValidationError
from .parallel import derive_rng
from .scene import SplatScene, activate, select


def _check(scene: SplatScene, scores) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64)
    if s.shape != (len(scene),):
        raise ValidationError(f"scores length {s.shape} != scene size {len(scene)}")
    return s


def retained_count(n: int, retention: float) -> int:
    if not 0.0 < retention <= 1.0:
        raise ValidationError(f"retention must lie in (0, 1], got {retention}")
    # guard against 0.3 * 10 = 3.0000000000000004 style round-up
    return min(n, math.ceil(round(retention * n, 9)))


def ratio_mask(scores, retention: float) -> np.ndarray:
    """Mask of the ceil(retention * N) highest scores; ties keep the lower index."""
    s = np.asarray(scores, dtype=np.float64)
    n = len(s)
    keep = retained_count(n, retention)
    order = np.lexsort((np.arange(n), -s))
    mask = np.zeros(n, dtype=bool)
    mask[order[:keep]] = True
    return mask


def prune_by_ratio(scene: SplatScene, scores, retention: float) -> SplatScene:
    s = _check(scene, scores)
    return select(scene, ratio_mask(s, retention))


def threshold_mask(scores, tau: float) -> np.ndarray:
    if not 0.0 <= tau <= 1.0:
        raise ValidationError(f"threshold must lie in [0, 1], got {tau}")
    return np.asarray(scores, dtype=np.float64) >= tau


def prune_by_threshold(scene: SplatScene, scores, tau: float) -> SplatScene:
    s = _check(scene, scores)
    return select(scene, threshold_mask(s, tau))


def opacity_score(scene: SplatScene) -> np.ndarray:
    return activate(scene).opacities


def random_score(scene: SplatScene, seed: int = 0) -> np.ndarray:
    return derive_rng(seed, "random-baseline").uniform(0.0, 1.0, len(scene))


def score_histogram(scores, bins: int = 10) -> np.ndarray:
    """Hard counts over ``bins`` equal bins on [0, 1); a score of 1 lands in the last bin."""
    if bins < 2:
        raise ValidationError("need at least 2 bins")
    s = np.asarray(scores, dtype=np.float64)
    idx = np.clip(np.floor(s * bins).astype(np.int64), 0, bins - 1)
    return np.bincount(idx, minlength=bins)
