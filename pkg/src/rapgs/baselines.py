"""Rendering-based baseline scorer ("visibility-lite").

A simplified take on projected-area x opacity x volume importance: for each
primitive, count the pixels over all views where its own alpha reaches the
compositing threshold, multiply by opacity and a softened volume factor, and
min-max rescale. Hit counts stand in for accumulated blending weights, so
occlusion is ignored.
"""

from __future__ import annotations

import logging

import numpy as np

from .errors import ValidationError
from .parallel import parallel_map
from .render import block_alpha, plan_blocks, project
from .scene import SplatScene, activate

log = logging.getLogger(__name__)

VOLUME_PERCENTILE = 90.0
VOLUME_POWER = 0.1


def hit_counts(scene: SplatScene, view) -> np.ndarray:
    """Pixels of ``view`` where each primitive's alpha is at least 1/255."""
    proj = project(view, scene)
    counts = np.zeros(len(scene), dtype=np.int64)
    blocks = plan_blocks(view, proj)

    def count(blk):
        if len(blk.prims) == 0:
            return blk.prims, np.zeros(0, dtype=np.int64)
        active = block_alpha(blk, proj)[4]
        return blk.prims, active.sum(axis=0)

    for prims, c in parallel_map(count, blocks):
        np.add.at(counts, prims, c)
    return counts


def visibility_raw(scene: SplatScene, views) -> np.ndarray:
    if not views:
        raise ValidationError("visibility baseline needs at least one view")
    hits = np.zeros(len(scene), dtype=np.float64)
    for v in views:
        hits += hit_counts(scene, v)
    act = activate(scene)
    volume = np.prod(act.scales, axis=1)
    v90 = np.percentile(volume, VOLUME_PERCENTILE) if len(volume) else 1.0
    gamma = (np.minimum(volume, v90) / v90) ** VOLUME_POWER if v90 > 0 else np.ones_like(volume)
    return hits * act.opacities * gamma


def visibility_score(scene: SplatScene, views) -> np.ndarray:
    """Min-max rescaled visibility-lite scores in [0, 1]."""
    raw = visibility_raw(scene, views)
    if len(raw) == 0:
        return raw
    lo, hi = raw.min(), raw.max()
    if hi <= 0:
        log.warning("no primitive is visible from any view; all scores are zero")
        return np.zeros_like(raw)
    if hi == lo:
        return np.ones_like(raw)
    return (raw - lo) / (hi - lo)
