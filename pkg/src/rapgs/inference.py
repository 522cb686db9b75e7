"""Rendering-free scoring: neighbors -> features -> MLP.

This module must never import the renderer; the test suite checks that.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import mlp
from .features import DEFAULT_CLIP, DEFAULT_K, DEFAULT_M, extract_features
from .pruning import score_histogram
from .scene import SplatScene

DEFAULT_HIST_BINS = 10


def weights_hash(w: mlp.MlpWeights) -> str:
    blob = json.dumps(mlp.weights_to_dict(w), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


@dataclass(eq=False)
class ScoreReport:
    scores: np.ndarray
    histogram: np.ndarray
    method: str
    seconds: float
    weights_hash: str | None = None
    degenerate: bool = False
    extra: dict = field(default_factory=dict)

    def provenance(self) -> dict:
        out = {
            "method": self.method,
            "n": int(len(self.scores)),
            "seconds": self.seconds,
            "degenerate_neighbors": self.degenerate,
        }
        if self.weights_hash:
            out["weights_sha256"] = self.weights_hash
        out.update(self.extra)
        return out


def score_scene(
    scene: SplatScene,
    weights: mlp.MlpWeights,
    k: int = DEFAULT_K,
    m: int = DEFAULT_M,
    seed: int = 0,
    clip=DEFAULT_CLIP,
    bins: int = DEFAULT_HIST_BINS,
) -> ScoreReport:
    """Importance scores for every primitive without rendering anything."""
    start = time.perf_counter()
    feats = extract_features(scene, k=k, m=m, seed=seed, clip=clip)
    scores = mlp.score(feats.features, weights) if len(scene) else np.zeros(0, dtype=np.float32)
    seconds = time.perf_counter() - start
    return ScoreReport(
        scores=scores,
        histogram=score_histogram(scores, bins),
        method="rap",
        seconds=seconds,
        weights_hash=weights_hash(weights),
        degenerate=feats.degenerate,
    )


def report_for(method: str, scores, seconds: float, bins: int = DEFAULT_HIST_BINS, **extra) -> ScoreReport:
    scores = np.asarray(scores)
    return ScoreReport(scores, score_histogram(scores, bins), method, seconds, extra=extra)
