"""Rendering-free importance scoring and pruning for Gaussian-splat scenes.

A small MLP maps 15 per-primitive geometric and photometric features
(computed from each primitive and its K nearest neighbours) to a score in
[0, 1]. Scores are trained once through a differentiable renderer and then
applied to new scenes without rendering.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    FeatureFormatError,
    NumericError,
    OverlapError,
    PlyFormatError,
    RapError,
    ValidationError,
)
from .features import extract_features  # noqa: E402
from .inference import score_scene  # noqa: E402
from .mlp import MlpWeights, load_pretrained, load_weights  # noqa: E402
from .pruning import prune_by_ratio, prune_by_threshold  # noqa: E402
from .scene import CameraView, SplatScene, load_ply, save_ply  # noqa: E402

__all__ = [
    "__version__",
    "CameraView",
    "FeatureFormatError",
    "MlpWeights",
    "NumericError",
    "OverlapError",
    "PlyFormatError",
    "RapError",
    "SplatScene",
    "ValidationError",
    "extract_features",
    "load_ply",
    "load_pretrained",
    "load_weights",
    "prune_by_ratio",
    "prune_by_threshold",
    "save_ply",
    "score_scene",
]
