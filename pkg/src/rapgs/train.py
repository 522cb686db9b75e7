"""Training loop for the importance scorer.

Each iteration samples one (scene, view) pair, scores the whole scene,
renders it with opacities and scales reweighted by the scores and steps
Adam on the weighted sum of rendering, pruning and entropy losses.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import mlp
from .errors import NumericError, ValidationError
from .features import DEFAULT_CLIP, DEFAULT_K, DEFAULT_M, extract_features
from .losses import entropy_loss, pruning_loss, rendering_loss
from .parallel import derive_rng
from .render import render, render_backward
from .scene import SplatScene

log = logging.getLogger(__name__)

LOG_COLUMNS = ("iter", "render_loss", "prune_loss", "entropy_loss", "total", "mean_score")


@dataclass
class TrainConfig:
    lambda_dssim: float = 0.2
    lambda_render: float = 1.0
    lambda_prune: float = 1.0
    lambda_entropy: float = 0.25
    target_mean: float = 0.5
    bins: int = 250
    hist_sigma: float = 0.01
    iterations: int = 15000
    seed: int = 0
    lr: float = 1e-3
    lr_decay_at: int = 10000
    lr_decay: float = 5.0
    k: int = DEFAULT_K
    m: int = DEFAULT_M
    clip_lo: float = DEFAULT_CLIP[0]
    clip_hi: float = DEFAULT_CLIP[1]
    activation: str = "relu"
    scale_path: bool = True
    background: tuple = (0.0, 0.0, 0.0)

    def validate(self) -> None:
        for name in ("lambda_dssim", "lambda_render", "lambda_prune", "lambda_entropy"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0")
        if not 0.0 < self.target_mean < 1.0:
            raise ValidationError("target_mean must lie in (0, 1)")
        if self.bins < 2:
            raise ValidationError("bins must be >= 2")
        if not self.hist_sigma > 0:
            raise ValidationError("hist_sigma must be > 0")
        if self.iterations < 0:
            raise ValidationError("iterations must be >= 0")

    def learning_rate(self, iteration: int) -> float:
        return self.lr / self.lr_decay if iteration >= self.lr_decay_at else self.lr


@dataclass(eq=False)
class TrainingScene:
    """A scene, its training views (with ground truth) and cached features."""

    scene: SplatScene
    views: list
    features: np.ndarray
    name: str = ""

    @classmethod
    def prepare(cls, scene: SplatScene, views, config: TrainConfig, name: str = "") -> "TrainingScene":
        if not views:
            raise ValidationError(f"scene {name or '?'} has no views")
        if any(v.gt_image is None for v in views):
            raise ValidationError(f"scene {name or '?'} has a view without ground truth")
        feats = extract_features(
            scene, k=config.k, m=config.m, seed=config.seed, clip=(config.clip_lo, config.clip_hi)
        ).features
        return cls(scene, list(views), feats, name)


@dataclass
class StepResult:
    render_loss: float
    prune_loss: float
    entropy_loss: float
    total: float
    mean_score: float
    grads: list
    d_scores: np.ndarray = field(repr=False, default=None)


class TrainingAborted(NumericError):
    def __init__(self, message: str, state: dict):
        super().__init__(message)
        self.state = state


def loss_and_grads(weights: mlp.MlpWeights, data: TrainingScene, view, config: TrainConfig) -> StepResult:
    """Total loss for one view and its gradient w.r.t. every MLP parameter."""
    scores32, cache = mlp.forward(data.features, weights)
    scores = scores32.astype(np.float64)
    out = render(view, data.scene, scores, config.background)
    l_render, d_img = rendering_loss(out.image, view.gt_image, config.lambda_dssim)
    d_render = render_backward(out.cache, d_img, scale_path=config.scale_path).scores
    l_prune, d_prune = pruning_loss(scores, config.target_mean)
    l_ent, d_ent = entropy_loss(scores, config.bins, config.hist_sigma)
    total = config.lambda_render * l_render + config.lambda_prune * l_prune + config.lambda_entropy * l_ent
    d_scores = config.lambda_render * d_render + config.lambda_prune * d_prune + config.lambda_entropy * d_ent
    grads = mlp.backward(cache, d_scores)
    return StepResult(l_render, l_prune, l_ent, float(total), float(scores.mean()), grads, d_scores)


@dataclass(eq=False)
class TrainResult:
    weights: mlp.MlpWeights
    log: list
    state: mlp.AdamState

    def log_csv(self) -> str:
        return format_log(self.log)


def format_log(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(LOG_COLUMNS)
    for row in rows:
        writer.writerow([row[0]] + [repr(float(x)) for x in row[1:]])
    return buf.getvalue()


def train(
    data: list,
    config: TrainConfig,
    weights: mlp.MlpWeights | None = None,
    progress_every: int = 0,
) -> TrainResult:
    """Run ``config.iterations`` Adam steps over the training scenes.

    The result is a pure function of the data, config and seed.
    """
    config.validate()
    if not data:
        raise ValidationError("training needs at least one scene")
    w = weights if weights is not None else mlp.init(config.seed, config.activation)
    state = mlp.AdamState.fresh(w)
    rng = derive_rng(config.seed, "train-sampling")
    rows = []
    for it in range(config.iterations):
        si = int(rng.integers(len(data)))
        vi = int(rng.integers(len(data[si].views)))
        step = loss_and_grads(w, data[si], data[si].views[vi], config)
        finite = np.isfinite(step.total) and all(np.isfinite(g).all() for g in step.grads)
        if not finite:
            raise TrainingAborted(
                f"non-finite loss at iteration {it}",
                {
                    "iteration": it,
                    "scene": data[si].name or si,
                    "view": data[si].views[vi].name or vi,
                    "losses": [step.render_loss, step.prune_loss, step.entropy_loss, step.total],
                    "mean_score": step.mean_score,
                    "config": asdict(config),
                    "weights": mlp.weights_to_dict(w) if w.is_finite() else None,
                },
            )
        rows.append((it, step.render_loss, step.prune_loss, step.entropy_loss, step.total, step.mean_score))
        w, state = mlp.adam_step(w, step.grads, state, lr=config.learning_rate(it))
        if progress_every and (it + 1) % progress_every == 0:
            log.info("iter %d total %.5f mean score %.4f", it + 1, step.total, step.mean_score)
    return TrainResult(w, rows, state)
