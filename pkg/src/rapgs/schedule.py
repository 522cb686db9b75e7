"""Periodic pruning inside a fixed-topology scene fit.

The fit loop optimizes position, scale, opacity and DC color of a fixed
primitive set against ground-truth views (no densification). Every
``period`` iterations the lowest-scoring ``drop_fraction`` of primitives
is removed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ValidationError
from .losses import rendering_loss
from .metrics import capped, psnr
from .parallel import derive_rng
from .pruning import ratio_mask
from .render import render, render_backward
from .scene import SplatScene, select
from .sh import SH_C0

DEFAULT_PERIOD = 1500
DEFAULT_DROP = 0.40


@dataclass(frozen=True)
class PruneDirective:
    iteration: int
    drop_fraction: float

    @property
    def retention(self) -> float:
        return 1.0 - self.drop_fraction


def in_loop_schedule(iteration: int, period: int = DEFAULT_PERIOD, drop_fraction: float = DEFAULT_DROP):
    """A PruneDirective on every positive multiple of ``period``, else None."""
    if not 0.0 < drop_fraction < 1.0:
        raise ValidationError(f"drop fraction must lie in (0, 1), got {drop_fraction}")
    if iteration < 0:
        raise ValidationError("iteration must be >= 0")
    if period < 1:
        raise ValidationError("period must be >= 1")
    if iteration > 0 and iteration % period == 0:
        return PruneDirective(iteration, drop_fraction)
    return None


_FIT_FIELDS = ("positions", "scale_raw", "opacity_raw", "sh_dc")


@dataclass
class FitConfig:
    iterations: int = 3000
    period: int = DEFAULT_PERIOD
    drop_fraction: float = DEFAULT_DROP
    lambda_dssim: float = 0.2
    lr_position: float = 1.6e-4
    lr_scale: float = 5e-3
    lr_opacity: float = 5e-2
    lr_color: float = 2.5e-3
    seed: int = 0
    background: tuple = (0.0, 0.0, 0.0)


@dataclass(eq=False)
class FitResult:
    scene: SplatScene
    log: list          # (iteration, loss, primitive count)
    prunes: list       # PruneDirective applied


class _Adam:
    def __init__(self, shapes):
        self.m = {k: np.zeros(s) for k, s in shapes.items()}
        self.v = {k: np.zeros(s) for k, s in shapes.items()}
        self.t = 0

    def step(self, params, grads, lrs, b1=0.9, b2=0.999, eps=1e-15):
        self.t += 1
        out = {}
        for k, p in params.items():
            g = grads[k]
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            mh = self.m[k] / (1 - b1**self.t)
            vh = self.v[k] / (1 - b2**self.t)
            out[k] = p - lrs[k] * mh / (np.sqrt(vh) + eps)
        return out

    def keep(self, mask):
        for d in (self.m, self.v):
            for k in d:
                d[k] = d[k][mask]


def scene_gradients(scene: SplatScene, view, cfg: FitConfig) -> tuple[float, dict]:
    out = render(view, scene, None, cfg.background)
    loss, d_img = rendering_loss(out.image, view.gt_image, cfg.lambda_dssim)
    g = render_backward(out.cache, d_img)
    proj = out.cache.proj
    o = proj.base_opacities
    grads = {
        "positions": g.positions,
        "scale_raw": g.scales * proj.base_scales,
        "opacity_raw": g.opacities * o * (1.0 - o),
        "sh_dc": g.colors * SH_C0 * out.cache.color_ok,
    }
    return loss, grads


def fit_scene(
    scene: SplatScene,
    views,
    cfg: FitConfig = FitConfig(),
    scorer: Callable[[SplatScene], np.ndarray] | None = None,
) -> FitResult:
    """Optimize ``scene`` against ``views``, pruning on schedule when ``scorer`` is set."""
    if not views:
        raise ValidationError("fitting needs at least one view")
    rng = derive_rng(cfg.seed, "fit-sampling")
    params = {k: getattr(scene, k).astype(np.float64) for k in _FIT_FIELDS}
    adam = _Adam({k: v.shape for k, v in params.items()})
    lrs = {"positions": cfg.lr_position, "scale_raw": cfg.lr_scale,
           "opacity_raw": cfg.lr_opacity, "sh_dc": cfg.lr_color}
    log, prunes = [], []
    current = scene
    for it in range(cfg.iterations + 1):
        directive = in_loop_schedule(it, cfg.period, cfg.drop_fraction) if scorer is not None else None
        if directive is not None and len(current) > 1:
            mask = ratio_mask(scorer(current), directive.retention)
            current = select(current, mask)
            params = {k: v[mask] for k, v in params.items()}
            adam.keep(mask)
            prunes.append(directive)
        if it == cfg.iterations:
            break
        view = views[int(rng.integers(len(views)))]
        loss, grads = scene_gradients(current, view, cfg)
        log.append((it, loss, len(current)))
        params = adam.step(params, grads, lrs)
        current = current.replace(**{k: v.astype(np.float32) for k, v in params.items()})
    return FitResult(current, log, prunes)


def mean_psnr(scene: SplatScene, views, background=(0.0, 0.0, 0.0)) -> float:
    return float(np.mean([capped(psnr(render(v, scene, None, background).image, v.gt_image)) for v in views]))
