"""Desk-scale differentiable Gaussian-splat renderer.

Forward pass: EWA projection of every primitive, global depth sort and
front-to-back alpha compositing per pixel. Backward pass: analytic
gradients of an image loss with respect to the per-primitive importance
scores (through both the opacity and the covariance reweighting), and with
respect to opacity, scales, positions and colors for scene fitting.

Pixels are processed in fixed 16x16 blocks. Inside a block only primitives
whose footprint can reach alpha >= 1/255 there are evaluated; the others
would be skipped by the compositing rule anyway, so the result equals the
all-primitives evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import sh
from .errors import ValidationError
from .parallel import parallel_map
from .scene import CameraView, SplatScene, activate, quaternion_to_matrix

ALPHA_MAX = 0.99
ALPHA_MIN = 1.0 / 255.0
COV_DILATION = 0.3
NEAR_PLANE = 0.01
DET_EPS = 1e-12
BLOCK = 16


@dataclass(eq=False)
class Projection:
    means2d: np.ndarray     # (N, 2) pixels
    cov2d: np.ndarray       # (N, 2, 2) pixels^2, includes dilation
    conic: np.ndarray       # (N, 3) inverse covariance (a, b, c)
    depths: np.ndarray      # (N,) camera-space z
    visible: np.ndarray     # (N,) bool, passed culling and determinant check
    n_degenerate: int
    base_cov2d: np.ndarray  # (N, 2, 2) unscored T Sigma T^T, no dilation
    jac: np.ndarray         # (N, 2, 3) perspective Jacobian
    cam_points: np.ndarray  # (N, 3)
    cov3d: np.ndarray       # (N, 3, 3) reweighted world covariance
    rotations: np.ndarray   # (N, 3, 3)
    scales: np.ndarray      # (N, 3) reweighted scales
    opacities: np.ndarray   # (N,) reweighted opacities
    base_opacities: np.ndarray
    base_scales: np.ndarray
    scores: np.ndarray | None


def project(view: CameraView, scene: SplatScene, scores=None) -> Projection:
    """Project every primitive into ``view``.

    With ``scores`` the opacities and all three scales are multiplied by the
    primitive's score before projection.
    """
    n = len(scene)
    act = activate(scene)
    if scores is not None:
        scores = np.asarray(scores, dtype=np.float64)
        if scores.shape != (n,):
            raise ValidationError(f"scores length {scores.shape} != scene size {n}")
        opac = act.opacities * scores
        scales = act.scales * scores[:, None]
    else:
        opac = act.opacities
        scales = act.scales
    rot = quaternion_to_matrix(act.rotations)
    w = view.rotation
    t = scene.positions.astype(np.float64) @ w.T + view.translation
    z = t[:, 2]
    in_front = z > NEAR_PLANE
    zs = np.where(in_front, z, 1.0)
    jac = np.zeros((n, 2, 3))
    jac[:, 0, 0] = view.fx / zs
    jac[:, 0, 2] = -view.fx * t[:, 0] / zs**2
    jac[:, 1, 1] = view.fy / zs
    jac[:, 1, 2] = -view.fy * t[:, 1] / zs**2
    tm = jac @ w  # (N, 2, 3)
    base_sigma = np.einsum("nij,nj,nkj->nik", rot, act.scales**2, rot)
    sigma = np.einsum("nij,nj,nkj->nik", rot, scales**2, rot)
    base_cov = np.einsum("nij,njk,nlk->nil", tm, base_sigma, tm)
    cov = np.einsum("nij,njk,nlk->nil", tm, sigma, tm)
    cov[:, 0, 0] += COV_DILATION
    cov[:, 1, 1] += COV_DILATION
    det = cov[:, 0, 0] * cov[:, 1, 1] - cov[:, 0, 1] * cov[:, 1, 0]
    nondegenerate = det > DET_EPS
    safe_det = np.where(nondegenerate, det, 1.0)
    conic = np.stack([cov[:, 1, 1] / safe_det, -cov[:, 0, 1] / safe_det, cov[:, 0, 0] / safe_det], axis=1)
    means = np.stack([view.fx * t[:, 0] / zs + view.cx, view.fy * t[:, 1] / zs + view.cy], axis=1)
    return Projection(
        means2d=means,
        cov2d=cov,
        conic=conic,
        depths=z,
        visible=in_front & nondegenerate,
        n_degenerate=int(np.sum(in_front & ~nondegenerate)),
        base_cov2d=base_cov,
        jac=jac,
        cam_points=t,
        cov3d=sigma,
        rotations=rot,
        scales=scales,
        opacities=opac,
        base_opacities=act.opacities,
        base_scales=act.scales,
        scores=scores,
    )


def view_colors(view: CameraView, scene: SplatScene) -> tuple[np.ndarray, np.ndarray]:
    """Per-primitive RGB along the camera-to-center direction, clipped to [0, 1].

    Also returns the mask of channels that were inside the clip range.
    """
    dirs = scene.positions.astype(np.float64) - view.center
    norms = np.linalg.norm(dirs, axis=1, keepdims=True)
    dirs = dirs / np.where(norms > 0, norms, 1.0)
    raw = sh.eval_per_primitive(scene.sh_dc, scene.sh_rest, dirs)
    return np.clip(raw, 0.0, 1.0), (raw >= 0.0) & (raw <= 1.0)


@dataclass(eq=False)
class Block:
    y0: int
    y1: int
    x0: int
    x1: int
    prims: np.ndarray  # sorted primitive ids touching this block


@dataclass(eq=False)
class RenderCache:
    view: CameraView
    proj: Projection
    colors: np.ndarray
    color_ok: np.ndarray
    background: np.ndarray
    blocks: list
    image: np.ndarray
    transmittance: np.ndarray


@dataclass(eq=False)
class RenderOutput:
    image: np.ndarray          # (H, W, 3)
    transmittance: np.ndarray  # (H, W) final transmittance
    cache: RenderCache

    @property
    def n_degenerate(self) -> int:
        return self.cache.proj.n_degenerate


def _reach_radius(proj: Projection) -> np.ndarray:
    """Pixel radius beyond which alpha stays below the skip threshold (inf-free)."""
    cov = proj.cov2d
    tr = 0.5 * (cov[:, 0, 0] + cov[:, 1, 1])
    disc = np.sqrt(np.maximum(tr**2 - (cov[:, 0, 0] * cov[:, 1, 1] - cov[:, 0, 1] ** 2), 0.0))
    lam_max = tr + disc
    with np.errstate(divide="ignore"):
        budget = 2.0 * np.log(np.maximum(proj.opacities, 1e-300) * 255.0)
    r = np.sqrt(np.maximum(budget, 0.0) * np.maximum(lam_max, 0.0))
    r = r * (1.0 + 1e-6) + 1e-3
    r[budget < 0] = -1.0
    return r


def plan_blocks(view: CameraView, proj: Projection) -> list[Block]:
    ids = np.flatnonzero(proj.visible)
    radius = _reach_radius(proj)
    ids = ids[radius[ids] >= 0]
    order = np.lexsort((ids, proj.depths[ids]))
    ids = ids[order]
    mx, my, r = proj.means2d[ids, 0], proj.means2d[ids, 1], radius[ids]
    blocks = []
    for y0 in range(0, view.height, BLOCK):
        y1 = min(y0 + BLOCK, view.height)
        hit_y = (my + r >= y0) & (my - r <= y1 - 1)
        for x0 in range(0, view.width, BLOCK):
            x1 = min(x0 + BLOCK, view.width)
            hit = hit_y & (mx + r >= x0) & (mx - r <= x1 - 1)
            blocks.append(Block(y0, y1, x0, x1, ids[hit]))
    return blocks


def block_alpha(blk: Block, proj: Projection):
    ys, xs = np.mgrid[blk.y0:blk.y1, blk.x0:blk.x1]
    px = xs.reshape(-1, 1).astype(np.float64)
    py = ys.reshape(-1, 1).astype(np.float64)
    p = blk.prims
    dx = px - proj.means2d[p, 0]
    dy = py - proj.means2d[p, 1]
    a, b, c = proj.conic[p, 0], proj.conic[p, 1], proj.conic[p, 2]
    q = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy
    raw = proj.opacities[p] * np.exp(-0.5 * q)
    alpha = np.minimum(ALPHA_MAX, raw)
    active = alpha >= ALPHA_MIN
    alpha = np.where(active, alpha, 0.0)
    one_minus = 1.0 - alpha
    trans = np.empty_like(alpha)
    if alpha.shape[1]:
        trans[:, 0] = 1.0
        np.cumprod(one_minus[:, :-1], axis=1, out=trans[:, 1:])
        final = trans[:, -1] * one_minus[:, -1]
    else:
        final = np.ones(alpha.shape[0])
    return dx, dy, raw, alpha, active, trans, final


def _forward_block(blk: Block, proj: Projection, colors: np.ndarray, bg: np.ndarray):
    _, _, _, alpha, _, trans, final = block_alpha(blk, proj)
    weights = alpha * trans
    rgb = weights @ colors[blk.prims] + final[:, None] * bg
    return rgb, final


def render(
    view: CameraView,
    scene: SplatScene,
    scores=None,
    background=(0.0, 0.0, 0.0),
) -> RenderOutput:
    """Render ``scene`` from ``view``, optionally reweighted by ``scores``."""
    proj = project(view, scene, scores)
    colors, color_ok = view_colors(view, scene)
    bg = np.asarray(background, dtype=np.float64).reshape(3)
    blocks = plan_blocks(view, proj)
    results = parallel_map(lambda blk: _forward_block(blk, proj, colors, bg), blocks)
    image = np.empty((view.height, view.width, 3))
    trans = np.empty((view.height, view.width))
    for blk, (rgb, final) in zip(blocks, results):
        h, w = blk.y1 - blk.y0, blk.x1 - blk.x0
        image[blk.y0:blk.y1, blk.x0:blk.x1] = rgb.reshape(h, w, 3)
        trans[blk.y0:blk.y1, blk.x0:blk.x1] = final.reshape(h, w)
    image = np.clip(image, 0.0, 1.0)
    cache = RenderCache(view, proj, colors, color_ok, bg, blocks, image, trans)
    return RenderOutput(image, trans, cache)


# ---------------------------------------------------------------------------
# backward


@dataclass(eq=False)
class RenderGrads:
    scores: np.ndarray | None
    opacities: np.ndarray      # d/d activated (unweighted) opacity
    scales: np.ndarray         # d/d activated (unweighted) scales
    positions: np.ndarray
    colors: np.ndarray         # d/d clipped view colors
    means2d: np.ndarray
    conic: np.ndarray


def _backward_block(blk: Block, proj: Projection, colors: np.ndarray, bg: np.ndarray, g_img: np.ndarray):
    p = blk.prims
    m = len(p)
    if m == 0:
        return None
    dx, dy, raw, alpha, active, trans, final = block_alpha(blk, proj)
    g = g_img[blk.y0:blk.y1, blk.x0:blk.x1].reshape(-1, 3)
    col = colors[p]
    weights = alpha * trans
    pixel = weights @ col + final[:, None] * bg
    g_color = weights.T @ g
    u = g @ col.T                                    # gC . c_j
    total = np.sum(g * pixel, axis=1, keepdims=True)  # gC . C
    after = total - np.cumsum(weights * u, axis=1)   # gC . (contributions behind i, plus background)
    d_alpha = u * trans - after / (1.0 - alpha)
    d_raw = np.where(active & (raw < ALPHA_MAX), d_alpha, 0.0)
    d_opac = np.sum(d_raw * raw, axis=0) / np.where(proj.opacities[p] > 0, proj.opacities[p], 1.0)
    d_q = -0.5 * d_raw * raw
    a, b, c = proj.conic[p, 0], proj.conic[p, 1], proj.conic[p, 2]
    d_conic = np.stack(
        [np.sum(d_q * dx * dx, axis=0), np.sum(d_q * 2.0 * dx * dy, axis=0), np.sum(d_q * dy * dy, axis=0)],
        axis=1,
    )
    d_mean = np.stack(
        [np.sum(d_q * -2.0 * (a * dx + b * dy), axis=0), np.sum(d_q * -2.0 * (b * dx + c * dy), axis=0)],
        axis=1,
    )
    return p, g_color, d_opac, d_conic, d_mean


def render_backward(cache: RenderCache, d_image, scale_path: bool = True) -> RenderGrads:
    """Gradients of a scalar image loss given ``d_image`` = dL/d(image).

    The score gradient combines the opacity path and, unless ``scale_path``
    is false, the covariance path of the scale reweighting.
    """
    view, proj = cache.view, cache.proj
    g_img = np.asarray(d_image, dtype=np.float64)
    if g_img.shape != cache.image.shape:
        raise ValidationError(f"image gradient shape {g_img.shape} != render shape {cache.image.shape}")
    n = len(proj.depths)
    d_color = np.zeros((n, 3))
    d_opac_eff = np.zeros(n)
    d_conic = np.zeros((n, 3))
    d_mean = np.zeros((n, 2))
    results = parallel_map(
        lambda blk: _backward_block(blk, proj, cache.colors, cache.background, g_img), cache.blocks
    )
    for res in results:
        if res is None:
            continue
        p, gc, go, gq, gm = res
        np.add.at(d_color, p, gc)
        np.add.at(d_opac_eff, p, go)
        np.add.at(d_conic, p, gq)
        np.add.at(d_mean, p, gm)

    # conic = inverse(cov); the off-diagonal conic entry appears twice in q
    con = np.empty((n, 2, 2))
    con[:, 0, 0], con[:, 0, 1], con[:, 1, 0], con[:, 1, 1] = (
        proj.conic[:, 0], proj.conic[:, 1], proj.conic[:, 1], proj.conic[:, 2]
    )
    g_con = np.empty((n, 2, 2))
    g_con[:, 0, 0], g_con[:, 1, 1] = d_conic[:, 0], d_conic[:, 2]
    g_con[:, 0, 1] = g_con[:, 1, 0] = 0.5 * d_conic[:, 1]
    d_cov = -con @ g_con @ con
    vis = proj.visible
    d_cov[~vis] = 0.0
    d_mean[~vis] = 0.0

    s = proj.scores if proj.scores is not None else np.ones(n)
    d_scores = None
    if proj.scores is not None:
        d_scores = d_opac_eff * proj.base_opacities
        if scale_path:
            d_scores = d_scores + np.einsum("nij,nij->n", d_cov, 2.0 * s[:, None, None] * proj.base_cov2d)
    d_opac = d_opac_eff * s

    tm = proj.jac @ view.rotation
    d_sigma = np.einsum("nji,njk,nkl->nil", tm, d_cov, tm)
    rt_g_r = np.einsum("nji,njk,nki->ni", proj.rotations, d_sigma, proj.rotations)
    d_scales = 2.0 * proj.scales * rt_g_r * s[:, None]

    d_tm = 2.0 * d_cov @ tm @ proj.cov3d
    d_jac = d_tm @ view.rotation.T
    t = proj.cam_points
    z = np.where(vis, t[:, 2], 1.0)
    fx, fy = view.fx, view.fy
    d_t = np.einsum("nji,nj->ni", proj.jac, d_mean)
    d_t[:, 0] += d_jac[:, 0, 2] * (-fx / z**2)
    d_t[:, 1] += d_jac[:, 1, 2] * (-fy / z**2)
    d_t[:, 2] += (
        d_jac[:, 0, 0] * (-fx / z**2)
        + d_jac[:, 0, 2] * (2.0 * fx * t[:, 0] / z**3)
        + d_jac[:, 1, 1] * (-fy / z**2)
        + d_jac[:, 1, 2] * (2.0 * fy * t[:, 1] / z**3)
    )
    d_t[~vis] = 0.0
    d_pos = d_t @ view.rotation
    return RenderGrads(
        scores=d_scores,
        opacities=d_opac,
        scales=d_scales,
        positions=d_pos,
        colors=d_color,
        means2d=d_mean,
        conic=d_conic,
    )


def render_image(view: CameraView, scene: SplatScene, scores=None, background=(0.0, 0.0, 0.0)) -> np.ndarray:
    return render(view, scene, scores, background).image
