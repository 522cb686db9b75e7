"""Deterministic synthetic scenes with planted redundant primitives.

Informative primitives tile a textured ground plane. Four kinds of
redundant primitives are added on top: jittered clones of informative
ones, floaters hovering far from the surface, near-transparent ghosts and
view-independent blobs with an off-texture color. Ground-truth images are
renders of the informative subset only, so every planted primitive is
redundant by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .neighbors import avg_knn_distance, build_knn
from .parallel import derive_rng, parallel_map
from .render import render
from .scene import CameraView, SplatScene, concat, look_at, select
from .sh import SH_C0

LABELS = ("informative", "clone", "floater", "ghost", "blob")
GHOST_MAX_OPACITY = 0.02
FLOATER_FACTOR = 5.0
# Neighbor count used to measure spacing when placing floaters.
SPACING_K = 8


@dataclass(frozen=True)
class SynthSpec:
    informative: int = 300
    clones: int = 120
    floaters: int = 60
    ghosts: int = 60
    blobs: int = 60
    cameras: int = 12
    radius: float = 3.5
    elevation_deg: float = 40.0
    image_size: int = 96
    fov_deg: float = 50.0
    extent: float = 2.4
    seed: int = 0

    def validate(self) -> None:
        counts = (self.informative, self.clones, self.floaters, self.ghosts, self.blobs)
        if min(counts) < 0 or sum(counts) < 1:
            raise ValidationError("primitive counts must be >= 0 with a positive total")
        if self.clones and not self.informative:
            raise ValidationError("clones need informative primitives to copy")
        if self.cameras < 1:
            raise ValidationError("need at least one camera")
        if self.image_size < 1:
            raise ValidationError("image size must be positive")

    @property
    def total(self) -> int:
        return self.informative + self.clones + self.floaters + self.ghosts + self.blobs


@dataclass(frozen=True, eq=False)
class SynthScene:
    scene: SplatScene
    views: list
    labels: np.ndarray  # (N,) label strings
    spec: SynthSpec

    @property
    def redundant(self) -> np.ndarray:
        return self.labels != "informative"

    def informative_scene(self) -> SplatScene:
        return select(self.scene, ~self.redundant)


def _logit(p):
    return np.log(p / (1.0 - p))


def _z_rotation(rng, n):
    half = rng.uniform(0, np.pi, n)
    return np.stack([np.cos(half), np.zeros(n), np.zeros(n), np.sin(half)], axis=1)


def _random_rotation(rng, n):
    q = rng.standard_normal((n, 4))
    return q / np.linalg.norm(q, axis=1, keepdims=True)


def texture(xy: np.ndarray, extent: float) -> np.ndarray:
    u = xy / extent * 2.0 * np.pi
    r = 0.5 + 0.35 * np.sin(1.5 * u[:, 0]) * np.cos(1.0 * u[:, 1])
    g = 0.5 + 0.35 * np.cos(1.2 * u[:, 0] + 0.7 * u[:, 1])
    checker = ((np.floor(xy[:, 0] / extent * 4) + np.floor(xy[:, 1] / extent * 4)) % 2) * 2 - 1
    b = 0.5 + 0.25 * checker
    return np.clip(np.stack([r, g, b], axis=1), 0.05, 0.95)


def _informative(spec: SynthSpec, rng):
    n = spec.informative
    cols = int(np.ceil(np.sqrt(n)))
    rows = int(np.ceil(n / cols))
    cell = spec.extent / cols
    ii, jj = np.divmod(np.arange(n), cols)
    xy = np.stack([(jj + 0.5) * cell, (ii + 0.5) * cell], axis=1) - np.array([spec.extent, rows * cell]) / 2.0
    xy += rng.uniform(-0.2, 0.2, (n, 2)) * cell
    pos = np.concatenate([xy, rng.normal(0.0, 0.002, (n, 1))], axis=1)
    color = texture(xy, spec.extent)
    sh_rest = rng.normal(0.0, 0.05, (n, 45))
    scale = np.stack(
        [np.full(n, 0.7 * cell), np.full(n, 0.55 * cell), np.full(n, 0.012)], axis=1
    ) * rng.uniform(0.9, 1.1, (n, 3))
    return dict(
        positions=pos,
        sh_dc=(color - 0.5) / SH_C0,
        sh_rest=sh_rest,
        opacity_raw=_logit(rng.uniform(0.8, 0.95, n)),
        scale_raw=np.log(scale),
        rotation=_z_rotation(rng, n),
    ), cell


def generate(spec: SynthSpec = SynthSpec()) -> SynthScene:
    """Build the scene, its camera ring with ground-truth images and labels."""
    spec.validate()
    rng = derive_rng(spec.seed, "synthgen")
    parts, labels = [], []
    cell = spec.extent / max(1, int(np.ceil(np.sqrt(max(spec.informative, 1)))))
    base = None
    if spec.informative:
        fields, cell = _informative(spec, rng)
        base = SplatScene(**fields)
        parts.append(base)
        labels += ["informative"] * spec.informative

    if spec.clones:
        n = spec.clones
        src = rng.choice(spec.informative, size=n, replace=n > spec.informative)
        jitter = np.concatenate([rng.normal(0.0, 0.25 * cell, (n, 2)), rng.normal(0.0, 0.01, (n, 1))], axis=1)
        color = np.clip(0.5 + SH_C0 * base.sh_dc[src] + rng.normal(0.0, 0.2, (n, 3)), 0.0, 1.0)
        parts.append(
            SplatScene(
                positions=base.positions[src] + jitter,
                sh_dc=(color - 0.5) / SH_C0,
                sh_rest=base.sh_rest[src] + rng.normal(0.0, 0.02, (n, 45)),
                opacity_raw=_logit(rng.uniform(0.4, 0.7, n)),
                scale_raw=base.scale_raw[src] + np.log(rng.uniform(0.45, 0.7, (n, 3))),
                rotation=base.rotation[src],
            )
        )
        labels += ["clone"] * n

    if spec.floaters:
        parts.append(_floaters(spec, rng, parts, cell))
        labels += ["floater"] * spec.floaters

    half = spec.extent / 2.0
    if spec.ghosts:
        n = spec.ghosts
        pos = np.concatenate([rng.uniform(-half, half, (n, 2)), rng.uniform(0.0, 0.15, (n, 1))], axis=1)
        parts.append(
            SplatScene(
                positions=pos,
                sh_dc=rng.normal(0.0, 1.0, (n, 3)),
                sh_rest=rng.normal(0.0, 0.05, (n, 45)),
                opacity_raw=_logit(rng.uniform(0.002, 0.015, n)),
                scale_raw=np.log(rng.uniform(0.3, 1.0, (n, 3)) * cell),
                rotation=_random_rotation(rng, n),
            )
        )
        labels += ["ghost"] * n

    if spec.blobs:
        n = spec.blobs
        pos = np.concatenate([rng.uniform(-half, half, (n, 2)), rng.uniform(0.01, 0.05, (n, 1))], axis=1)
        color = np.clip(texture(pos[:, :2], spec.extent) + 0.35 * rng.choice([-1.0, 1.0], (n, 1)), 0.0, 1.0)
        parts.append(
            SplatScene(
                positions=pos,
                sh_dc=(color - 0.5) / SH_C0,
                sh_rest=np.zeros((n, 45)),
                opacity_raw=_logit(rng.uniform(0.5, 0.8, n)),
                scale_raw=np.log(rng.uniform(0.4, 0.8, (n, 3)) * cell),
                rotation=_random_rotation(rng, n),
            )
        )
        labels += ["blob"] * n

    scene = concat(*parts)
    labels = np.array(labels)
    views = camera_ring(spec)
    informative = select(scene, labels == "informative")
    images = parallel_map(lambda v: render(v, informative).image, views)
    views = [v.with_image(img) for v, img in zip(views, images)]
    return SynthScene(scene=scene, views=views, labels=labels, spec=spec)


def _floaters(spec: SynthSpec, rng, parts, cell) -> SplatScene:
    n = spec.floaters
    surface = concat(*parts) if parts else None
    if surface is not None and len(surface) >= 2:
        spacing = float(np.median(avg_knn_distance(build_knn(surface.positions, SPACING_K))))
    else:
        spacing = cell
    # Rejection sampling on the quantity that is later verified: every
    # floater's mean distance to its SPACING_K nearest points (surface and
    # other floaters) must stay above the margin-padded target.
    target = FLOATER_FACTOR * spacing * 1.1
    half = spec.extent / 2.0
    fixed = surface.positions.astype(np.float64) if surface is not None else np.zeros((0, 3))
    z0 = max(target, 0.3)
    # the box grows with the target so sparse scenes still have room
    reach, depth = max(1.2 * half, target), max(2.0, 2.0 * target)
    accepted: list = []

    def mean_knn(point, others):
        d = np.sort(np.linalg.norm(others - point, axis=1))[:SPACING_K]
        return float(d.mean()) if len(d) else np.inf

    tries = 0
    while len(accepted) < n:
        tries += 1
        if tries > 200000:
            raise ValidationError("could not place floaters; reduce their count")
        cand = np.array([
            rng.uniform(-reach, reach),
            rng.uniform(-reach, reach),
            rng.uniform(z0, z0 + depth),
        ])
        pts = np.vstack([fixed] + [np.array(accepted)] if accepted else [fixed])
        if mean_knn(cand, pts) < target:
            continue
        if accepted:
            acc = np.array(accepted)
            ok = True
            for i, a in enumerate(acc):
                others = np.vstack([fixed, np.delete(acc, i, axis=0), cand[None]])
                if mean_knn(a, others) < target:
                    ok = False
                    break
            if not ok:
                continue
        accepted.append(cand)
    pos = np.array(accepted)
    return SplatScene(
        positions=pos,
        sh_dc=rng.normal(0.0, 1.2, (n, 3)),
        sh_rest=rng.normal(0.0, 0.1, (n, 45)),
        opacity_raw=_logit(rng.uniform(0.4, 0.9, n)),
        scale_raw=np.log(rng.uniform(0.5, 1.5, (n, 3)) * cell),
        rotation=_random_rotation(rng, n),
    )


def camera_ring(spec: SynthSpec) -> list[CameraView]:
    size = spec.image_size
    f = size / (2.0 * np.tan(np.radians(spec.fov_deg) / 2.0))
    elev = np.radians(spec.elevation_deg)
    views = []
    for i in range(spec.cameras):
        az = 2.0 * np.pi * i / spec.cameras
        eye = spec.radius * np.array([np.cos(elev) * np.cos(az), np.cos(elev) * np.sin(az), np.sin(elev)])
        views.append(
            CameraView(size, size, f, f, size / 2.0, size / 2.0, look_at(eye, np.zeros(3)), name=f"cam{i:03d}")
        )
    return views


def split_views(views: list, holdout_every: int = 3) -> tuple[list, list]:
    """Train/test split: every ``holdout_every``-th view is held out."""
    test = [v for i, v in enumerate(views) if i % holdout_every == holdout_every - 1]
    train = [v for i, v in enumerate(views) if i % holdout_every != holdout_every - 1]
    return train, test


def write_dataset(synth: SynthScene, out_dir, holdout_every: int = 3) -> dict:
    """Write PLY, camera JSON, PNG + raw images, labels CSV and manifests.

    Returns the written paths. ``manifest.txt`` lists the training cameras,
    ``cameras_test.json`` the held-out ones.
    """
    from pathlib import Path

    from .formats import write_cameras, write_png, write_raw_image
    from .scene import save_ply

    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    save_ply(synth.scene, out / "scene.ply")
    names = []
    for v in synth.views:
        write_png(out / "images" / f"{v.name}.png", v.gt_image)
        write_raw_image(out / "images" / f"{v.name}.rapi", v.gt_image)
        names.append(f"{v.name}.png")
    idx = np.arange(len(synth.views))
    test_idx = idx[idx % holdout_every == holdout_every - 1]
    train_idx = idx[idx % holdout_every != holdout_every - 1]
    write_cameras(out / "cameras.json", synth.views, names)
    write_cameras(out / "cameras_train.json", [synth.views[i] for i in train_idx], [names[i] for i in train_idx])
    write_cameras(out / "cameras_test.json", [synth.views[i] for i in test_idx], [names[i] for i in test_idx])
    with open(out / "labels.csv", "w") as fh:
        fh.write("index,label,redundant\n")
        for i, lab in enumerate(synth.labels):
            fh.write(f"{i},{lab},{int(lab != 'informative')}\n")
    (out / "manifest.txt").write_text("scene.ply cameras_train.json images\n")
    return {
        "scene": out / "scene.ply",
        "cameras": out / "cameras.json",
        "cameras_train": out / "cameras_train.json",
        "cameras_test": out / "cameras_test.json",
        "labels": out / "labels.csv",
        "manifest": out / "manifest.txt",
        "images": out / "images",
    }


def read_labels(path) -> np.ndarray:
    import csv

    with open(path) as fh:
        return np.array([row["label"] for row in csv.DictReader(fh)])
