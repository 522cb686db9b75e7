"""Per-primitive importance features.

Eight raw attributes per primitive (average neighbor distance, color
anisotropy, sorted scales, volume, opacity, DC color) are standardized
against scene-wide and neighborhood statistics, clipped to percentiles and
rescaled to [0, 1], giving a 15-column matrix: 7 global columns followed
by 8 local ones (DC color only gets a local column).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import sh
from .errors import ValidationError
from .neighbors import SIGMA_FLOOR, NeighborTable, avg_knn_distance, build_knn, local_stats
from .parallel import chunk_slices, derive_rng, parallel_map
from .scene import SplatScene, activate

RAW_COLUMNS = ("d", "A", "s0", "s1", "s2", "V", "o", "C")
FEATURE_COLUMNS = tuple(f"{c}_global" for c in RAW_COLUMNS[:7]) + tuple(
    f"{c}_local" for c in RAW_COLUMNS
)
N_FEATURES = len(FEATURE_COLUMNS)

DEFAULT_K = 128
DEFAULT_M = 64
DEFAULT_CLIP = (1.0, 99.0)

# Percentile ranges narrower than this (in z-score units) are treated as constant.
_DEGENERATE_RANGE = 1e-6
_ROW_CHUNK = 8192


def color_anisotropy(sh_dc, sh_rest, m: int = DEFAULT_M, seed: int = 0) -> np.ndarray:
    """Channel-averaged population std of SH color over ``m`` random directions.

    Directions are drawn uniformly on the sphere once and shared by every
    primitive. Colors are not clamped. Only the view-dependent terms are
    evaluated since the DC term shifts every sample equally.
    """
    if m < 2:
        raise ValidationError(f"direction count must be >= 2, got {m}")
    dirs = sh.uniform_directions(m, derive_rng(seed, "anisotropy"))
    rest_basis = sh.basis(dirs)[:, 1:].T  # (15, M)
    rest = np.asarray(sh_rest, dtype=np.float64).reshape(-1, 3, 15)

    def block(sl):
        colors = rest[sl] @ rest_basis  # (rows, 3, M)
        return colors.std(axis=2).mean(axis=1)

    parts = parallel_map(block, chunk_slices(len(rest), _ROW_CHUNK))
    return np.concatenate(parts) if parts else np.zeros(0)


def dc_color(sh_dc) -> np.ndarray:
    return np.mean(0.5 + sh.SH_C0 * np.asarray(sh_dc, dtype=np.float64), axis=1)


def compute_raw(scene: SplatScene, table: NeighborTable | None, m: int = DEFAULT_M, seed: int = 0) -> np.ndarray:
    """Raw (N, 8) feature matrix in RAW_COLUMNS order.

    ``table`` may be None only for scenes with fewer than two primitives,
    in which case the neighbor distance column is zero.
    """
    n = len(scene)
    if table is not None and len(table) != n:
        raise ValidationError(f"neighbor table has {len(table)} rows, scene has {n}")
    act = activate(scene)
    scales = np.sort(act.scales, axis=1)
    raw = np.empty((n, 8), dtype=np.float64)
    raw[:, 0] = avg_knn_distance(table) if table is not None else 0.0
    raw[:, 1] = color_anisotropy(scene.sh_dc, scene.sh_rest, m, seed)
    raw[:, 2:5] = scales
    raw[:, 5] = scales[:, 0] * scales[:, 1] * scales[:, 2]
    raw[:, 6] = act.opacities
    raw[:, 7] = dc_color(scene.sh_dc)
    return raw


def global_zscores(raw: np.ndarray) -> np.ndarray:
    raw = np.asarray(raw, dtype=np.float64)
    mu = raw.mean(axis=0)
    sd = np.maximum(raw.std(axis=0), SIGMA_FLOOR)
    z = (raw - mu) / sd
    z[:, np.ptp(raw, axis=0) == 0] = 0.0
    return z


def local_zscores(raw: np.ndarray, table: NeighborTable) -> np.ndarray:
    mu, sd = local_stats(raw, table)
    return (np.asarray(raw, dtype=np.float64) - mu) / sd


def clip_rescale(column: np.ndarray, clip=DEFAULT_CLIP) -> np.ndarray:
    """Clip to the ``clip`` percentiles (linear interpolation) and map to [0, 1].

    A column whose percentile range collapses maps to 0.5.
    """
    lo, hi = np.percentile(column, clip)
    if not hi - lo > _DEGENERATE_RANGE:
        return np.full(column.shape, 0.5)
    return (np.clip(column, lo, hi) - lo) / (hi - lo)


def normalize(raw: np.ndarray, table: NeighborTable, clip=DEFAULT_CLIP) -> np.ndarray:
    """(N, 15) float32 feature matrix with every entry in [0, 1]."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 2 or raw.shape[1] != 8:
        raise ValidationError(f"raw features must be (N, 8), got {raw.shape}")
    if len(raw) < 2:
        raise ValidationError("normalization needs at least 2 primitives")
    lo, hi = clip
    if not 0 <= lo < hi <= 100:
        raise ValidationError(f"bad clip percentiles {clip}")
    z = np.concatenate([global_zscores(raw)[:, :7], local_zscores(raw, table)], axis=1)
    out = np.empty(z.shape, dtype=np.float32)
    for j in range(z.shape[1]):
        out[:, j] = clip_rescale(z[:, j], clip)
    return out


@dataclass(frozen=True, eq=False)
class FeatureResult:
    features: np.ndarray
    raw: np.ndarray
    table: NeighborTable | None
    degenerate: bool


def extract_features(
    scene: SplatScene,
    k: int = DEFAULT_K,
    m: int = DEFAULT_M,
    seed: int = 0,
    clip=DEFAULT_CLIP,
) -> FeatureResult:
    """Full feature pipeline; scenes with fewer than 2 primitives yield rows of 0.5."""
    n = len(scene)
    if n < 2:
        raw = compute_raw(scene, None, m, seed)
        return FeatureResult(np.full((n, N_FEATURES), 0.5, dtype=np.float32), raw, None, True)
    table = build_knn(scene.positions, k)
    raw = compute_raw(scene, table, m, seed)
    feats = normalize(raw, table, clip)
    return FeatureResult(feats, raw, table, table.degenerate)
