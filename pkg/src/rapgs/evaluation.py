"""Retention curves, Bjontegaard delta-rate and ranking quality."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import OverlapError, ValidationError
from .metrics import capped, psnr
from .parallel import parallel_map
from .pruning import ratio_mask
from .render import render
from .scene import SplatScene, scene_nbytes, select

DEFAULT_RATIOS = tuple(round(0.05 * i, 2) for i in range(1, 20))
RATE_MODES = ("bytes", "count")


@dataclass(frozen=True, eq=False)
class RdCurve:
    """Rate/quality points with strictly increasing rates."""

    rates: np.ndarray
    quality: np.ndarray
    ratios: np.ndarray | None = None
    kept: np.ndarray | None = None
    label: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        rates = np.asarray(self.rates, dtype=np.float64)
        quality = np.asarray(self.quality, dtype=np.float64)
        if rates.ndim != 1 or rates.shape != quality.shape:
            raise ValidationError("rates and quality must be 1-D and the same length")
        if len(rates) < 2:
            raise ValidationError("a curve needs at least 2 points")
        if not (rates > 0).all():
            raise ValidationError("rates must be positive")
        if not (np.diff(rates) > 0).all():
            raise ValidationError("rates must be strictly increasing")
        if not np.isfinite(quality).all():
            raise ValidationError("quality values must be finite")
        object.__setattr__(self, "rates", rates)
        object.__setattr__(self, "quality", quality)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["ratio", "kept", "rate", "psnr"])
        for i in range(len(self.rates)):
            w.writerow([
                "" if self.ratios is None else repr(float(self.ratios[i])),
                "" if self.kept is None else int(self.kept[i]),
                repr(float(self.rates[i])),
                repr(float(self.quality[i])),
            ])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, label: str = "") -> "RdCurve":
        rows = list(csv.DictReader(io.StringIO(text)))
        if not rows or "rate" not in rows[0] or "psnr" not in rows[0]:
            raise ValidationError("curve CSV needs 'rate' and 'psnr' columns")
        ratios = [float(r["ratio"]) for r in rows] if rows[0].get("ratio") else None
        kept = [int(r["kept"]) for r in rows] if rows[0].get("kept") else None
        return cls(
            rates=[float(r["rate"]) for r in rows],
            quality=[float(r["psnr"]) for r in rows],
            ratios=None if ratios is None else np.array(ratios),
            kept=None if kept is None else np.array(kept),
            label=label,
        )


def average_psnr(scene: SplatScene, views, background=(0.0, 0.0, 0.0)) -> float:
    """Mean PSNR over ``views`` (each capped at 100 dB)."""
    values = parallel_map(lambda v: capped(psnr(render(v, scene, None, background).image, v.gt_image)), views)
    return float(np.mean(values))


def retention_curve(
    scene: SplatScene,
    scores,
    views,
    ratios=DEFAULT_RATIOS,
    rate_mode: str = "bytes",
    background=(0.0, 0.0, 0.0),
    label: str = "",
) -> RdCurve:
    """PSNR after keeping each fraction of the highest-scoring primitives."""
    if rate_mode not in RATE_MODES:
        raise ValidationError(f"rate mode must be one of {RATE_MODES}")
    ratios = np.asarray(ratios, dtype=np.float64)
    if len(ratios) == 0 or not (np.diff(ratios) > 0).all() or ratios[0] <= 0 or ratios[-1] > 1:
        raise ValidationError("ratios must be ascending within (0, 1]")
    if not views or any(v.gt_image is None for v in views):
        raise ValidationError("evaluation views need ground-truth images")
    scores = np.asarray(scores, dtype=np.float64)
    rates, quality, kept = [], [], []
    for r in ratios:
        pruned = select(scene, ratio_mask(scores, r))
        kept.append(len(pruned))
        rates.append(scene_nbytes(pruned) if rate_mode == "bytes" else len(pruned))
        quality.append(average_psnr(pruned, views, background))
    if len(set(kept)) != len(kept):
        raise ValidationError(
            f"ratios {list(ratios)} give repeated retained counts {kept} on a scene of {len(scene)}"
        )
    return RdCurve(np.array(rates, float), np.array(quality), ratios, np.array(kept), label)


def _log_rate_integral(curve: RdCurve, lo: float, hi: float) -> float:
    coeffs = np.polyfit(curve.quality, np.log10(curve.rates), 3)
    prim = np.polyint(coeffs)
    return float(np.polyval(prim, hi) - np.polyval(prim, lo))


def bd_rate(test: RdCurve, anchor: RdCurve) -> float:
    """Bjontegaard delta-rate in percent; negative means ``test`` is cheaper.

    Classic formulation: cubic fit of log10(rate) against PSNR for each
    curve, averaged difference over the shared PSNR interval.
    """
    for name, c in (("test", test), ("anchor", anchor)):
        if len(c.rates) < 4:
            raise ValidationError(f"{name} curve needs at least 4 points, has {len(c.rates)}")
    lo = max(test.quality.min(), anchor.quality.min())
    hi = min(test.quality.max(), anchor.quality.max())
    if not hi > lo:
        raise OverlapError(f"PSNR ranges do not overlap ({lo:.3f} >= {hi:.3f})")
    diff = (_log_rate_integral(test, lo, hi) - _log_rate_integral(anchor, lo, hi)) / (hi - lo)
    return float((10.0**diff - 1.0) * 100.0)


def auroc(scores, positive) -> float:
    """Area under the ROC curve of ``scores`` separating ``positive`` from the rest.

    Mann-Whitney statistic with average ranks for ties.
    """
    s = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(positive, dtype=bool)
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValidationError("AUROC needs both classes")
    order = np.argsort(s, kind="mergesort")
    ranks = np.empty(len(s))
    sorted_s = s[order]
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and sorted_s[j + 1] == sorted_s[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))
