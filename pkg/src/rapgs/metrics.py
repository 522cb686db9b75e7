"""PSNR and SSIM / D-SSIM (with analytic gradient)."""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .errors import ValidationError

PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


def _check_pair(img, ref):
    a = np.asarray(img, dtype=np.float64)
    b = np.asarray(ref, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(img, ref) -> float:
    """10*log10(1/MSE) over all channels; identical images give +inf."""
    a, b = _check_pair(img, ref)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(1.0 / mse))


def capped(db: float) -> float:
    return min(db, PSNR_CAP)


def gaussian_kernel(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    k = np.exp(-(x**2) / (2.0 * sigma**2))
    return k / k.sum()


@lru_cache(maxsize=32)
def _band(n: int, size: int, sigma: float) -> np.ndarray:
    """(n - size + 1, n) matrix performing a valid 1-D correlation."""
    k = gaussian_kernel(size, sigma)
    m = np.zeros((n - size + 1, n))
    for i in range(n - size + 1):
        m[i, i:i + size] = k
    m.setflags(write=False)
    return m


def _filter(x, gh, gw):
    # x: (H, W, C) -> (H', W', C)
    return np.einsum("ah,hwc,bw->abc", gh, x, gw, optimize=True)


def _filter_adjoint(y, gh, gw):
    return np.einsum("ah,abc,bw->hwc", gh, y, gw, optimize=True)


def _ssim_parts(a, b):
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    h, w = a.shape[:2]
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ValidationError(f"image {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    gh = _band(h, SSIM_WINDOW, SSIM_SIGMA)
    gw = _band(w, SSIM_WINDOW, SSIM_SIGMA)
    mu_a, mu_b = _filter(a, gh, gw), _filter(b, gh, gw)
    s_aa = _filter(a * a, gh, gw) - mu_a**2
    s_bb = _filter(b * b, gh, gw) - mu_b**2
    s_ab = _filter(a * b, gh, gw) - mu_a * mu_b
    num1 = 2.0 * mu_a * mu_b + SSIM_C1
    num2 = 2.0 * s_ab + SSIM_C2
    den1 = mu_a**2 + mu_b**2 + SSIM_C1
    den2 = s_aa + s_bb + SSIM_C2
    smap = (num1 * num2) / (den1 * den2)
    return a, b, gh, gw, mu_a, mu_b, num1, num2, den1, den2, smap


def ssim(img, ref) -> float:
    """Mean SSIM over valid window positions and channels (11x11 Gaussian, sigma 1.5)."""
    a, b = _check_pair(img, ref)
    return float(_ssim_parts(a, b)[-1].mean())


def dssim(img, ref) -> float:
    return (1.0 - ssim(img, ref)) / 2.0


def dssim_with_grad(img, ref) -> tuple[float, np.ndarray]:
    """D-SSIM and its gradient with respect to ``img``."""
    a0, b0 = _check_pair(img, ref)
    a, b, gh, gw, mu_a, mu_b, num1, num2, den1, den2, smap = _ssim_parts(a0, b0)
    count = smap.size
    d_s = np.full(smap.shape, -0.5 / count)  # d dssim / d smap
    # partials of smap w.r.t. mu_a, sigma_aa, sigma_ab
    d_mu = d_s * (
        (2.0 * mu_b * num2) / (den1 * den2) - smap * (2.0 * mu_a) / den1
    )
    d_saa = d_s * (-smap / den2)
    d_sab = d_s * (2.0 * num1) / (den1 * den2)
    # sigma_aa = F(a^2) - mu_a^2, sigma_ab = F(ab) - mu_a mu_b
    d_mu_total = d_mu - 2.0 * mu_a * d_saa - mu_b * d_sab
    grad = (
        _filter_adjoint(d_mu_total, gh, gw)
        + 2.0 * a * _filter_adjoint(d_saa, gh, gw)
        + b * _filter_adjoint(d_sab, gh, gw)
    )
    value = (1.0 - float(smap.mean())) / 2.0
    return value, grad.reshape(a0.shape)
