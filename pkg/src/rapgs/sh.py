"""Real spherical-harmonic basis up to degree 3, 3DGS ordering and constants."""

from __future__ import annotations

import numpy as np

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
SH_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)

N_COEFFS = 16


def basis(dirs: np.ndarray) -> np.ndarray:
    """Evaluate the 16 basis functions at unit directions, shape (M, 16)."""
    d = np.asarray(dirs, dtype=np.float64)
    x, y, z = d[:, 0], d[:, 1], d[:, 2]
    xx, yy, zz = x * x, y * y, z * z
    xy, yz, xz = x * y, y * z, x * z
    out = np.empty((len(d), N_COEFFS), dtype=np.float64)
    out[:, 0] = SH_C0
    out[:, 1] = -SH_C1 * y
    out[:, 2] = SH_C1 * z
    out[:, 3] = -SH_C1 * x
    out[:, 4] = SH_C2[0] * xy
    out[:, 5] = SH_C2[1] * yz
    out[:, 6] = SH_C2[2] * (2.0 * zz - xx - yy)
    out[:, 7] = SH_C2[3] * xz
    out[:, 8] = SH_C2[4] * (xx - yy)
    out[:, 9] = SH_C3[0] * y * (3.0 * xx - yy)
    out[:, 10] = SH_C3[1] * xy * z
    out[:, 11] = SH_C3[2] * y * (4.0 * zz - xx - yy)
    out[:, 12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy)
    out[:, 13] = SH_C3[4] * x * (4.0 * zz - xx - yy)
    out[:, 14] = SH_C3[5] * z * (xx - yy)
    out[:, 15] = SH_C3[6] * x * (xx - 3.0 * yy)
    return out


def coefficients(sh_dc: np.ndarray, sh_rest: np.ndarray) -> np.ndarray:
    """Stack into (N, 3, 16): per channel, DC first then the 15 rest terms.

    ``sh_rest`` is channel-major as on disk: 15 coefficients of R, then G, then B.
    """
    dc = np.asarray(sh_dc, dtype=np.float64)[:, :, None]
    rest = np.asarray(sh_rest, dtype=np.float64).reshape(-1, 3, 15)
    return np.concatenate([dc, rest], axis=2)


def eval_colors(sh_dc: np.ndarray, sh_rest: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Unclamped RGB for every primitive along every direction, shape (N, 3, M)."""
    return 0.5 + coefficients(sh_dc, sh_rest) @ basis(dirs).T


def eval_per_primitive(sh_dc: np.ndarray, sh_rest: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Unclamped RGB for primitive i along its own direction ``dirs[i]``, shape (N, 3)."""
    coeffs = coefficients(sh_dc, sh_rest)
    return 0.5 + np.einsum("ncj,nj->nc", coeffs, basis(dirs))


def uniform_directions(m: int, rng: np.random.Generator) -> np.ndarray:
    v = rng.standard_normal((m, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)
