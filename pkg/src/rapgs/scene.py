"""Gaussian-splat scene container, camera views and PLY serialization."""

from __future__ import annotations

import gzip
import hashlib
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import (
    DegenerateRotationError,
    PlyFormatError,
    TruncationError,
    ValidationError,
)

SH_REST_COUNT = 45

# Standard 3DGS export layout, 62 little-endian float32 per vertex.
PLY_PROPERTIES: tuple[str, ...] = (
    ("x", "y", "z", "nx", "ny", "nz")
    + tuple(f"f_dc_{i}" for i in range(3))
    + tuple(f"f_rest_{i}" for i in range(SH_REST_COUNT))
    + ("opacity",)
    + tuple(f"scale_{i}" for i in range(3))
    + tuple(f"rot_{i}" for i in range(4))
)

_FLOAT_TYPES = {"float", "float32"}
_PLY_TYPE_SIZES = {
    "char": 1, "uchar": 1, "int8": 1, "uint8": 1,
    "short": 2, "ushort": 2, "int16": 2, "uint16": 2,
    "int": 4, "uint": 4, "int32": 4, "uint32": 4,
    "float": 4, "float32": 4, "double": 8, "float64": 8,
}


def _frozen(a, dtype, shape) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    if arr.size == 0:
        arr = arr.reshape(shape)
    if arr.shape != shape:
        raise ValidationError(f"expected shape {shape}, got {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class SplatScene:
    """Structure-of-arrays container for N Gaussian primitives.

    All fields are float32 and read-only; derive new scenes with
    :func:`select` or :meth:`replace`.
    """

    positions: np.ndarray
    sh_dc: np.ndarray
    sh_rest: np.ndarray
    opacity_raw: np.ndarray
    scale_raw: np.ndarray
    rotation: np.ndarray

    def __post_init__(self):
        n = len(np.asarray(self.positions).reshape(-1, 3))
        shapes = {
            "positions": (n, 3),
            "sh_dc": (n, 3),
            "sh_rest": (n, SH_REST_COUNT),
            "opacity_raw": (n,),
            "scale_raw": (n, 3),
            "rotation": (n, 4),
        }
        for name, shape in shapes.items():
            try:
                value = _frozen(getattr(self, name), np.float32, shape)
            except ValidationError as exc:
                raise ValidationError(f"{name}: {exc}") from None
            object.__setattr__(self, name, value)

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def n(self) -> int:
        return len(self)

    @classmethod
    def empty(cls) -> "SplatScene":
        return cls(
            positions=np.zeros((0, 3)),
            sh_dc=np.zeros((0, 3)),
            sh_rest=np.zeros((0, SH_REST_COUNT)),
            opacity_raw=np.zeros(0),
            scale_raw=np.zeros((0, 3)),
            rotation=np.zeros((0, 4)),
        )

    def replace(self, **changes) -> "SplatScene":
        fields = {
            "positions": self.positions,
            "sh_dc": self.sh_dc,
            "sh_rest": self.sh_rest,
            "opacity_raw": self.opacity_raw,
            "scale_raw": self.scale_raw,
            "rotation": self.rotation,
        }
        fields.update(changes)
        return SplatScene(**fields)

    def validate(self) -> None:
        """Raise ValidationError on NaN/Inf anywhere in the scene."""
        for name in ("positions", "sh_dc", "sh_rest", "opacity_raw", "scale_raw", "rotation"):
            arr = getattr(self, name)
            bad = ~np.isfinite(arr)
            if bad.any():
                row = int(np.argwhere(bad)[0][0])
                raise ValidationError(f"non-finite value in {name} at index {row}")


class Activated(NamedTuple):
    opacities: np.ndarray
    scales: np.ndarray
    rotations: np.ndarray


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def activate(scene: SplatScene) -> Activated:
    """Apply the 3DGS activations in float64.

    Opacity goes through a sigmoid, scales through exp, and quaternions
    are normalized. Zero-norm quaternions raise DegenerateRotationError.
    """
    q = scene.rotation.astype(np.float64)
    norms = np.linalg.norm(q, axis=1)
    bad = np.flatnonzero(~(norms > 0))
    if bad.size:
        raise DegenerateRotationError(bad.tolist())
    return Activated(
        opacities=sigmoid(scene.opacity_raw),
        scales=np.exp(scene.scale_raw.astype(np.float64)),
        rotations=q / norms[:, None],
    )


def quaternion_to_matrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrices (N,3,3) from unit quaternions (w, x, y, z)."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    r = np.empty((len(q), 3, 3), dtype=np.float64)
    r[:, 0, 0] = 1 - 2 * (y * y + z * z)
    r[:, 0, 1] = 2 * (x * y - w * z)
    r[:, 0, 2] = 2 * (x * z + w * y)
    r[:, 1, 0] = 2 * (x * y + w * z)
    r[:, 1, 1] = 1 - 2 * (x * x + z * z)
    r[:, 1, 2] = 2 * (y * z - w * x)
    r[:, 2, 0] = 2 * (x * z - w * y)
    r[:, 2, 1] = 2 * (y * z + w * x)
    r[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return r


def select(scene: SplatScene, keep_mask) -> SplatScene:
    """Keep the rows where ``keep_mask`` is true, preserving order."""
    mask = np.asarray(keep_mask)
    if mask.ndim != 1 or mask.shape[0] != len(scene):
        raise ValidationError(
            f"mask length {mask.shape[0] if mask.ndim == 1 else mask.shape} "
            f"does not match scene size {len(scene)}"
        )
    mask = mask.astype(bool)
    return SplatScene(
        positions=scene.positions[mask],
        sh_dc=scene.sh_dc[mask],
        sh_rest=scene.sh_rest[mask],
        opacity_raw=scene.opacity_raw[mask],
        scale_raw=scene.scale_raw[mask],
        rotation=scene.rotation[mask],
    )


def concat(*scenes: SplatScene) -> SplatScene:
    return SplatScene(
        **{
            name: np.concatenate([getattr(s, name) for s in scenes])
            for name in ("positions", "sh_dc", "sh_rest", "opacity_raw", "scale_raw", "rotation")
        }
    )


# ---------------------------------------------------------------------------
# PLY


def _read_maybe_gzip(path) -> bytes:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] == b"\x1f\x8b":
        data = gzip.decompress(data)
    return data


def _parse_header(data: bytes) -> tuple[int, list[tuple[str, str]], int, list]:
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise PlyFormatError("not a PLY file (missing 'ply' magic or end_header)")
    nl = data.find(b"\n", end)
    if nl < 0:
        raise PlyFormatError("unterminated PLY header")
    header = data[:end].decode("ascii", errors="replace").splitlines()
    fmt = None
    elements: list[list] = []
    for line in header[1:]:
        parts = line.split()
        if not parts or parts[0] in ("comment", "obj_info"):
            continue
        if parts[0] == "format":
            fmt = parts[1] if len(parts) > 1 else None
        elif parts[0] == "element":
            if len(parts) != 3:
                raise PlyFormatError(f"bad element line: {line!r}")
            elements.append([parts[1], int(parts[2]), []])
        elif parts[0] == "property":
            if not elements:
                raise PlyFormatError("property before any element")
            if parts[1] == "list":
                raise PlyFormatError(f"list property not supported: {line!r}")
            elements[-1][2].append((parts[2], parts[1]))
    if fmt != "binary_little_endian":
        raise PlyFormatError(f"unsupported PLY format {fmt!r}; need binary_little_endian")
    vertex_idx = [i for i, e in enumerate(elements) if e[0] == "vertex"]
    if not vertex_idx:
        raise PlyFormatError("missing element vertex")
    return vertex_idx[0], elements, nl + 1, header


def load_ply(path) -> SplatScene:
    """Read a binary little-endian 3DGS PLY (optionally gzip-compressed)."""
    data = _read_maybe_gzip(path)
    vi, elements, offset, _ = _parse_header(data)
    # Skip any elements declared before vertex.
    for name, count, props in elements[:vi]:
        offset += count * sum(_PLY_TYPE_SIZES[t] for _, t in props)
    _, count, props = elements[vi]
    names = [p for p, _ in props]
    for required in PLY_PROPERTIES:
        if required in ("nx", "ny", "nz"):
            continue
        if required not in names:
            raise PlyFormatError(f"missing property {required}")
    dtype_fields = []
    for pname, ptype in props:
        if ptype not in _PLY_TYPE_SIZES:
            raise PlyFormatError(f"unknown type {ptype!r} for property {pname}")
        if pname in PLY_PROPERTIES and ptype not in _FLOAT_TYPES:
            raise PlyFormatError(f"property {pname} must be float, got {ptype}")
        code = {1: "u1", 2: "<u2", 4: "<f4" if ptype in _FLOAT_TYPES else "<u4", 8: "<f8"}
        dtype_fields.append((pname, code[_PLY_TYPE_SIZES[ptype]]))
    dt = np.dtype(dtype_fields)
    need = count * dt.itemsize
    if len(data) - offset < need:
        raise TruncationError(
            f"payload holds {(len(data) - offset) // max(dt.itemsize, 1)} of {count} declared vertices"
        )
    rec = np.frombuffer(data, dtype=dt, count=count, offset=offset)

    def cols(prefix, k):
        return np.stack([rec[f"{prefix}{i}"] for i in range(k)], axis=1) if count else np.zeros((0, k))

    scene = SplatScene(
        positions=np.stack([rec["x"], rec["y"], rec["z"]], axis=1) if count else np.zeros((0, 3)),
        sh_dc=cols("f_dc_", 3),
        sh_rest=cols("f_rest_", SH_REST_COUNT),
        opacity_raw=rec["opacity"].copy(),
        scale_raw=cols("scale_", 3),
        rotation=cols("rot_", 4),
    )
    scene.validate()
    return scene


def ply_header(n: int) -> bytes:
    lines = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    lines += [f"property float {p}" for p in PLY_PROPERTIES]
    lines.append("end_header")
    return ("\n".join(lines) + "\n").encode("ascii")


def ply_bytes(scene: SplatScene) -> bytes:
    scene.validate()
    n = len(scene)
    payload = np.zeros((n, len(PLY_PROPERTIES)), dtype="<f4")
    payload[:, 0:3] = scene.positions
    payload[:, 6:9] = scene.sh_dc
    payload[:, 9:54] = scene.sh_rest
    payload[:, 54] = scene.opacity_raw
    payload[:, 55:58] = scene.scale_raw
    payload[:, 58:62] = scene.rotation
    return ply_header(n) + payload.tobytes()


def save_ply(scene: SplatScene, path, compress: bool = False) -> None:
    """Write the scene as standard binary PLY; normals are written as zeros."""
    blob = ply_bytes(scene)
    if compress:
        blob = gzip.compress(blob, mtime=0)
    with open(path, "wb") as fh:
        fh.write(blob)


def ply_payload(path) -> bytes:
    """Bytes following ``end_header`` (decompressed if gzip)."""
    data = _read_maybe_gzip(path)
    _, _, offset, _ = _parse_header(data)
    return data[offset:]


# ---------------------------------------------------------------------------
# Cameras


@dataclass(frozen=True, eq=False)
class CameraView:
    """Pinhole camera with a world-to-camera pose and optional ground truth."""

    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    world_to_camera: np.ndarray
    gt_image: np.ndarray | None = None
    name: str = field(default="")

    def __post_init__(self):
        w2c = np.array(self.world_to_camera, dtype=np.float64).reshape(4, 4)
        w2c.setflags(write=False)
        object.__setattr__(self, "world_to_camera", w2c)
        if self.gt_image is not None:
            img = np.array(self.gt_image, dtype=np.float64)
            if img.shape != (self.height, self.width, 3):
                raise ValidationError(
                    f"gt image shape {img.shape} != ({self.height}, {self.width}, 3)"
                )
            img.setflags(write=False)
            object.__setattr__(self, "gt_image", img)
        self.validate()

    def validate(self) -> None:
        if not (self.fx > 0 and self.fy > 0):
            raise ValidationError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValidationError("principal point outside the image")
        r = self.rotation
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-5):
            raise ValidationError("world_to_camera rotation block is not orthonormal")

    @property
    def rotation(self) -> np.ndarray:
        return self.world_to_camera[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.world_to_camera[:3, 3]

    @property
    def center(self) -> np.ndarray:
        """Camera position in world coordinates."""
        return -self.rotation.T @ self.translation

    def with_image(self, image) -> "CameraView":
        return CameraView(
            self.width, self.height, self.fx, self.fy, self.cx, self.cy,
            self.world_to_camera, image, self.name,
        )


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """World-to-camera matrix for an OpenCV-style camera (x right, y down, z forward)."""
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, np.asarray(up, dtype=np.float64))
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(forward, np.array([0.0, 1.0, 0.0]))
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    rot = np.stack([right, down, forward])
    w2c = np.eye(4)
    w2c[:3, :3] = rot
    w2c[:3, 3] = -rot @ eye
    return w2c


def scene_nbytes(scene: SplatScene) -> int:
    """Size in bytes of the uncompressed PLY for ``scene``."""
    return len(ply_header(len(scene))) + len(scene) * len(PLY_PROPERTIES) * 4


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


__all__ = [
    "Activated",
    "CameraView",
    "PLY_PROPERTIES",
    "SplatScene",
    "activate",
    "concat",
    "file_sha256",
    "load_ply",
    "look_at",
    "ply_bytes",
    "ply_payload",
    "quaternion_to_matrix",
    "save_ply",
    "scene_nbytes",
    "select",
    "sigmoid",
]
