"""On-disk formats: binary feature/score/image files, camera JSON, manifests,
CSV tables and provenance sidecars."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import struct
from pathlib import Path

import numpy as np

from .errors import FeatureFormatError, ValidationError
from .scene import CameraView

FEATURE_MAGIC = b"RAPF"
SCORE_MAGIC = b"RAPS"
IMAGE_MAGIC = b"RAPI"
FORMAT_VERSION = 1

_VEC_HEADER = struct.Struct("<4sIQ")   # magic, version, N  (16 bytes)
_IMG_HEADER = struct.Struct("<4sII")   # magic, H, W        (12 bytes)


def _write(path, blob: bytes) -> None:
    with open(path, "wb") as fh:
        fh.write(blob)


def feature_bytes(features: np.ndarray) -> bytes:
    f = np.asarray(features, dtype="<f4")
    if f.ndim != 2 or f.shape[1] != 15:
        raise ValidationError(f"feature matrix must be (N, 15), got {f.shape}")
    return _VEC_HEADER.pack(FEATURE_MAGIC, FORMAT_VERSION, f.shape[0]) + np.ascontiguousarray(f).tobytes()


def write_features(path, features) -> None:
    _write(path, feature_bytes(features))


def _read_vector(path, magic: bytes, width: int) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < _VEC_HEADER.size:
        raise FeatureFormatError(f"{path}: file too short for header")
    got, version, n = _VEC_HEADER.unpack_from(data)
    if got != magic:
        raise FeatureFormatError(f"{path}: bad magic {got!r}, expected {magic!r}")
    if version != FORMAT_VERSION:
        raise FeatureFormatError(f"{path}: unsupported version {version}")
    need = n * width * 4
    body = data[_VEC_HEADER.size:]
    if len(body) != need:
        raise FeatureFormatError(f"{path}: payload is {len(body)} bytes, expected {need}")
    arr = np.frombuffer(body, dtype="<f4").astype(np.float32)
    return arr.reshape(n, width) if width > 1 else arr


def read_features(path) -> np.ndarray:
    return _read_vector(path, FEATURE_MAGIC, 15)


def score_bytes(scores) -> bytes:
    s = np.asarray(scores, dtype="<f4").ravel()
    return _VEC_HEADER.pack(SCORE_MAGIC, FORMAT_VERSION, len(s)) + s.tobytes()


def write_scores(path, scores) -> None:
    _write(path, score_bytes(scores))


def read_scores(path) -> np.ndarray:
    return _read_vector(path, SCORE_MAGIC, 1)


def write_raw_image(path, image) -> None:
    img = np.asarray(image, dtype="<f4")
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValidationError(f"image must be (H, W, 3), got {img.shape}")
    _write(path, _IMG_HEADER.pack(IMAGE_MAGIC, img.shape[0], img.shape[1]) + img.tobytes())


def read_raw_image(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < _IMG_HEADER.size:
        raise FeatureFormatError(f"{path}: file too short for header")
    magic, h, w = _IMG_HEADER.unpack_from(data)
    if magic != IMAGE_MAGIC:
        raise FeatureFormatError(f"{path}: bad magic {magic!r}")
    body = data[_IMG_HEADER.size:]
    if len(body) != h * w * 12:
        raise FeatureFormatError(f"{path}: payload size mismatch")
    return np.frombuffer(body, dtype="<f4").reshape(h, w, 3).astype(np.float64)


def write_png(path, image) -> None:
    from PIL import Image

    img = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    Image.fromarray(np.round(img * 255.0).astype(np.uint8), "RGB").save(path)


def read_png(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def read_image(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".rapi":
        return read_raw_image(path)
    return read_png(path)


# ---------------------------------------------------------------------------
# cameras and manifests


def camera_record(view: CameraView, image: str | None) -> dict:
    return {
        "name": view.name,
        "width": view.width,
        "height": view.height,
        "fx": view.fx,
        "fy": view.fy,
        "cx": view.cx,
        "cy": view.cy,
        "world_to_camera": [float(x) for x in view.world_to_camera.ravel()],
        "image": image,
    }


def write_cameras(path, views, image_names) -> None:
    records = [camera_record(v, name) for v, name in zip(views, image_names)]
    Path(path).write_text(json.dumps(records, indent=1) + "\n")


def read_cameras(path, image_dir=None) -> list[CameraView]:
    """Camera JSON records; images are loaded from ``image_dir`` when given."""
    try:
        records = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid camera JSON: {exc}") from None
    views = []
    for i, r in enumerate(records):
        try:
            w2c = np.array(r["world_to_camera"], dtype=np.float64)
            if w2c.size != 16:
                raise ValidationError(f"{path}: record {i} world_to_camera needs 16 values")
            img = None
            if image_dir is not None and r.get("image"):
                img = read_image(Path(image_dir) / r["image"])
            views.append(
                CameraView(int(r["width"]), int(r["height"]), float(r["fx"]), float(r["fy"]),
                           float(r["cx"]), float(r["cy"]), w2c.reshape(4, 4), img,
                           r.get("name") or f"view{i:03d}")
            )
        except KeyError as exc:
            raise ValidationError(f"{path}: record {i} missing field {exc}") from None
    return views


def read_manifest(path) -> list[tuple[Path, Path, Path]]:
    """Lines of ``<ply> <camera json> <image dir>``; relative paths resolve
    against the manifest's directory. Blank lines and ``#`` comments are skipped."""
    base = Path(path).parent
    entries = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ValidationError(f"{path}:{lineno}: expected 3 fields, got {len(parts)}")
        entries.append(tuple(p if Path(p).is_absolute() else base / p for p in map(Path, parts)))
    if not entries:
        raise ValidationError(f"{path}: manifest lists no scenes")
    return entries


# ---------------------------------------------------------------------------
# tables and provenance


def histogram_csv(counts) -> str:
    counts = np.asarray(counts)
    bins = len(counts)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bin", "lo", "hi", "count"])
    for i, c in enumerate(counts):
        w.writerow([i, repr(i / bins), repr((i + 1) / bins), int(c)])
    return buf.getvalue()


def read_histogram_csv(text: str) -> np.ndarray:
    return np.array([int(r["count"]) for r in csv.DictReader(io.StringIO(text))])


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_provenance(artifact, inputs: dict, config: dict, extra: dict | None = None) -> Path:
    """Write ``<artifact>.prov.json`` listing input hashes, config and tool version."""
    from . import __version__

    artifact = Path(artifact)
    doc = {
        "artifact": artifact.name,
        "tool": "rapgs",
        "version": __version__,
        "inputs": {
            k: {"path": str(v), "sha256": sha256_file(v)} for k, v in sorted(inputs.items()) if v is not None
        },
        "config": config,
    }
    if extra:
        doc.update(extra)
    side = artifact.with_name(artifact.name + ".prov.json")
    side.write_text(json.dumps(doc, indent=1, sort_keys=True, default=str) + "\n")
    return side
