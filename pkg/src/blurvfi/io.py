"""Frame directories and their JSON manifests.

A frame directory holds zero-padded numbered PNGs (``00000.png`` ...) and a
``manifest.json``. Frame ``k`` of the directory sits at output index
``first_index + k * index_step``: blurry inputs use step 2 (indices 0, 2,
4, ...), ground truth and model outputs step 1.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import cv2
import jsonschema
import numpy as np

from . import __version__
from .errors import InputError

SCHEMA_VERSION = 1
MANIFEST_NAME = "manifest.json"
ROLES = ("latents", "blurry", "gt", "outputs")

MANIFEST_SCHEMA = {
    "type": "object",
    "required": ["fps", "frame_count", "width", "height"],
    "properties": {
        "schema_version": {"type": "integer", "const": SCHEMA_VERSION},
        "role": {"enum": list(ROLES)},
        "fps": {"type": "number", "exclusiveMinimum": 0},
        "frame_count": {"type": "integer", "minimum": 0},
        "width": {"type": "integer", "minimum": 1},
        "height": {"type": "integer", "minimum": 1},
        "first_index": {"type": "integer"},
        "index_step": {"type": "integer", "minimum": 1},
        "bit_depth": {"enum": [8, 16]},
        "degradation": {
            "type": ["object", "null"],
            "required": ["K", "tau"],
            "properties": {"K": {"type": "integer"}, "tau": {"type": "integer"}},
        },
        "provenance": {"type": "object"},
    },
    "additionalProperties": False,
}


def validate_manifest(manifest: dict) -> dict:
    try:
        jsonschema.validate(manifest, MANIFEST_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise InputError(f"invalid manifest: {exc.message}") from None
    return manifest


def make_manifest(role: str, fps: float, frames: np.ndarray, *, first_index: int = 0,
                  index_step: int = 1, bit_depth: int = 8, degradation: dict | None = None,
                  provenance: dict | None = None) -> dict:
    prov = {"tool_version": __version__}
    prov.update(provenance or {})
    return validate_manifest({
        "schema_version": SCHEMA_VERSION,
        "role": role,
        "fps": float(fps),
        "frame_count": int(frames.shape[0]),
        "width": int(frames.shape[2]),
        "height": int(frames.shape[1]),
        "first_index": first_index,
        "index_step": index_step,
        "bit_depth": bit_depth,
        "degradation": degradation,
        "provenance": prov,
    })


def read_manifest(directory) -> dict:
    path = Path(directory) / MANIFEST_NAME
    if not path.exists():
        raise InputError(f"{directory} has no {MANIFEST_NAME}")
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: {exc}") from None
    return validate_manifest(manifest)


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def frame_files(directory) -> list[Path]:
    return sorted(p for p in Path(directory).glob("*.png") if p.stem.isdigit())


def quantize(frame: np.ndarray, bit_depth: int = 8) -> np.ndarray:
    peak = 255 if bit_depth == 8 else 65535
    dtype = np.uint8 if bit_depth == 8 else np.uint16
    return np.round(np.clip(frame, 0.0, 1.0) * peak).astype(dtype)


def write_png(path, frame: np.ndarray, bit_depth: int = 8) -> None:
    q = quantize(frame, bit_depth)
    if not cv2.imwrite(str(path), cv2.cvtColor(q, cv2.COLOR_RGB2BGR)):
        raise OSError(f"could not write {path}")


def read_png(path) -> np.ndarray:
    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise InputError(f"could not read image {path}")
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=2)
    img = cv2.cvtColor(img[..., :3], cv2.COLOR_BGR2RGB)
    peak = 65535.0 if img.dtype == np.uint16 else 255.0
    return img.astype(np.float64) / peak


def write_frames(directory, frames: np.ndarray, manifest: dict) -> Path:
    """Write (T, H, W, 3) frames in [0, 1] as numbered PNGs plus the manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for stale in frame_files(directory):
        stale.unlink()
    bit_depth = manifest.get("bit_depth", 8)
    first, step = manifest.get("first_index", 0), manifest.get("index_step", 1)
    for k, frame in enumerate(frames):
        write_png(directory / f"{first + k * step:05d}.png", frame, bit_depth)
    write_json(directory / MANIFEST_NAME, manifest)
    return directory


def read_frames(directory) -> tuple[np.ndarray, dict]:
    """Load a frame directory; the manifest must agree with the files on disk."""
    manifest = read_manifest(directory)
    files = frame_files(directory)
    if len(files) != manifest["frame_count"]:
        raise InputError(
            f"{directory}: manifest lists {manifest['frame_count']} frames, found {len(files)}"
        )
    if not files:
        raise InputError(f"{directory} contains no frames")
    frames = np.stack([read_png(p) for p in files])
    if frames.shape[1:3] != (manifest["height"], manifest["width"]):
        raise InputError(f"{directory}: frame size {frames.shape[1:3]} disagrees with manifest")
    return frames, manifest


def frame_indices(manifest: dict) -> list[int]:
    first, step = manifest.get("first_index", 0), manifest.get("index_step", 1)
    return [first + k * step for k in range(manifest["frame_count"])]


def directory_digest(directory) -> str:
    """SHA-256 over relative paths and contents of every file below ``directory``."""
    root = Path(directory)
    digest = hashlib.sha256()
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        digest.update(str(path.relative_to(root)).encode())
        digest.update(path.read_bytes())
    return digest.hexdigest()
