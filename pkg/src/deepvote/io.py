"""On-disk formats: feature grids, named-tensor checkpoints, JSON sidecars.

Feature file (".dvfm"): magic b"DVFM", version u8, then W, H, C as u32 LE,
then W*H*C float32 LE in ``(h*W + w)*C + c`` order: exactly the bytes of a
C-contiguous (H, W, C) float32 array.

Checkpoint (".dvck"): magic b"DVCK", version u8, tensor count u32 LE, then per
tensor: name length u32 LE, UTF-8 name, rank u32 LE, dims u32 LE each, and a
float32 LE payload.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import DataError
from .ops import l2_normalize_locations
from .scene import SceneAnnotation

DVFM_MAGIC = b"DVFM"
DVCK_MAGIC = b"DVCK"
FORMAT_VERSION = 1


def write_dvfm(path, grid: np.ndarray) -> None:
    """Write an (H, W, C) float32 grid as a .dvfm file."""
    path = Path(path)
    if grid.ndim != 3:
        raise DataError(f"{path}: grid must be (H, W, C), got shape {grid.shape}")
    h, w, c = grid.shape
    payload = np.ascontiguousarray(grid, dtype="<f4")
    try:
        with open(path, "wb") as f:
            f.write(DVFM_MAGIC)
            f.write(struct.pack("<B", FORMAT_VERSION))
            f.write(struct.pack("<III", w, h, c))
            f.write(payload.tobytes())
    except OSError as e:
        raise DataError(f"cannot write feature file {path}: {e}") from e


def read_dvfm(path) -> np.ndarray:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as e:
        raise DataError(f"cannot read feature file {path}: {e}") from e
    if len(blob) < 17 or blob[:4] != DVFM_MAGIC:
        raise DataError(f"{path}: not a .dvfm file")
    version = blob[4]
    if version != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported format version {version}")
    w, h, c = struct.unpack("<III", blob[5:17])
    expected = 17 + 4 * w * h * c
    if len(blob) != expected:
        raise DataError(f"{path}: payload length {len(blob) - 17} != header dims {w}x{h}x{c}")
    data = np.frombuffer(blob, dtype="<f4", offset=17)
    return data.reshape(h, w, c).astype(np.float32)


def write_checkpoint(path, tensors: dict[str, np.ndarray]) -> None:
    """Write named float32 tensors in the checkpoint container format."""
    path = Path(path)
    try:
        with open(path, "wb") as f:
            f.write(DVCK_MAGIC)
            f.write(struct.pack("<B", FORMAT_VERSION))
            f.write(struct.pack("<I", len(tensors)))
            for name, tensor in tensors.items():
                raw = name.encode("utf-8")
                f.write(struct.pack("<I", len(raw)))
                f.write(raw)
                arr = np.ascontiguousarray(tensor, dtype="<f4")
                f.write(struct.pack("<I", arr.ndim))
                for dim in arr.shape:
                    f.write(struct.pack("<I", dim))
                f.write(arr.tobytes())
    except OSError as e:
        raise DataError(f"cannot write checkpoint {path}: {e}") from e


def read_checkpoint(path) -> dict[str, np.ndarray]:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as e:
        raise DataError(f"cannot read checkpoint {path}: {e}") from e
    if len(blob) < 9 or blob[:4] != DVCK_MAGIC:
        raise DataError(f"{path}: not a .dvck checkpoint")
    if blob[4] != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported format version {blob[4]}")
    (count,) = struct.unpack("<I", blob[5:9])
    offset = 9
    tensors: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            name = blob[offset:offset + name_len].decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            dims = struct.unpack_from(f"<{rank}I", blob, offset)
            offset += 4 * rank
            size = int(np.prod(dims, dtype=np.int64)) if rank else 1
            data = np.frombuffer(blob, dtype="<f4", count=size, offset=offset)
            offset += 4 * size
            tensors[name] = data.reshape(dims).astype(np.float32)
    except (struct.error, ValueError) as e:
        raise DataError(f"{path}: truncated or corrupt checkpoint: {e}") from e
    return tensors


def write_json(path, payload) -> None:
    """Canonical JSON: sorted keys, 2-space indent, trailing newline."""
    path = Path(path)
    try:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(payload, f, sort_keys=True, indent=2)
            f.write("\n")
    except OSError as e:
        raise DataError(f"cannot write {path}: {e}") from e


def read_json(path):
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: invalid JSON: {e}") from e


def write_annotation(path, ann: SceneAnnotation) -> None:
    write_json(path, ann.to_dict())


def read_annotation(path) -> SceneAnnotation:
    return SceneAnnotation.from_dict(read_json(path))


def load_scene(base, normalize: bool = True) -> tuple[np.ndarray, SceneAnnotation]:
    """Load ``<base>.dvfm`` + ``<base>.json``.

    Per-location l2 normalization happens here (and only here on the read
    path), so raw exported features and pre-normalized synthetic grids both
    enter the pipeline normalized.
    """
    base = Path(base)
    grid = read_dvfm(base.with_suffix(".dvfm"))
    ann = read_annotation(base.with_suffix(".json"))
    if normalize:
        grid = l2_normalize_locations(grid)
    return grid, ann


def list_scene_bases(split_dir) -> list[Path]:
    split_dir = Path(split_dir)
    if not split_dir.is_dir():
        raise DataError(f"split directory not found: {split_dir}")
    return sorted(p.with_suffix("") for p in split_dir.glob("*.dvfm"))


def load_split(split_dir, normalize: bool = True) -> list[tuple[np.ndarray, SceneAnnotation]]:
    return [load_scene(base, normalize=normalize) for base in list_scene_bases(split_dir)]


def write_detections(path, rows: list[dict]) -> None:
    write_json(path, rows)
