"""File I/O: PNG export/import, raw float arrays, embedding files, and the
flat key/value text format used for run manifests and reports."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .embedding import SPACE_DIM, Embedding

_EMB_MAGIC = b"EMB1"
_MODALITY_CODES = {"text": 0, "image": 1}
_MODALITY_NAMES = {v: k for k, v in _MODALITY_CODES.items()}


def save_png(path, image: np.ndarray) -> None:
    """8-bit PNG; float input is clipped to [0, 1] and quantized."""
    arr = np.asarray(image)
    if arr.dtype != np.uint8:
        arr = (np.clip(arr, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[..., 0]
    mode = "L" if arr.ndim == 2 else "RGB"
    Image.fromarray(arr, mode=mode).save(path)


def load_png(path) -> np.ndarray:
    """PNG -> float64 HxWx3 in [0, 1]."""
    img = Image.open(path).convert("RGB")
    return np.asarray(img, dtype=np.float64) / 255.0


def save_png16(path, channel: np.ndarray, lo: float = 0.0, hi: float = 1.0) -> None:
    """Single-channel 16-bit PNG for inspection; values mapped from [lo, hi]."""
    arr = np.asarray(channel, dtype=np.float64)
    span = hi - lo if hi > lo else 1.0
    scaled = np.clip((arr - lo) / span, 0.0, 1.0)
    data = (scaled * 65535.0 + 0.5).astype(np.uint16)
    Image.fromarray(data, mode="I;16").save(path)


def save_raw_float(path, array: np.ndarray) -> None:
    """Raw float dump (.npy container: header + little-endian float data)."""
    np.save(path, np.asarray(array, dtype=np.float32))


def load_raw_float(path) -> np.ndarray:
    return np.load(path).astype(np.float64)


def save_embedding(path, embedding: Embedding) -> None:
    """16-byte header (magic, dimension, modality code, reserved) followed by
    little-endian float64 values."""
    header = struct.pack(
        "<4sIII", _EMB_MAGIC, SPACE_DIM, _MODALITY_CODES[embedding.modality], 0
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(embedding.values.astype("<f8").tobytes())


def load_embedding(path) -> Embedding:
    with open(path, "rb") as fh:
        header = fh.read(16)
        magic, dim, modality, _ = struct.unpack("<4sIII", header)
        if magic != _EMB_MAGIC:
            raise ValueError(f"{path}: not an embedding file")
        if dim != SPACE_DIM:
            raise ValueError(f"{path}: dimension {dim} != {SPACE_DIM}")
        values = np.frombuffer(fh.read(8 * dim), dtype="<f8")
    return Embedding(values=values.copy(), modality=_MODALITY_NAMES[modality])


def write_keyvalues(path, entries: dict) -> None:
    """Sorted `key = value` lines. Keys under `timing.` hold wall-clock data
    and are the only part of a manifest allowed to differ between identical
    runs."""
    lines = [f"{k} = {entries[k]}" for k in sorted(entries)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_keyvalues(path) -> dict:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition(" = ")
        out[key] = value
    return out
