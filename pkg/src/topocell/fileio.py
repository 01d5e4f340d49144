"""Shared file plumbing: atomic writes, grayscale PNG codec, JSONL.

All writers go through `atomic_write` so a failed run never leaves a partial
output behind: bytes land in a temp file in the target directory and are
renamed into place only on success.
"""

from __future__ import annotations

import json
import os
import tempfile
from contextlib import contextmanager
from pathlib import Path

import numpy as np
from PIL import Image


@contextmanager
def atomic_write(path, mode: str = "wb"):
    """Write to <dir>/.tmp-*, rename onto `path` on clean exit."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-" + path.name + "-")
    try:
        with os.fdopen(fd, mode) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def write_bytes(path, data: bytes) -> None:
    with atomic_write(path, "wb") as fh:
        fh.write(data)


def write_text(path, text: str) -> None:
    with atomic_write(path, "w") as fh:
        fh.write(text)


def save_png(path, values: np.ndarray) -> None:
    """Save a float array in [0,1] as 8-bit grayscale (0=0, 1=255)."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[0] == 1:
        arr = arr[0]
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D grayscale array, got shape {arr.shape}")
    if arr.min() < -1e-9 or arr.max() > 1 + 1e-9:
        raise ValueError(f"values outside [0,1]: min {arr.min():.4g} max {arr.max():.4g}")
    img = Image.fromarray(np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8), mode="L")
    with atomic_write(path, "wb") as fh:
        img.save(fh, format="PNG")


def save_rgb_png(path, rgb: np.ndarray) -> None:
    """Save an (H, W, 3) uint8 array as RGB PNG."""
    arr = np.asarray(rgb)
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.dtype != np.uint8:
        raise ValueError(f"expected (H, W, 3) uint8, got {arr.shape} {arr.dtype}")
    with atomic_write(path, "wb") as fh:
        Image.fromarray(arr, mode="RGB").save(fh, format="PNG")


def load_png(path) -> np.ndarray:
    """Load an 8-bit grayscale PNG to float64 in [0,1]."""
    with Image.open(path) as img:
        arr = np.asarray(img.convert("L"), dtype=np.float64)
    return arr / 255.0


def write_jsonl(path, records) -> None:
    with atomic_write(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_jsonl(path):
    records = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records
