"""Image array helpers: PNG round trips, dtype checks, content hashing."""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np
from PIL import Image


def to_uint8(values: np.ndarray) -> np.ndarray:
    """Round and clamp a float array into 8-bit range."""
    return np.clip(np.rint(values), 0, 255).astype(np.uint8)


def save_rgb(path: str | Path, image: np.ndarray) -> None:
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected HxWx3 image, got shape {arr.shape}")
    Image.fromarray(arr.astype(np.uint8), mode="RGB").save(path, format="PNG")


def load_rgb(path: str | Path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8)


def save_gray(path: str | Path, values: np.ndarray) -> None:
    arr = np.asarray(values)
    if arr.ndim != 2:
        raise ValueError(f"expected HxW array, got shape {arr.shape}")
    Image.fromarray(arr.astype(np.uint8), mode="L").save(path, format="PNG")


def load_gray(path: str | Path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("L"), dtype=np.uint8)


def save_mask(path: str | Path, mask: np.ndarray) -> None:
    """Binary mask as a 0/255 grayscale PNG."""
    save_gray(path, np.where(np.asarray(mask) > 0, 255, 0))


def load_mask(path: str | Path) -> np.ndarray:
    return (load_gray(path) > 127).astype(np.uint8)


def array_digest(*arrays: np.ndarray) -> str:
    """SHA-256 over shape-tagged raw bytes; used by determinism checks."""
    h = hashlib.sha256()
    for arr in arrays:
        a = np.ascontiguousarray(arr)
        h.update(str(a.shape).encode())
        h.update(str(a.dtype).encode())
        h.update(a.tobytes())
    return h.hexdigest()


def file_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
