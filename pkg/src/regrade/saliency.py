"""Pixel attribution for the predicted grade, and mask extraction.

Saliency backpropagates the raw similarity score of the predicted grade
class to the input pixels under the guided rule (gradient flows only where
the ReLU forward activation and the incoming gradient are both positive),
rectifies the pixel gradient, and collapses channels by maximum. Masks are
cut at mean + one standard deviation of the map itself, so they adapt to
each image's contrast and are invariant to rescaling the map.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import encoder as enc
from .errors import InvalidInputError
from .imutil import save_gray, save_mask
from .textenc import N_GRADES, TextEmbeddings


@dataclass
class SaliencyMap:
    values: np.ndarray  # (H, W) float64, >= 0
    source_class: int
    source_score: float
    iteration: int = 0


@dataclass
class BinaryMask:
    mask: np.ndarray  # (H, W) bool
    threshold: float
    mean: float
    std: float

    @property
    def pixel_count(self) -> int:
        return int(self.mask.sum())


def guided_backprop(
    image,
    params: enc.EncoderParams,
    text: TextEmbeddings,
    target_class: int | None = None,
) -> SaliencyMap:
    """Per-pixel attribution map for one grade class (default: predicted).

    The target is the raw similarity score, not its softmax probability, so
    the map is independent of the temperature and of the other grades.
    """
    emb, cache = enc.forward_batch(image, params)
    scores = text.all_rows @ emb[0]
    if target_class is None:
        target_class = int(np.argmax(scores[:N_GRADES]))
    if not 0 <= target_class < N_GRADES:
        raise InvalidInputError(f"grade class {target_class} out of range")

    d_emb = text.grade_rows[target_class][None, :].astype(np.float64)
    _, d_input = enc.backward_batch(d_emb, params, cache, guided=True)
    rectified = np.maximum(d_input[0], 0.0)
    return SaliencyMap(
        values=rectified.max(axis=2),
        source_class=target_class,
        source_score=float(scores[target_class]),
    )


def binarize(values, dilate: bool = False) -> BinaryMask:
    """Keep pixels strictly above mean + one population standard deviation.

    Accepts a raw 2-D array or a SaliencyMap. A constant map (std 0) yields
    an empty mask because the comparison is strict. Optional dilation grows
    the mask by one pixel in all eight directions to catch lesion fringes.
    """
    if isinstance(values, SaliencyMap):
        values = values.values
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise InvalidInputError(f"expected a 2-D map, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("saliency values must be finite")
    mu = float(arr.mean())
    sigma = float(arr.std())
    mask = arr > mu + sigma
    if dilate:
        mask = ndimage.binary_dilation(mask, structure=np.ones((3, 3), dtype=bool))
    return BinaryMask(mask=mask, threshold=mu + sigma, mean=mu, std=sigma)


def union_masks(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise InvalidInputError(f"mask shapes differ: {a.shape} vs {b.shape}")
    return a | b


def save_saliency_png(smap: SaliencyMap, path) -> None:
    """Min-max scaled grayscale PNG plus a JSON sidecar recording the scale
    so the stored bytes stay deterministic and the range recoverable."""
    path = Path(path)
    lo = float(smap.values.min())
    hi = float(smap.values.max())
    if hi > lo:
        scaled = (smap.values - lo) / (hi - lo) * 255.0
    else:
        scaled = np.zeros_like(smap.values)
    save_gray(path, scaled)
    sidecar = {
        "min": lo,
        "max": hi,
        "source_class": smap.source_class,
        "source_score": smap.source_score,
    }
    path.with_suffix(".json").write_text(json.dumps(sidecar, sort_keys=True) + "\n")


def save_mask_png(mask: BinaryMask, path) -> None:
    save_mask(path, mask.mask)
