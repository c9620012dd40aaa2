"""Vessel restoration after inpainting.

Harmonic filling erases any vessel segment that crosses a removed lesion.
Repair runs in four phases: clean the vessel segmentation, locate its
overlap with the filled region, synthesize vessel color from statistics of
the original image, and alpha-blend the synthetic tree back in. Blending is
stronger where the vessel was actually erased (intersection pixels) than on
untouched vessel pixels, which only get a light refresh.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import InvalidInputError
from .imutil import to_uint8
from .seeds import make_rng

THRESHOLD = 20  # keep raw values strictly above this
MIN_SPECK_AREA = 5  # smaller components are sensor specks, not vessels
MIN_EXTENT = 20  # components with bounding-box extent under this are dropped
_EIGHT = np.ones((3, 3), dtype=bool)
_CROSS = ndimage.generate_binary_structure(2, 1)


def preprocess_vessel_mask(raw: np.ndarray) -> np.ndarray:
    """Turn a soft vessel map into a clean boolean tree.

    Thresholds strictly above 20, drops speck components smaller than 5 px,
    closes 1 px gaps with a 3x3 cross, then drops every component whose
    bounding box spans less than 20 px on its longer side. A plain
    morphological opening would erase 1 px wide vessels entirely, so small
    debris is removed by component area instead.
    """
    arr = np.asarray(raw)
    if arr.ndim != 2:
        raise InvalidInputError(f"expected 2-D vessel map, got shape {arr.shape}")
    mask = arr > THRESHOLD

    labels, n = ndimage.label(mask, structure=_EIGHT)
    if n:
        areas = np.bincount(labels.ravel())[1:]
        keep = np.flatnonzero(areas >= MIN_SPECK_AREA) + 1
        mask = np.isin(labels, keep)

    mask = ndimage.binary_closing(mask, structure=_CROSS)

    labels, n = ndimage.label(mask, structure=_EIGHT)
    out = np.zeros_like(mask)
    for index, sl in enumerate(ndimage.find_objects(labels), start=1):
        if sl is None:
            continue
        extent = max(sl[0].stop - sl[0].start, sl[1].stop - sl[1].start)
        if extent >= MIN_EXTENT:
            out |= labels == index
    return out


def intersect(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise InvalidInputError(f"mask shapes differ: {a.shape} vs {b.shape}")
    return a & b


@dataclass
class VesselColorStats:
    mean: np.ndarray  # (3,) per-channel mean over vessel pixels
    std: np.ndarray  # (3,) per-channel population standard deviation


def extract_vessel_color_stats(image: np.ndarray, vessel_mask: np.ndarray) -> VesselColorStats:
    img = np.asarray(image, dtype=np.float64)
    mask = np.asarray(vessel_mask, dtype=bool)
    if img.ndim != 3 or img.shape[2] != 3 or mask.shape != img.shape[:2]:
        raise InvalidInputError("need an HxWx3 image and a matching HxW mask")
    if not mask.any():
        raise InvalidInputError("vessel mask is empty; no pixels to sample")
    pixels = img[mask]
    return VesselColorStats(mean=pixels.mean(axis=0), std=pixels.std(axis=0))


@dataclass(frozen=True)
class ColorParams:
    beta_dark: float = 0.7  # vessels sit darker than their surround
    gamma_distance: float = 0.5  # fade towards the tree's outer reach
    delta_noise: float = 0.1  # per-pixel color jitter scale
    alpha_vessel: float = 0.35  # refresh weight on intact vessel pixels
    alpha_inter: float = 0.8  # restore weight where inpainting erased them

    def __post_init__(self) -> None:
        if not 0.0 < self.beta_dark <= 1.0:
            raise InvalidInputError("beta_dark must be in (0, 1]")
        if not 0.0 <= self.gamma_distance <= 1.0:
            raise InvalidInputError("gamma_distance must be in [0, 1]")
        if self.delta_noise < 0.0:
            raise InvalidInputError("delta_noise must be non-negative")
        if not 0.0 <= self.alpha_vessel <= self.alpha_inter <= 1.0:
            raise InvalidInputError("need 0 <= alpha_vessel <= alpha_inter <= 1")


def generate_colored_vessels(
    vessel_mask: np.ndarray,
    stats: VesselColorStats,
    params: ColorParams,
    seed: int,
) -> np.ndarray:
    """Synthetic vessel colors on the mask pixels (zeros elsewhere).

    Base color is the darkened channel mean. Each pixel adds Gaussian noise
    scaled by the channel deviations, then fades linearly with distance from
    the tree centroid, reaching 1 - gamma_distance at the farthest pixel.
    Noise is drawn in row-major pixel order from a seed-derived generator,
    and not drawn at all when delta_noise is zero. A single-pixel tree has
    zero reach and keeps full intensity. Values clamp to [0, 255].
    """
    mask = np.asarray(vessel_mask, dtype=bool)
    if mask.ndim != 2:
        raise InvalidInputError(f"expected 2-D mask, got shape {mask.shape}")
    out = np.zeros(mask.shape + (3,))
    coords = np.argwhere(mask)  # row-major order
    if len(coords) == 0:
        return out

    base = params.beta_dark * stats.mean
    centroid = coords.mean(axis=0)
    dist = np.linalg.norm(coords - centroid, axis=1)
    r_max = dist.max()
    if r_max > 0.0:
        alpha = 1.0 - params.gamma_distance * (dist / r_max)
    else:
        alpha = np.ones(len(coords))

    colors = np.tile(base, (len(coords), 1))
    if params.delta_noise > 0.0:
        eps = make_rng(seed, "vessel-color").normal(0.0, params.delta_noise, (len(coords), 3))
        colors = colors + stats.std * eps
    colors = np.clip(alpha[:, None] * colors, 0.0, 255.0)
    out[coords[:, 0], coords[:, 1]] = colors
    return out


def blend_vessels(
    image: np.ndarray,
    colored: np.ndarray,
    vessel_mask: np.ndarray,
    intersection_mask: np.ndarray,
    params: ColorParams,
) -> np.ndarray:
    """out = (1 - alpha) * image + alpha * color on vessel pixels, with
    alpha_inter inside the intersection and alpha_vessel elsewhere on the
    tree. Accumulates in float and rounds once at the end."""
    img = np.asarray(image, dtype=np.float64)
    vmask = np.asarray(vessel_mask, dtype=bool)
    imask = np.asarray(intersection_mask, dtype=bool)
    if img.shape[:2] != vmask.shape or vmask.shape != imask.shape:
        raise InvalidInputError("image and masks must share height and width")

    out = img.copy()
    plain = vmask & ~imask
    inter = vmask & imask
    for region, alpha in ((plain, params.alpha_vessel), (inter, params.alpha_inter)):
        if region.any():
            out[region] = (1.0 - alpha) * out[region] + alpha * colored[region]
    return to_uint8(out)


@dataclass
class RepairResult:
    image: np.ndarray  # uint8 (H, W, 3)
    skipped: bool
    vessel_mask: np.ndarray  # preprocessed boolean tree
    intersection_mask: np.ndarray
    stats: VesselColorStats | None


def repair(
    inpainted_image: np.ndarray,
    original_image: np.ndarray,
    raw_vessel_mask: np.ndarray,
    lesion_mask: np.ndarray,
    params: ColorParams,
    seed: int,
) -> RepairResult:
    """Full four-phase repair of one inpainted image; lesion_mask is the
    region the inpainter filled.

    Color statistics always come from the original image, so repeated
    iterations cannot drift by resampling their own output. An empty
    preprocessed tree skips repair and passes the inpainted image through.
    """
    vmask = preprocess_vessel_mask(raw_vessel_mask)
    lesion_mask = np.asarray(lesion_mask, dtype=bool)
    if not vmask.any():
        return RepairResult(
            image=np.asarray(inpainted_image, dtype=np.uint8).copy(),
            skipped=True,
            vessel_mask=vmask,
            intersection_mask=np.zeros_like(vmask),
            stats=None,
        )
    overlap = intersect(vmask, lesion_mask)
    stats = extract_vessel_color_stats(original_image, vmask)
    colored = generate_colored_vessels(vmask, stats, params, seed)
    blended = blend_vessels(inpainted_image, colored, vmask, overlap, params)
    return RepairResult(
        image=blended,
        skipped=False,
        vessel_mask=vmask,
        intersection_mask=overlap,
        stats=stats,
    )


# ------------------------------------------------------- vessel sources


def ridge_vessel_map(image: np.ndarray) -> np.ndarray:
    """Crude vessel detector: thin dark structures pop out as the top-hat
    of the inverted green channel against a Gaussian-smoothed background."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise InvalidInputError(f"expected HxWx3 image, got {img.shape}")
    inverted = 255.0 - img[:, :, 1]
    background = ndimage.gaussian_filter(inverted, sigma=3.0)
    return to_uint8(np.clip(inverted - background, 0.0, 255.0))
