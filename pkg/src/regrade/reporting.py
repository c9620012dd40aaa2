"""Rendered views of a finished run: curve, flow matrix, and montage."""

from __future__ import annotations

from pathlib import Path

import matplotlib
import numpy as np
from scipy import ndimage

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .errors import InvalidInputError  # noqa: E402
from .textenc import N_GRADES  # noqa: E402

# Fixed metadata keeps rendered bytes stable across library versions.
_PNG_META = {"Software": "regrade"}
_DPI = 100

MONTAGE_COLUMNS = ("original", "saliency", "contours", "inpainted")


def _save(fig, path) -> None:
    fig.savefig(path, dpi=_DPI, metadata=_PNG_META)
    plt.close(fig)


def plot_reduction_curve(values, path) -> None:
    """Fraction of initially-referable images regressed, per cycle."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    steps = np.arange(1, len(values) + 1)
    ax.plot(steps, values, marker="o")
    ax.set_xlabel("inpainting cycle")
    ax.set_ylabel("regressed fraction")
    ax.set_ylim(-0.02, 1.02)
    if len(steps):
        ax.set_xticks(steps)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    _save(fig, path)


def plot_transition_flow(matrix, path) -> None:
    """Heat map of label grade (rows) vs final predicted grade (columns)."""
    m = np.asarray(matrix)
    if m.shape != (N_GRADES, N_GRADES):
        raise InvalidInputError(f"expected 5x5 matrix, got {m.shape}")
    fig, ax = plt.subplots(figsize=(4.5, 4))
    ax.imshow(m, cmap="Blues")
    for i in range(N_GRADES):
        for j in range(N_GRADES):
            ax.text(j, i, str(int(m[i, j])), ha="center", va="center", fontsize=9)
    ax.set_xlabel("final predicted grade")
    ax.set_ylabel("label grade")
    ax.set_xticks(range(N_GRADES))
    ax.set_yticks(range(N_GRADES))
    fig.tight_layout()
    _save(fig, path)


def contour_overlay(image: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Original image with the mask's one-pixel boundary drawn in red."""
    img = np.asarray(image, dtype=np.uint8).copy()
    m = np.asarray(mask, dtype=bool)
    if m.shape != img.shape[:2]:
        raise InvalidInputError("mask and image sizes differ")
    boundary = m & ~ndimage.binary_erosion(m)
    img[boundary] = (255, 32, 32)
    return img


def montage(rows: list[dict[str, np.ndarray]], path) -> None:
    """Grid of per-image panels: original | saliency | contours | inpainted."""
    if not rows:
        raise InvalidInputError("montage needs at least one row")
    n = len(rows)
    fig, axes = plt.subplots(n, 4, figsize=(9, 2.3 * n), squeeze=False)
    for r, row in enumerate(rows):
        for c, key in enumerate(MONTAGE_COLUMNS):
            ax = axes[r][c]
            panel = row[key]
            if panel.ndim == 2:
                ax.imshow(panel, cmap="gray", vmin=0, vmax=255)
            else:
                ax.imshow(panel)
            ax.set_axis_off()
            if r == 0:
                ax.set_title(key, fontsize=9)
    fig.tight_layout()
    _save(fig, path)
