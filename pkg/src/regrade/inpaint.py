"""Mask filling by harmonic interpolation, plus an external-tool adapter.

Masked pixels are replaced by the discrete harmonic extension of the
surrounding image: synchronous Jacobi sweeps average the four neighbours
until the largest per-sweep change drops below half an intensity level.
Values therefore never leave the range spanned by the kept pixels.

Two interchangeable backends run the sweep: a compiled kernel and a pure
numpy one. Both perform the same IEEE-754 operations in the same order, so
results are bit-identical and the backend choice never affects outputs.
"""

from __future__ import annotations

import subprocess
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateMaskError, ExternalInpainterError, InvalidInputError
from .imutil import load_rgb, save_mask, save_rgb, to_uint8

MAX_SWEEPS = 500
TOLERANCE = 0.5

try:
    from . import _fillcore  # type: ignore[attr-defined]

    _COMPILED = _fillcore.jacobi_fill
except ImportError:
    _COMPILED = None

DEFAULT_BACKEND = "compiled" if _COMPILED is not None else "python"


def available_backends() -> tuple[str, ...]:
    return ("python", "compiled") if _COMPILED is not None else ("python",)


def _jacobi_fill_python(work: np.ndarray, mask: np.ndarray, max_sweeps: int, tol: float):
    h, w, _ = work.shape
    counts = np.full((h, w), 4.0)
    counts[0, :] -= 1.0
    counts[-1, :] -= 1.0
    counts[:, 0] -= 1.0
    counts[:, -1] -= 1.0

    padded = np.zeros((h + 2, w + 2, work.shape[2]))
    sweeps = 0
    converged = False
    for _ in range(max_sweeps):
        padded[1:-1, 1:-1] = work
        up = padded[:-2, 1:-1]
        down = padded[2:, 1:-1]
        left = padded[1:-1, :-2]
        right = padded[1:-1, 2:]
        new = (((up + down) + left) + right) / counts[:, :, None]
        diffs = np.abs(new[mask] - work[mask])
        work[mask] = new[mask]
        sweeps += 1
        if diffs.max() < tol:
            converged = True
            break
    return sweeps, converged


@dataclass
class InpaintRequest:
    image: np.ndarray  # uint8 (H, W, 3)
    mask: np.ndarray  # bool (H, W)


@dataclass
class InpaintResult:
    image: np.ndarray  # uint8 (H, W, 3)
    sweeps: int
    converged: bool
    backend: str


def _validate(image: np.ndarray, mask: np.ndarray):
    img = np.asarray(image)
    m = np.asarray(mask)
    if img.ndim != 3 or img.shape[2] != 3:
        raise InvalidInputError(f"expected HxWx3 image, got {img.shape}")
    if m.shape != img.shape[:2]:
        raise InvalidInputError(f"mask {m.shape} does not match image {img.shape[:2]}")
    return img, m.astype(bool)


def inpaint(
    image,
    mask: np.ndarray | None = None,
    backend: str | None = None,
    max_sweeps: int = MAX_SWEEPS,
    tol: float = TOLERANCE,
) -> InpaintResult:
    """Fill masked pixels harmonically. Accepts (image, mask) arrays or a
    single InpaintRequest. An empty mask returns an identical copy; a mask
    covering every pixel leaves no boundary to interpolate from and raises
    DegenerateMaskError."""
    if isinstance(image, InpaintRequest):
        if mask is not None:
            raise InvalidInputError("pass either a request or arrays, not both")
        image, mask = image.image, image.mask
    img, m = _validate(image, mask)
    name = backend or DEFAULT_BACKEND
    if name not in available_backends():
        raise InvalidInputError(f"unknown or unavailable backend {name!r}")
    if m.all():
        raise DegenerateMaskError("mask covers the whole image; nothing to interpolate from")
    if not m.any():
        return InpaintResult(image=img.astype(np.uint8).copy(), sweeps=0, converged=True, backend=name)

    work = np.ascontiguousarray(img, dtype=np.float64)
    work[m] = work[~m].mean(axis=0)  # range-safe start: mean of kept pixels
    if name == "compiled":
        sweeps, converged = _COMPILED(work, np.ascontiguousarray(m, dtype=np.uint8), max_sweeps, tol)
    else:
        sweeps, converged = _jacobi_fill_python(work, m, max_sweeps, tol)
    return InpaintResult(image=to_uint8(work), sweeps=sweeps, converged=converged, backend=name)


# ------------------------------------------------------- external adapter

INPUT_NAME = "inpaint_in.png"
MASK_NAME = "inpaint_mask.png"
OUTPUT_NAME = "inpaint_out.png"


def run_external_inpainter(
    image: np.ndarray,
    mask: np.ndarray,
    command: str,
    workdir,
    timeout: float = 60.0,
) -> np.ndarray:
    """File-based protocol for swapping in a third-party inpainter.

    Writes inpaint_in.png and inpaint_mask.png into workdir, runs the shell
    command there, and reads back inpaint_out.png. Non-zero exit, timeout,
    missing output, or a shape change all raise ExternalInpainterError.
    """
    img, m = _validate(image, mask)
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    save_rgb(workdir / INPUT_NAME, img)
    save_mask(workdir / MASK_NAME, m)
    out_path = workdir / OUTPUT_NAME
    if out_path.exists():
        out_path.unlink()

    try:
        proc = subprocess.run(
            command, shell=True, cwd=workdir, timeout=timeout,
            capture_output=True, text=True,
        )
    except subprocess.TimeoutExpired as exc:
        raise ExternalInpainterError(f"inpainter timed out after {timeout}s") from exc
    if proc.returncode != 0:
        tail = (proc.stderr or proc.stdout or "").strip()[-500:]
        raise ExternalInpainterError(
            f"inpainter exited with code {proc.returncode}: {tail}"
        )
    if not out_path.is_file():
        raise ExternalInpainterError(f"inpainter produced no {OUTPUT_NAME}")
    result = load_rgb(out_path)
    if result.shape != img.shape:
        raise ExternalInpainterError(
            f"inpainter changed image shape: {img.shape} -> {result.shape}"
        )
    return result
