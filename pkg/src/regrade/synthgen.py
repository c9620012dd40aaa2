"""Synthetic fundus image generator with pixel-exact ground truth.

Images are procedurally composed: a circular fundus field on black, a
textured orange-red background, dark curvilinear vessels radiating from a
bright optic disc, and four lesion types whose counts are driven by the
severity grade. Every random choice comes from an RNG derived from
(seed, grade, sample index), so identical inputs give bit-identical output.

Grade drives only the lesion budget; vessels, texture and disc statistics
are identically distributed across grades, so lesion content is the sole
grading signal.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import InvalidInputError
from .imutil import load_mask, load_rgb, save_mask, save_rgb, to_uint8
from .seeds import make_rng

LESION_TYPES = ("MA", "HE", "SE", "EX")
GRADES = (0, 1, 2, 3, 4)

# Per-grade (low, high) inclusive count ranges. Grade 1 carries only
# microaneurysms; hemorrhages and hard exudates join at grade 2, soft
# exudates at grade 3; grade 4 is maximal. Sizes below keep any grade-2
# sample under 4% lesion area at the default 64px field.
DEFAULT_LESION_BUDGET: dict[int, dict[str, tuple[int, int]]] = {
    0: {"MA": (0, 0), "HE": (0, 0), "SE": (0, 0), "EX": (0, 0)},
    1: {"MA": (1, 3), "HE": (0, 0), "SE": (0, 0), "EX": (0, 0)},
    2: {"MA": (2, 4), "HE": (1, 2), "SE": (0, 0), "EX": (1, 2)},
    3: {"MA": (4, 6), "HE": (2, 4), "SE": (1, 2), "EX": (2, 4)},
    4: {"MA": (5, 8), "HE": (4, 6), "SE": (2, 3), "EX": (4, 6)},
}

_BACKGROUND = np.array([186.0, 104.0, 56.0])
_TEXTURE_AMP = np.array([8.0, 6.0, 4.0])
_VESSEL_COLOR = np.array([62.0, 22.0, 18.0])
_DISC_COLOR = np.array([233.0, 198.0, 128.0])
_MA_COLOR = np.array([96.0, 28.0, 24.0])
_HE_COLOR = np.array([106.0, 24.0, 20.0])
_EX_COLOR = np.array([238.0, 221.0, 96.0])
_SE_COLOR = np.array([209.0, 187.0, 143.0])


@dataclass(frozen=True)
class SynthConfig:
    image_size: int = 64
    seed: int = 0
    lesion_budget: dict[int, dict[str, tuple[int, int]]] = field(
        default_factory=lambda: {g: dict(v) for g, v in DEFAULT_LESION_BUDGET.items()}
    )
    vessel_count: int = 7
    disc_radius: int = 6

    def __post_init__(self) -> None:
        if self.image_size < 64:
            raise InvalidInputError(f"image_size must be >= 64, got {self.image_size}")
        if self.vessel_count < 0:
            raise InvalidInputError("vessel_count must be non-negative")
        if self.disc_radius <= 0:
            raise InvalidInputError("disc_radius must be positive")
        for grade in GRADES:
            ranges = self.lesion_budget.get(grade)
            if ranges is None:
                raise InvalidInputError(f"lesion_budget missing grade {grade}")
            for name in LESION_TYPES:
                lo, hi = ranges[name]
                if lo < 0 or hi < lo:
                    raise InvalidInputError(
                        f"bad count range {name}={lo}..{hi} for grade {grade}"
                    )


@dataclass
class FundusSample:
    image: np.ndarray  # HxWx3 uint8
    grade: int
    lesion_flags: np.ndarray  # 4-vector of {0,1}, order MA,HE,SE,EX
    lesion_masks: np.ndarray  # 4xHxW uint8
    vessel_mask: np.ndarray  # HxW uint8


def _disk(size: int, cy: float, cx: float, radius: float) -> np.ndarray:
    yy, xx = np.ogrid[0:size, 0:size]
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= radius**2


def _smooth_texture(rng: np.random.Generator, size: int) -> np.ndarray:
    coarse = rng.normal(0.0, 1.0, (8, 8))
    up = np.kron(coarse, np.ones((size // 8 + 1, size // 8 + 1)))[:size, :size]
    tex = ndimage.gaussian_filter(up, sigma=size / 20.0)
    peak = np.abs(tex).max()
    return tex / peak if peak > 0 else tex


def _bezier_pixels(p0, p1, p2, size: int, steps: int) -> np.ndarray:
    t = np.linspace(0.0, 1.0, steps)[:, None]
    pts = (1 - t) ** 2 * p0 + 2 * (1 - t) * t * p1 + t**2 * p2
    pix = np.rint(pts).astype(int)
    keep = (pix[:, 0] >= 0) & (pix[:, 0] < size) & (pix[:, 1] >= 0) & (pix[:, 1] < size)
    return pix[keep]


def _draw_vessels(
    canvas: np.ndarray,
    rng: np.random.Generator,
    fundus: np.ndarray,
    disc_cy: float,
    disc_cx: float,
    disc_r: float,
    count: int,
) -> np.ndarray:
    size = canvas.shape[0]
    c = (size - 1) / 2.0
    field_r = 0.47 * size
    mask = np.zeros((size, size), dtype=bool)
    for k in range(count):
        theta = 2.0 * np.pi * k / max(count, 1) + rng.uniform(-0.25, 0.25)
        u = np.array([np.sin(theta), np.cos(theta)])  # (dy, dx)
        p0 = np.array([disc_cy, disc_cx]) + (disc_r + 1.5) * u
        # Longest reach from the disc that stays inside the fundus field.
        reach = 0.0
        for t in np.linspace(0.2, 1.6, 60) * field_r:
            q = p0 + t * u
            if (q[0] - c) ** 2 + (q[1] - c) ** 2 > (0.93 * field_r) ** 2:
                break
            reach = t
        if reach <= 2.0:
            continue
        p2 = p0 + reach * u
        perp = np.array([-u[1], u[0]])
        p1 = (p0 + p2) / 2.0 + perp * rng.normal(0.0, size / 10.0)
        pix = _bezier_pixels(p0, p1, p2, size, steps=4 * size)
        for y, x in pix:
            if fundus[y, x] and (y - disc_cy) ** 2 + (x - disc_cx) ** 2 > disc_r**2:
                mask[y, x] = True
    ys, xs = np.nonzero(mask)
    jitter = rng.normal(0.0, 4.0, (len(ys), 3))
    canvas[ys, xs] = _VESSEL_COLOR + jitter
    return mask.astype(np.uint8)


class _Placer:
    """Rejection-samples lesion centers inside the fundus field.

    Hard constraints: stay off the (dilated) optic disc, stay inside the
    field with margin, keep same-type lesions separated so component
    counts stay exact.
    """

    def __init__(self, size, rng, fundus_cy, fundus_cx, field_r, disc_cy, disc_cx, disc_r):
        self.size = size
        self.rng = rng
        self.cy, self.cx = fundus_cy, fundus_cx
        self.field_r = field_r
        self.disc_cy, self.disc_cx = disc_cy, disc_cx
        self.disc_r = disc_r
        self.placed: dict[str, list[tuple[float, float, float]]] = {t: [] for t in LESION_TYPES}

    def place(self, kind: str, radius: float) -> tuple[float, float]:
        for _ in range(500):
            ang = self.rng.uniform(0.0, 2.0 * np.pi)
            rad = np.sqrt(self.rng.uniform(0.0, 1.0)) * (self.field_r - radius - 2.0)
            y = self.cy + rad * np.sin(ang)
            x = self.cx + rad * np.cos(ang)
            if (y - self.disc_cy) ** 2 + (x - self.disc_cx) ** 2 <= (self.disc_r + radius + 2.0) ** 2:
                continue
            ok = True
            for py, px, pr in self.placed[kind]:
                if (y - py) ** 2 + (x - px) ** 2 < (radius + pr + 2.0) ** 2:
                    ok = False
                    break
            if ok:
                self.placed[kind].append((y, x, radius))
                return y, x
        raise RuntimeError(f"could not place {kind} lesion after 500 attempts")


def generate_sample(config: SynthConfig, grade: int, index: int = 0) -> FundusSample:
    """Render one sample; (config, grade, index) fully determines the bytes."""
    if grade not in GRADES:
        raise InvalidInputError(f"grade must be in 0..4, got {grade}")
    rng = make_rng(config.seed, "sample", grade, index)
    size = config.image_size
    c = (size - 1) / 2.0
    field_r = 0.47 * size

    fundus = _disk(size, c, c, field_r)
    canvas = np.zeros((size, size, 3), dtype=np.float64)

    yy, xx = np.ogrid[0:size, 0:size]
    dist = np.sqrt((yy - c) ** 2 + (xx - c) ** 2)
    shade = 1.0 - 0.30 * (dist / field_r) ** 2
    tex = _smooth_texture(rng, size)
    for ch in range(3):
        canvas[..., ch] = np.where(fundus, _BACKGROUND[ch] * shade + _TEXTURE_AMP[ch] * tex, 0.0)

    disc_ang = rng.uniform(0.0, 2.0 * np.pi)
    disc_dist = 0.55 * field_r
    disc_cy = c + disc_dist * np.sin(disc_ang)
    disc_cx = c + disc_dist * np.cos(disc_ang)
    disc_r = float(config.disc_radius)

    vessel_mask = _draw_vessels(canvas, rng, fundus, disc_cy, disc_cx, disc_r, config.vessel_count)

    disc = _disk(size, disc_cy, disc_cx, disc_r) & fundus
    disc_shade = 1.0 - 0.12 * np.clip(
        np.sqrt((yy - disc_cy) ** 2 + (xx - disc_cx) ** 2) / disc_r, 0.0, 1.0
    )
    for ch in range(3):
        canvas[..., ch] = np.where(disc, _DISC_COLOR[ch] * disc_shade, canvas[..., ch])

    placer = _Placer(size, rng, c, c, field_r, disc_cy, disc_cx, disc_r)
    budget = config.lesion_budget[grade]
    masks = np.zeros((4, size, size), dtype=bool)

    def paint(region: np.ndarray, color: np.ndarray, jitter: float) -> np.ndarray:
        region = region & fundus & ~disc
        ys, xs = np.nonzero(region)
        canvas[ys, xs] = color + rng.normal(0.0, jitter, (len(ys), 3))
        return region

    for kind in LESION_TYPES:
        lo, hi = budget[kind]
        n = int(rng.integers(lo, hi + 1)) if hi > 0 else 0
        for _ in range(n):
            if kind == "MA":
                r = float(rng.integers(1, 3))
                y, x = placer.place(kind, r)
                masks[0] |= paint(_disk(size, y, x, r), _MA_COLOR, 4.0)
            elif kind == "HE":
                y, x = placer.place(kind, 4.0)
                blob = _disk(size, y, x, 2.0)
                for _ in range(2):
                    oy, ox = rng.uniform(-2.2, 2.2, 2)
                    blob |= _disk(size, y + oy, x + ox, 2.0)
                masks[1] |= paint(blob, _HE_COLOR, 5.0)
            elif kind == "SE":
                r = float(rng.integers(3, 5))
                y, x = placer.place(kind, r)
                region = _disk(size, y, x, r) & fundus & ~disc
                d2 = (yy - y) ** 2 + (xx - x) ** 2
                alpha = np.where(region, 0.72 * np.exp(-1.1 * d2 / r**2), 0.0)
                for ch in range(3):
                    canvas[..., ch] = canvas[..., ch] * (1 - alpha) + _SE_COLOR[ch] * alpha
                masks[2] |= region
            else:  # EX
                y, x = placer.place(kind, 4.0)
                m = int(rng.integers(3, 6))
                cluster = np.zeros((size, size), dtype=bool)
                for _ in range(m):
                    oy, ox = rng.uniform(-2.8, 2.8, 2)
                    cluster |= _disk(size, y + oy, x + ox, float(rng.integers(1, 3)))
                masks[3] |= paint(cluster, _EX_COLOR, 6.0)

    flags = np.array([1 if masks[k].any() else 0 for k in range(4)], dtype=np.int64)
    return FundusSample(
        image=to_uint8(canvas),
        grade=grade,
        lesion_flags=flags,
        lesion_masks=masks.astype(np.uint8),
        vessel_mask=vessel_mask,
    )


def generate_dataset(config: SynthConfig, counts_per_grade) -> list[FundusSample]:
    """Grade-major concatenation of samples, counts_per_grade[g] per grade."""
    counts = list(counts_per_grade)
    if len(counts) != 5 or any(int(n) < 0 for n in counts):
        raise InvalidInputError(f"counts_per_grade must be 5 non-negative ints, got {counts}")
    samples = []
    for grade in GRADES:
        for index in range(int(counts[grade])):
            samples.append(generate_sample(config, grade, index))
    return samples


def sample_id(position: int) -> str:
    return f"{position:04d}"


def save_dataset(samples: list[FundusSample], out_dir: str | Path) -> list[str]:
    """Write img/mask/vessel PNGs plus labels.csv; returns the sample ids."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ids = []
    with open(out / "labels.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "grade", "ma", "he", "se", "ex"])
        for pos, sample in enumerate(samples):
            sid = sample_id(pos)
            ids.append(sid)
            save_rgb(out / f"img_{sid}.png", sample.image)
            for k, name in enumerate(LESION_TYPES):
                save_mask(out / f"mask_{sid}_{name}.png", sample.lesion_masks[k])
            save_mask(out / f"vessel_{sid}.png", sample.vessel_mask)
            writer.writerow([sid, sample.grade, *[int(f) for f in sample.lesion_flags]])
    return ids


def load_dataset(data_dir: str | Path) -> list[tuple[str, FundusSample]]:
    root = Path(data_dir)
    labels = root / "labels.csv"
    if not labels.exists():
        from .errors import MissingArtifactError

        raise MissingArtifactError(f"no dataset at {root} (expected {labels})")
    out = []
    with open(labels, newline="") as fh:
        for row in csv.DictReader(fh):
            sid = row["id"]
            image = load_rgb(root / f"img_{sid}.png")
            masks = np.stack([load_mask(root / f"mask_{sid}_{t}.png") for t in LESION_TYPES])
            flags = np.array([int(row[t.lower()]) for t in LESION_TYPES], dtype=np.int64)
            sample = FundusSample(
                image=image,
                grade=int(row["grade"]),
                lesion_flags=flags,
                lesion_masks=masks,
                vessel_mask=load_mask(root / f"vessel_{sid}.png"),
            )
            out.append((sid, sample))
    return out
