"""Frozen text embeddings for grade and lesion descriptions.

Each description is mapped to a unit vector by hashing its token unigrams
and bigrams into seeds for Gaussian random projections and summing the
count-weighted projections. The encoding is deterministic, training-free,
and swappable for any other encoder that produces the same row layout:
5 grade rows followed by 4 lesion rows (MA, HE, SE, EX).
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidInputError
from .seeds import make_rng
from .synthgen import LESION_TYPES

N_GRADES = 5
N_LESIONS = 4
N_CLASSES = N_GRADES + N_LESIONS

# Stand-in clinical wording; content only needs to be distinct per class
# because the frozen encoder treats text as a bag of n-grams.
DEFAULT_DESCRIPTIONS: list[tuple[str, str]] = [
    ("grade.0", "healthy retina with no visible abnormality"),
    ("grade.0", "clean fundus free of lesions"),
    ("grade.1", "a few scattered microaneurysms only"),
    ("grade.2", "moderate disease with dot hemorrhages and early exudates"),
    ("grade.3", "severe disease with widespread hemorrhages and cotton wool spots"),
    ("grade.4", "proliferative disease with extensive lesions of every kind"),
    ("lesion.MA", "tiny round dark red dots from capillary outpouching"),
    ("lesion.HE", "irregular dark red blot bleeding within the retina"),
    ("lesion.SE", "pale fluffy cotton wool patch with soft border"),
    ("lesion.EX", "bright yellow waxy deposits in small clusters"),
]


@dataclass(frozen=True)
class DescriptionSet:
    grade_descriptions: tuple[tuple[int, str], ...]
    lesion_descriptions: tuple[tuple[int, str], ...]
    embedding_dim: int = 64

    def __post_init__(self) -> None:
        if self.embedding_dim <= 0:
            raise InvalidInputError("embedding_dim must be positive")
        for idx, text in self.grade_descriptions + self.lesion_descriptions:
            if not text.strip():
                raise InvalidInputError("empty description text")
        grade_classes = {i for i, _ in self.grade_descriptions}
        lesion_classes = {i for i, _ in self.lesion_descriptions}
        if grade_classes != set(range(N_GRADES)):
            raise InvalidInputError(f"need descriptions for grades 0..4, got {sorted(grade_classes)}")
        if lesion_classes != set(range(N_LESIONS)):
            raise InvalidInputError(f"need descriptions for all 4 lesion classes, got {sorted(lesion_classes)}")


@dataclass(frozen=True)
class TextEmbeddings:
    grade_rows: np.ndarray  # 5xD, unit rows
    lesion_rows: np.ndarray  # 4xD, unit rows

    @property
    def all_rows(self) -> np.ndarray:
        return np.concatenate([self.grade_rows, self.lesion_rows], axis=0)


def default_description_set(embedding_dim: int = 64) -> DescriptionSet:
    return parse_descriptions(DEFAULT_DESCRIPTIONS, embedding_dim)


def parse_descriptions(entries, embedding_dim: int) -> DescriptionSet:
    grades, lesions = [], []
    lesion_index = {name: k for k, name in enumerate(LESION_TYPES)}
    for key, text in entries:
        kind, _, which = key.partition(".")
        if kind == "grade":
            try:
                idx = int(which)
            except ValueError:
                raise InvalidInputError(f"bad grade key {key!r}")
            if not 0 <= idx < N_GRADES:
                raise InvalidInputError(f"grade index out of range in {key!r}")
            grades.append((idx, text))
        elif kind == "lesion":
            if which not in lesion_index:
                raise InvalidInputError(f"unknown lesion name in {key!r} (use MA|HE|SE|EX)")
            lesions.append((lesion_index[which], text))
        else:
            raise InvalidInputError(f"unknown description key {key!r}")
    return DescriptionSet(tuple(grades), tuple(lesions), embedding_dim)


def load_description_file(path: str | Path, embedding_dim: int) -> DescriptionSet:
    """Plain-text format: `grade.<k> = text` / `lesion.<NAME> = text` lines.

    Repeated keys attach multiple descriptions to one class; blank lines
    and '#' comments are ignored.
    """
    entries = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise InvalidInputError(f"{path}:{lineno}: expected 'key = text'")
        key, _, text = line.partition("=")
        entries.append((key.strip(), text.strip()))
    return parse_descriptions(entries, embedding_dim)


def save_description_file(descriptions: DescriptionSet, path: str | Path) -> None:
    lines = []
    for idx, text in descriptions.grade_descriptions:
        lines.append(f"grade.{idx} = {text}")
    for idx, text in descriptions.lesion_descriptions:
        lines.append(f"lesion.{LESION_TYPES[idx]} = {text}")
    Path(path).write_text("\n".join(lines) + "\n")


def _tokens(text: str) -> list[str]:
    return re.findall(r"[a-z0-9]+", text.lower())


def _embed_one(text: str, dim: int) -> np.ndarray:
    toks = _tokens(text)
    if not toks:
        raise InvalidInputError(f"description has no tokens: {text!r}")
    grams = list(toks) + [f"{a} {b}" for a, b in zip(toks, toks[1:])]
    vec = np.zeros(dim, dtype=np.float64)
    for gram in grams:
        vec += make_rng("textenc", gram).standard_normal(dim)
    return vec / np.linalg.norm(vec)


def encode_text(descriptions: DescriptionSet) -> TextEmbeddings:
    """5+4 unit rows; multi-description classes are mean-pooled then renormalized."""
    dim = descriptions.embedding_dim

    def pool(pairs, n_classes):
        rows = np.zeros((n_classes, dim), dtype=np.float64)
        for cls in range(n_classes):
            vecs = [_embed_one(text, dim) for idx, text in pairs if idx == cls]
            mean = np.mean(vecs, axis=0)
            rows[cls] = mean / np.linalg.norm(mean)
        return rows

    return TextEmbeddings(
        grade_rows=pool(descriptions.grade_descriptions, N_GRADES),
        lesion_rows=pool(descriptions.lesion_descriptions, N_LESIONS),
    )
