"""Metrics for localization quality, grading quality, and loop behavior.

Segmentation scores treat the loop's accumulated mask as a class-agnostic
lesion detector: each lesion type is scored by how well the single mask
covers that type's ground truth, and background is the complement of the
lesion union. Images lacking a lesion type skip the sensitivity average for
it; this convention is flagged in the report rather than silently applied.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .errors import InvalidInputError
from .synthgen import LESION_TYPES
from .textenc import N_GRADES, N_LESIONS

SEG_CLASSES = ("bg",) + LESION_TYPES
_METRIC_KEYS = ("sensitivity", "miou", "dice")


# ------------------------------------------------------------ seg metrics


@dataclass
class SegMetrics:
    sensitivity: float | None  # percent; None when ground truth is empty
    iou: float
    dice: float


def seg_metrics(pred_mask: np.ndarray, gt_mask: np.ndarray) -> SegMetrics:
    """Pixel overlap scores in percent.

    Empty ground truth leaves sensitivity undefined (None); overlap scores
    then grade the prediction alone: 100 if it is also empty, else 0.
    """
    pred = np.asarray(pred_mask, dtype=bool)
    gt = np.asarray(gt_mask, dtype=bool)
    if pred.shape != gt.shape:
        raise InvalidInputError(f"mask shapes differ: {pred.shape} vs {gt.shape}")

    tp = float((pred & gt).sum())
    fp = float((pred & ~gt).sum())
    fn = float((~pred & gt).sum())
    if not gt.any():
        score = 100.0 if not pred.any() else 0.0
        return SegMetrics(sensitivity=None, iou=score, dice=score)
    return SegMetrics(
        sensitivity=100.0 * tp / (tp + fn),
        iou=100.0 * tp / (tp + fp + fn),
        dice=100.0 * 2.0 * tp / (2.0 * tp + fp + fn),
    )


def lesion_attribution(
    accumulated_mask: np.ndarray,
    lesion_masks: dict[str, np.ndarray],
) -> dict[str, SegMetrics]:
    """Score one image's accumulated mask against each lesion type plus
    background (complement of the lesion union on both sides)."""
    acc = np.asarray(accumulated_mask, dtype=bool)
    union = np.zeros_like(acc)
    scores: dict[str, SegMetrics] = {}
    for name in LESION_TYPES:
        gt = np.asarray(lesion_masks[name], dtype=bool)
        union |= gt
        scores[name] = seg_metrics(acc, gt)
    scores["bg"] = seg_metrics(~acc, ~union)
    return scores


def coverage_counts(
    accumulated_mask: np.ndarray,
    lesion_masks: dict[str, np.ndarray],
) -> dict[str, tuple[int, int]]:
    """Covered/total ground-truth pixel counts per lesion type plus "all"
    for their union; the raw material for set-level pooled sensitivity."""
    acc = np.asarray(accumulated_mask, dtype=bool)
    union = np.zeros_like(acc)
    counts: dict[str, tuple[int, int]] = {}
    for name in LESION_TYPES:
        gt = np.asarray(lesion_masks[name], dtype=bool)
        union |= gt
        counts[name] = (int((acc & gt).sum()), int(gt.sum()))
    counts["all"] = (int((acc & union).sum()), int(union.sum()))
    return counts


def pooled_sensitivity(per_image_counts) -> dict[str, float | None]:
    """Set-level coverage: pixel counts pool across images before dividing,
    so each lesion weighs in proportion to its area instead of its image.
    None where the whole set carries no pixels of a type."""
    if not per_image_counts:
        raise InvalidInputError("no images to pool")
    out: dict[str, float | None] = {}
    for key in LESION_TYPES + ("all",):
        covered = sum(c[key][0] for c in per_image_counts)
        total = sum(c[key][1] for c in per_image_counts)
        out[key] = 100.0 * covered / total if total else None
    return out


@dataclass
class SegScores:
    per_class: dict[str, dict[str, float | None]]
    overall_wo_bg: dict[str, float | None]
    overall: dict[str, float | None]
    skipped: list[str] = field(default_factory=list)


def _mean_or_none(values: list[float]) -> float | None:
    return float(np.mean(values)) if values else None


def aggregate_seg(per_image: list[dict[str, SegMetrics]]) -> SegScores:
    """Average per-image scores per class, then macro-average the classes.

    Sensitivity averages only over images where it is defined; a class with
    no defined values anywhere is skipped from the macro means and listed.
    """
    if not per_image:
        raise InvalidInputError("no images to aggregate")
    per_class: dict[str, dict[str, float | None]] = {}
    skipped: list[str] = []
    for name in SEG_CLASSES:
        collected: dict[str, list[float]] = {k: [] for k in _METRIC_KEYS}
        for scores in per_image:
            m = scores[name]
            if m.sensitivity is not None:
                collected["sensitivity"].append(m.sensitivity)
            collected["miou"].append(m.iou)
            collected["dice"].append(m.dice)
        per_class[name] = {k: _mean_or_none(v) for k, v in collected.items()}
        if per_class[name]["sensitivity"] is None:
            skipped.append(f"sensitivity/{name}: no image carries this class")

    def macro(names) -> dict[str, float | None]:
        out: dict[str, float | None] = {}
        for key in _METRIC_KEYS:
            vals = [per_class[n][key] for n in names if per_class[n][key] is not None]
            out[key] = _mean_or_none(vals)
        return out

    return SegScores(
        per_class=per_class,
        overall_wo_bg=macro(LESION_TYPES),
        overall=macro(SEG_CLASSES),
        skipped=skipped,
    )


# --------------------------------------------------------- classification


@dataclass
class ClassificationMetrics:
    accuracy: float  # percent over all 9 binary decisions
    auc: float | None  # macro one-vs-rest over grade probabilities
    f1: float | None  # percent, macro over grades present in labels
    kappa: float  # quadratic weighted, 5-grade
    auc_per_class: dict[int, float | None] = field(default_factory=dict)
    f1_per_class: dict[int, float | None] = field(default_factory=dict)
    skipped: list[str] = field(default_factory=list)


def rank_auc(scores: np.ndarray, positives: np.ndarray) -> float | None:
    """Probability a random positive outranks a random negative, ties at
    half weight (average ranks). None when either side is empty. A constant
    scorer lands on 0.5 exactly."""
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.asarray(positives, dtype=bool)
    n_pos = int(positives.sum())
    n_neg = len(positives) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(scores, method="average")
    u = ranks[positives].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def quadratic_weighted_kappa(confusion: np.ndarray) -> float:
    """Agreement beyond chance with (i-j)^2 disagreement weights."""
    obs = np.asarray(confusion, dtype=np.float64)
    if obs.shape[0] != obs.shape[1]:
        raise InvalidInputError(f"confusion matrix must be square, got {obs.shape}")
    k = obs.shape[0]
    total = obs.sum()
    if total == 0:
        raise InvalidInputError("empty confusion matrix")
    weights = (np.subtract.outer(np.arange(k), np.arange(k)) ** 2) / (k - 1) ** 2
    expected = np.outer(obs.sum(axis=1), obs.sum(axis=0)) / total
    denom = (weights * expected).sum()
    if denom == 0.0:
        return 1.0  # a single observed class admits no weighted disagreement
    return float(1.0 - (weights * obs).sum() / denom)


def classification_metrics(predictions, labels) -> ClassificationMetrics:
    """Grading quality of entry predictions against dataset labels.

    predictions: records with .grade, .probs (9,), .lesions (4,).
    labels: (grade, lesion_flags) pairs. Accuracy counts all nine binary
    decisions per image: the five one-vs-rest grade calls plus four lesion
    flags. AUC and F1 are macro over grades, skipping grades absent from
    the labels (recorded, not silently dropped).
    """
    if len(predictions) == 0 or len(predictions) != len(labels):
        raise InvalidInputError("need non-empty, aligned predictions and labels")
    n = len(predictions)
    pred_grades = np.array([p.grade for p in predictions])
    pred_lesions = np.array([p.lesions for p in predictions])
    grade_probs = np.array([p.probs[:N_GRADES] for p in predictions])
    true_grades = np.array([g for g, _ in labels])
    true_lesions = np.array([flags for _, flags in labels])
    if true_lesions.shape != (n, N_LESIONS):
        raise InvalidInputError("each label needs four lesion flags")

    grade_hits = (
        (pred_grades[:, None] == np.arange(N_GRADES)) == (true_grades[:, None] == np.arange(N_GRADES))
    ).sum()
    lesion_hits = (pred_lesions == true_lesions).sum()
    accuracy = 100.0 * (grade_hits + lesion_hits) / (n * (N_GRADES + N_LESIONS))

    confusion = np.zeros((N_GRADES, N_GRADES), dtype=np.int64)
    np.add.at(confusion, (true_grades, pred_grades), 1)

    skipped: list[str] = []
    auc_per: dict[int, float | None] = {}
    f1_per: dict[int, float | None] = {}
    for k in range(N_GRADES):
        present = (true_grades == k).any()
        auc_per[k] = rank_auc(grade_probs[:, k], true_grades == k)
        if auc_per[k] is None:
            skipped.append(f"auc/grade{k}: needs both positives and negatives")
        if not present:
            f1_per[k] = None
            skipped.append(f"f1/grade{k}: absent from labels")
            continue
        tp = float(confusion[k, k])
        fp = float(confusion[:, k].sum() - tp)
        fn = float(confusion[k, :].sum() - tp)
        f1_per[k] = 100.0 * 2 * tp / (2 * tp + fp + fn) if (2 * tp + fp + fn) > 0 else 0.0

    auc_vals = [v for v in auc_per.values() if v is not None]
    f1_vals = [v for v in f1_per.values() if v is not None]
    return ClassificationMetrics(
        accuracy=float(accuracy),
        auc=_mean_or_none(auc_vals),
        f1=_mean_or_none(f1_vals),
        kappa=quadratic_weighted_kappa(confusion),
        auc_per_class=auc_per,
        f1_per_class=f1_per,
        skipped=skipped,
    )


# ------------------------------------------------------------ loop curves


@dataclass
class ReductionCurve:
    values: list[float]  # index t-1 holds the fraction flipped by cycle t
    initially_referable: int
    defined: bool

    @property
    def final_rate(self) -> float | None:
        return self.values[-1] if self.defined and self.values else None


def reduction_curve(flip_records, max_iterations: int) -> ReductionCurve:
    """Fraction of initially-referable images regressed by each cycle.

    flip_records: (initially_referable: bool, flip_iteration: int | None)
    per image, flip_iteration being the cycle whose result first graded
    non-referable. Monotone by construction: a flipped image stays flipped.
    """
    flips = [t for ref, t in flip_records if ref]
    total = len(flips)
    if total == 0:
        return ReductionCurve(values=[], initially_referable=0, defined=False)
    values = []
    for t in range(1, max_iterations + 1):
        flipped = sum(1 for ft in flips if ft is not None and ft <= t)
        values.append(flipped / total)
    return ReductionCurve(values=values, initially_referable=total, defined=True)


def flip_record(entry_grade: int, final_grade: int, iterations_performed: int, reason: str):
    """Distill one loop outcome into the curve's (referable, flip_t) form."""
    initially = entry_grade in (2, 3, 4)
    flip_t = iterations_performed if (initially and reason == "nonreferable") else None
    return initially, flip_t


def transition_flow(labels: list[int], final_grades: list[int]) -> np.ndarray:
    """5x5 counts: rows are dataset grade labels, columns the grade finally
    predicted after the loop. Row sums equal per-grade sample counts."""
    if len(labels) != len(final_grades):
        raise InvalidInputError("labels and final grades must align")
    matrix = np.zeros((N_GRADES, N_GRADES), dtype=np.int64)
    for lab, fin in zip(labels, final_grades):
        if not (0 <= lab < N_GRADES and 0 <= fin < N_GRADES):
            raise InvalidInputError(f"grade pair ({lab}, {fin}) out of range")
        matrix[lab, fin] += 1
    return matrix


# ------------------------------------------------------------ the report


@dataclass
class MetricReport:
    seg: SegScores
    classification: ClassificationMetrics
    curve: ReductionCurve
    transitions: np.ndarray
    n_images: int
    n_failed: int
    pooled: dict[str, float | None] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "counts": {"images": self.n_images, "failed": self.n_failed},
            "segmentation": {
                "per_class": self.seg.per_class,
                "overall_wo_bg": self.seg.overall_wo_bg,
                "overall": self.seg.overall,
                "pooled_sensitivity": self.pooled,
                "skipped": self.seg.skipped,
            },
            "classification": {
                "accuracy": self.classification.accuracy,
                "auc": self.classification.auc,
                "auc_per_class": {str(k): v for k, v in self.classification.auc_per_class.items()},
                "f1": self.classification.f1,
                "f1_per_class": {str(k): v for k, v in self.classification.f1_per_class.items()},
                "kappa": self.classification.kappa,
                "skipped": self.classification.skipped,
            },
            "reduction_curve": {
                "values": self.curve.values,
                "initially_referable": self.curve.initially_referable,
                "defined": self.curve.defined,
            },
            "transition_flow": self.transitions.tolist(),
            "notes": self.notes,
        }


REPORT_NOTES = [
    "images without a lesion type are skipped when averaging that type's sensitivity",
    "empty-ground-truth overlap scores grade the prediction alone: 100 if empty, else 0",
    "per-lesion scores measure coverage by the single class-agnostic accumulated mask",
    "pooled_sensitivity pools pixel counts across the whole set before dividing",
]


def build_report(
    per_image_seg: list[dict[str, SegMetrics]],
    predictions,
    labels,
    flip_records,
    final_grades: list[int],
    max_iterations: int,
    n_failed: int = 0,
    per_image_counts=None,
) -> MetricReport:
    return MetricReport(
        seg=aggregate_seg(per_image_seg),
        classification=classification_metrics(predictions, labels),
        curve=reduction_curve(flip_records, max_iterations),
        transitions=transition_flow([g for g, _ in labels], final_grades),
        n_images=len(per_image_seg),
        n_failed=n_failed,
        pooled=pooled_sensitivity(per_image_counts) if per_image_counts else {},
        notes=list(REPORT_NOTES),
    )


def write_report_json(report: MetricReport, path) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n")


def write_metrics_csv(report: MetricReport, path) -> None:
    """Flat metric,class,value rows; empty value cell where undefined."""
    rows: list[tuple[str, str, float | None]] = []
    for name in SEG_CLASSES:
        for key in _METRIC_KEYS:
            rows.append((key, name, report.seg.per_class[name][key]))
    for key in _METRIC_KEYS:
        rows.append((key, "overall_wo_bg", report.seg.overall_wo_bg[key]))
        rows.append((key, "overall", report.seg.overall[key]))
    for name in LESION_TYPES + ("all",):
        if name in report.pooled:
            rows.append(("pooled_sensitivity", name, report.pooled[name]))
    cls = report.classification
    rows.append(("accuracy", "all", cls.accuracy))
    for k in range(N_GRADES):
        rows.append(("auc", f"grade{k}", cls.auc_per_class[k]))
        rows.append(("f1", f"grade{k}", cls.f1_per_class[k]))
    rows.append(("auc", "macro", cls.auc))
    rows.append(("f1", "macro", cls.f1))
    rows.append(("kappa", "grades", cls.kappa))
    for t, value in enumerate(report.curve.values, start=1):
        rows.append(("reduction_rate", f"iter{t}", value))

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "class", "value"])
        for metric, name, value in rows:
            writer.writerow([metric, name, "" if value is None else f"{value:.6f}"])
