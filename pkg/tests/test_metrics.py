import csv
import json

import numpy as np
import pytest

from regrade import evaluation as ev
from regrade import reporting
from regrade.encoder import PredictionRecord
from regrade.errors import InvalidInputError


def block_mask(size, top, left, height, width):
    m = np.zeros((size, size), dtype=bool)
    m[top : top + height, left : left + width] = True
    return m


# ------------------------------------------------------------ seg metrics


def test_seg_metrics_overlapping_blocks():
    pred = block_mask(10, 2, 2, 2, 2)
    gt = block_mask(10, 2, 3, 2, 2)  # shares a 2x1 column
    m = ev.seg_metrics(pred, gt)
    assert m.sensitivity == pytest.approx(50.0)
    assert m.iou == pytest.approx(100.0 * 2 / 6)
    assert m.dice == pytest.approx(50.0)


def test_seg_metrics_identity_and_disjoint():
    gt = block_mask(12, 3, 3, 4, 4)
    perfect = ev.seg_metrics(gt, gt)
    assert (perfect.sensitivity, perfect.iou, perfect.dice) == (100.0, 100.0, 100.0)
    miss = ev.seg_metrics(block_mask(12, 8, 8, 2, 2), gt)
    assert (miss.sensitivity, miss.iou, miss.dice) == (0.0, 0.0, 0.0)


def test_seg_metrics_empty_gt_convention():
    empty = np.zeros((8, 8), dtype=bool)
    clean = ev.seg_metrics(empty, empty)
    assert clean.sensitivity is None
    assert clean.iou == 100.0 and clean.dice == 100.0
    noisy = ev.seg_metrics(block_mask(8, 0, 0, 1, 1), empty)
    assert noisy.sensitivity is None
    assert noisy.iou == 0.0 and noisy.dice == 0.0


def test_seg_metrics_random_brute_force():
    rng = np.random.default_rng(5)
    for _ in range(50):
        pred = rng.random((9, 9)) < 0.4
        gt = rng.random((9, 9)) < 0.3
        if not gt.any():
            continue
        m = ev.seg_metrics(pred, gt)
        tp = int((pred & gt).sum())
        fp = int((pred & ~gt).sum())
        fn = int((~pred & gt).sum())
        assert m.sensitivity == pytest.approx(100 * tp / (tp + fn))
        assert m.iou == pytest.approx(100 * tp / (tp + fp + fn))
        assert m.dice == pytest.approx(100 * 2 * tp / (2 * tp + fp + fn))


def test_seg_metrics_shape_mismatch():
    with pytest.raises(InvalidInputError):
        ev.seg_metrics(np.zeros((4, 4), dtype=bool), np.zeros((5, 5), dtype=bool))


def test_lesion_attribution_background_is_union_complement():
    acc = block_mask(16, 0, 0, 8, 16)
    masks = {
        "MA": block_mask(16, 2, 2, 2, 2),
        "HE": block_mask(16, 10, 10, 2, 2),
        "SE": np.zeros((16, 16), dtype=bool),
        "EX": block_mask(16, 4, 4, 4, 4),
    }
    scores = ev.lesion_attribution(acc, masks)
    assert scores["MA"].sensitivity == pytest.approx(100.0)
    assert scores["HE"].sensitivity == pytest.approx(0.0)
    assert scores["SE"].sensitivity is None
    assert scores["EX"].sensitivity == pytest.approx(100.0)
    union = masks["MA"] | masks["HE"] | masks["SE"] | masks["EX"]
    expected_bg = ev.seg_metrics(~acc, ~union)
    assert scores["bg"].sensitivity == pytest.approx(expected_bg.sensitivity)


def test_aggregate_seg_means_and_skip():
    def entry(sens, iou, dice):
        return ev.SegMetrics(sensitivity=sens, iou=iou, dice=dice)

    base = {
        "MA": entry(40.0, 10.0, 20.0),
        "HE": entry(None, 100.0, 100.0),
        "SE": entry(None, 100.0, 100.0),
        "EX": entry(80.0, 30.0, 40.0),
        "bg": entry(90.0, 85.0, 88.0),
    }
    other = dict(base)
    other["MA"] = entry(60.0, 20.0, 30.0)
    other["HE"] = entry(50.0, 25.0, 35.0)
    agg = ev.aggregate_seg([base, other])
    assert agg.per_class["MA"]["sensitivity"] == pytest.approx(50.0)
    assert agg.per_class["HE"]["sensitivity"] == pytest.approx(50.0)  # one defined value
    assert agg.per_class["SE"]["sensitivity"] is None
    assert any(s.startswith("sensitivity/SE") for s in agg.skipped)
    # macro over lesion classes skips the undefined SE sensitivity
    assert agg.overall_wo_bg["sensitivity"] == pytest.approx(np.mean([50.0, 50.0, 80.0]))
    assert agg.overall_wo_bg["miou"] == pytest.approx(np.mean([15.0, 62.5, 100.0, 30.0]))
    assert agg.overall["dice"] == pytest.approx(np.mean([25.0, 67.5, 100.0, 40.0, 88.0]))


def test_aggregate_seg_empty_raises():
    with pytest.raises(InvalidInputError):
        ev.aggregate_seg([])


def test_coverage_counts_and_pooling():
    acc = block_mask(16, 0, 0, 16, 8)  # left half
    masks = {
        "MA": block_mask(16, 0, 6, 2, 4),  # 8 px, 4 covered
        "HE": block_mask(16, 4, 0, 2, 2),  # 4 px, all covered
        "SE": np.zeros((16, 16), dtype=bool),
        "EX": block_mask(16, 8, 12, 2, 2),  # 4 px, none covered
    }
    counts = ev.coverage_counts(acc, masks)
    assert counts["MA"] == (4, 8)
    assert counts["HE"] == (4, 4)
    assert counts["SE"] == (0, 0)
    assert counts["EX"] == (0, 4)
    assert counts["all"] == (8, 16)

    twin = ev.coverage_counts(np.zeros((16, 16), dtype=bool), masks)
    pooled = ev.pooled_sensitivity([counts, twin])
    assert pooled["MA"] == pytest.approx(100 * 4 / 16)
    assert pooled["HE"] == pytest.approx(50.0)
    assert pooled["SE"] is None
    assert pooled["EX"] == pytest.approx(0.0)
    assert pooled["all"] == pytest.approx(25.0)
    with pytest.raises(InvalidInputError):
        ev.pooled_sensitivity([])


# --------------------------------------------------------- classification


def kappa_oracle(confusion):
    obs = np.asarray(confusion, dtype=float)
    k = obs.shape[0]
    n = obs.sum()
    w = np.array([[(i - j) ** 2 / (k - 1) ** 2 for j in range(k)] for i in range(k)])
    po = sum(w[i, j] * obs[i, j] / n for i in range(k) for j in range(k))
    row = obs.sum(axis=1) / n
    col = obs.sum(axis=0) / n
    pe = sum(w[i, j] * row[i] * col[j] for i in range(k) for j in range(k))
    return 1.0 - po / pe


def test_kappa_matches_brute_force():
    rng = np.random.default_rng(11)
    for _ in range(30):
        confusion = rng.integers(0, 12, size=(5, 5))
        if confusion.sum() == 0 or kappa_denominator_zero(confusion):
            continue
        assert ev.quadratic_weighted_kappa(confusion) == pytest.approx(
            kappa_oracle(confusion), abs=1e-12
        )


def kappa_denominator_zero(confusion):
    obs = np.asarray(confusion, dtype=float)
    k = obs.shape[0]
    w = (np.subtract.outer(np.arange(k), np.arange(k)) ** 2) / (k - 1) ** 2
    expected = np.outer(obs.sum(axis=1), obs.sum(axis=0)) / obs.sum()
    return (w * expected).sum() == 0.0


def test_kappa_edge_cases():
    perfect = np.diag([3, 1, 4, 1, 5])
    assert ev.quadratic_weighted_kappa(perfect) == pytest.approx(1.0)
    single = np.zeros((5, 5), dtype=int)
    single[2, 2] = 7  # no possible weighted disagreement
    assert ev.quadratic_weighted_kappa(single) == 1.0
    with pytest.raises(InvalidInputError):
        ev.quadratic_weighted_kappa(np.zeros((5, 5)))
    with pytest.raises(InvalidInputError):
        ev.quadratic_weighted_kappa(np.zeros((3, 5)))


def auc_oracle(scores, positives):
    pos = scores[positives]
    neg = scores[~positives]
    wins = sum(float(p > q) + 0.5 * float(p == q) for p in pos for q in neg)
    return wins / (len(pos) * len(neg))


def test_rank_auc_matches_pairwise_oracle():
    rng = np.random.default_rng(23)
    for _ in range(30):
        n = int(rng.integers(4, 30))
        scores = rng.integers(0, 6, size=n).astype(float)  # heavy ties
        positives = rng.random(n) < 0.5
        if positives.all() or not positives.any():
            continue
        assert ev.rank_auc(scores, positives) == pytest.approx(
            auc_oracle(scores, positives), abs=1e-12
        )


def test_rank_auc_endpoints():
    scores = np.array([0.1, 0.2, 0.8, 0.9])
    labels = np.array([False, False, True, True])
    assert ev.rank_auc(scores, labels) == 1.0
    assert ev.rank_auc(-scores, labels) == 0.0
    assert ev.rank_auc(np.full(4, 3.0), labels) == 0.5
    assert ev.rank_auc(scores, np.zeros(4, dtype=bool)) is None
    assert ev.rank_auc(scores, np.ones(4, dtype=bool)) is None


def make_prediction(grade, lesions=(0, 0, 0, 0), probs=None):
    if probs is None:
        probs = np.zeros(9)
        probs[grade] = 1.0
    return PredictionRecord(
        scores=np.zeros(9),
        probs=np.asarray(probs, dtype=float),
        grade=grade,
        lesions=np.asarray(lesions, dtype=np.int64),
    )


def test_classification_accuracy_counts_nine_decisions():
    predictions = [make_prediction(2, lesions=(1, 0, 0, 0))]
    labels = [(3, (1, 1, 0, 0))]
    # one-vs-rest grade calls agree except grades 2 and 3; lesions agree on 3 of 4
    metrics = ev.classification_metrics(predictions, labels)
    assert metrics.accuracy == pytest.approx(100.0 * (3 + 3) / 9)


def test_classification_f1_and_skips():
    predictions = [make_prediction(g) for g in (0, 0, 1, 2)]
    labels = [(0, (0, 0, 0, 0)), (1, (0, 0, 0, 0)), (1, (0, 0, 0, 0)), (2, (0, 0, 0, 0))]
    metrics = ev.classification_metrics(predictions, labels)
    assert metrics.f1_per_class[0] == pytest.approx(100 * 2 * 1 / (2 * 1 + 1 + 0))
    assert metrics.f1_per_class[1] == pytest.approx(100 * 2 * 1 / (2 * 1 + 0 + 1))
    assert metrics.f1_per_class[2] == pytest.approx(100.0)
    assert metrics.f1_per_class[3] is None and metrics.f1_per_class[4] is None
    assert any("f1/grade3" in s for s in metrics.skipped)
    assert metrics.f1 == pytest.approx(np.mean([metrics.f1_per_class[0], metrics.f1_per_class[1], 100.0]))
    assert metrics.kappa == pytest.approx(kappa_oracle(np.array(
        [[1, 0, 0, 0, 0], [1, 1, 0, 0, 0], [0, 0, 1, 0, 0], [0, 0, 0, 0, 0], [0, 0, 0, 0, 0]]
    )), abs=1e-12)


def test_classification_rejects_misaligned_inputs():
    with pytest.raises(InvalidInputError):
        ev.classification_metrics([], [])
    with pytest.raises(InvalidInputError):
        ev.classification_metrics([make_prediction(0)], [(0, (0, 0))])


# ------------------------------------------------------------ loop curves


def test_reduction_curve_half_then_full():
    records = [(True, 1), (True, 2)]
    curve = ev.reduction_curve(records, max_iterations=2)
    assert curve.values == [0.5, 1.0]
    assert curve.initially_referable == 2
    assert curve.final_rate == 1.0


def test_reduction_curve_ignores_nonreferable_and_handles_stuck():
    records = [(False, None), (True, 1), (True, None), (True, 3)]
    curve = ev.reduction_curve(records, max_iterations=4)
    assert curve.values == [1 / 3, 1 / 3, 2 / 3, 2 / 3]
    assert all(a <= b for a, b in zip(curve.values, curve.values[1:]))


def test_reduction_curve_undefined_without_referables():
    curve = ev.reduction_curve([(False, None)] * 3, max_iterations=5)
    assert not curve.defined
    assert curve.values == []
    assert curve.final_rate is None


def test_flip_record_forms():
    assert ev.flip_record(3, 0, 2, "nonreferable") == (True, 2)
    assert ev.flip_record(0, 0, 0, "nonreferable") == (False, None)
    assert ev.flip_record(4, 4, 10, "max_iterations") == (True, None)
    assert ev.flip_record(2, 2, 1, "inpaint_degenerate") == (True, None)


def test_transition_flow_counts_and_row_sums():
    labels = [0, 0, 1, 2, 2, 2, 4]
    finals = [0, 1, 1, 0, 0, 2, 1]
    matrix = ev.transition_flow(labels, finals)
    assert matrix[0, 0] == 1 and matrix[0, 1] == 1
    assert matrix[2, 0] == 2 and matrix[2, 2] == 1
    assert matrix[4, 1] == 1
    row_sums = matrix.sum(axis=1)
    for g in range(5):
        assert row_sums[g] == labels.count(g)
    with pytest.raises(InvalidInputError):
        ev.transition_flow([0, 5], [0, 0])
    with pytest.raises(InvalidInputError):
        ev.transition_flow([0], [0, 1])


# ------------------------------------------------------------- the report


def sample_report():
    per_image = []
    counts = []
    acc = block_mask(16, 0, 0, 8, 16)
    masks = {
        "MA": block_mask(16, 2, 2, 2, 2),
        "HE": block_mask(16, 10, 10, 2, 2),
        "SE": np.zeros((16, 16), dtype=bool),
        "EX": block_mask(16, 4, 4, 4, 4),
    }
    for _ in range(2):
        per_image.append(ev.lesion_attribution(acc, masks))
        counts.append(ev.coverage_counts(acc, masks))
    predictions = [make_prediction(3), make_prediction(0)]
    labels = [(3, (0, 0, 0, 0)), (0, (0, 0, 0, 0))]
    flips = [ev.flip_record(3, 0, 2, "nonreferable"), ev.flip_record(0, 0, 0, "nonreferable")]
    return ev.build_report(
        per_image, predictions, labels, flips, [0, 0],
        max_iterations=3, n_failed=1, per_image_counts=counts,
    )


def test_build_report_carries_all_sections():
    report = sample_report()
    assert report.n_images == 2 and report.n_failed == 1
    assert report.curve.values == [0.0, 1.0, 1.0]
    assert report.transitions[3, 0] == 1 and report.transitions[0, 0] == 1
    assert report.pooled["SE"] is None
    payload = report.to_dict()
    assert payload["counts"] == {"images": 2, "failed": 1}
    assert "pooled_sensitivity" in payload["segmentation"]
    assert payload["notes"]


def test_report_json_and_csv_round_trip(tmp_path):
    report = sample_report()
    ev.write_report_json(report, tmp_path / "report.json")
    payload = json.loads((tmp_path / "report.json").read_text())
    assert payload["reduction_curve"]["values"] == [0.0, 1.0, 1.0]

    ev.write_metrics_csv(report, tmp_path / "metrics.csv")
    with open(tmp_path / "metrics.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["metric", "class", "value"]
    table = {(metric, name): value for metric, name, value in rows[1:]}
    assert table[("sensitivity", "SE")] == ""  # undefined stays blank
    assert float(table[("sensitivity", "MA")]) == pytest.approx(100.0)
    assert float(table[("kappa", "grades")]) == pytest.approx(report.classification.kappa)
    assert float(table[("pooled_sensitivity", "all")]) == pytest.approx(report.pooled["all"])
    assert float(table[("reduction_rate", "iter2")]) == pytest.approx(1.0)


# -------------------------------------------------------------- rendering


def test_plots_and_montage_write_files(tmp_path):
    reporting.plot_reduction_curve([0.2, 0.6, 1.0], tmp_path / "curve.png")
    reporting.plot_transition_flow(np.eye(5, dtype=int) * 3, tmp_path / "flow.png")
    rows = [
        {
            "original": np.full((16, 16, 3), 90, dtype=np.uint8),
            "saliency": np.full((16, 16), 40, dtype=np.uint8),
            "contours": np.full((16, 16, 3), 120, dtype=np.uint8),
            "inpainted": np.full((16, 16, 3), 60, dtype=np.uint8),
        }
    ]
    reporting.montage(rows, tmp_path / "montage.png")
    for name in ("curve.png", "flow.png", "montage.png"):
        assert (tmp_path / name).stat().st_size > 0


def test_plot_transition_flow_rejects_wrong_shape(tmp_path):
    with pytest.raises(InvalidInputError):
        reporting.plot_transition_flow(np.zeros((4, 4)), tmp_path / "bad.png")


def test_contour_overlay_marks_boundary_only():
    image = np.full((12, 12, 3), 50, dtype=np.uint8)
    mask = block_mask(12, 3, 3, 5, 5)
    out = reporting.contour_overlay(image, mask)
    from scipy import ndimage

    boundary = mask & ~ndimage.binary_erosion(mask)
    assert (out[boundary] == (255, 32, 32)).all()
    assert (out[~mask] == 50).all()
    interior = mask & ~boundary
    assert (out[interior] == 50).all()
    with pytest.raises(InvalidInputError):
        reporting.contour_overlay(image, block_mask(10, 0, 0, 2, 2))
