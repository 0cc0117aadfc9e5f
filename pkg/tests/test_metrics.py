"""Metric fixtures derived by hand, plus structural properties."""

import random

import numpy as np
import pytest

from detcount.metrics import (
    GroundTruthRecord,
    PredictionRecord,
    alignment_rate,
    average_precision_recall,
    evaluate_dataset,
    game,
    iou_box,
    mae_and_match_rate,
    miou,
)
from detcount.parsing import Detection, ParsedResponse


def det(x, y, w=10.0, h=10.0):
    return Detection(
        bbox=(x - w / 2, y - h / 2, x + w / 2, y + h / 2), point=(x, y), label="fish"
    )


def resp_for(points, count=None):
    dets = tuple(det(x, y) for x, y in points)
    return ParsedResponse(
        think="scan", detections=dets, fish_count=len(dets) if count is None else count
    )


def test_iou_identical():
    assert iou_box((0, 0, 10, 10), (0, 0, 10, 10)) == 1.0


def test_iou_disjoint():
    assert iou_box((0, 0, 10, 10), (20, 20, 30, 30)) == 0.0


def test_iou_third():
    assert iou_box((0, 0, 10, 10), (5, 0, 15, 10)) == pytest.approx(1 / 3, abs=1e-12)


def test_iou_degenerate_union():
    assert iou_box((0, 0, 0, 0), (0, 0, 0, 0)) == 0.0


def test_ap_ar_iou_075_fixture():
    # Single prediction overlapping its gt at IoU exactly 0.75: matched at
    # thresholds 0.50..0.75, six of ten.
    gt = [(0.0, 0.0, 10.0, 10.0)]
    pred = [(0.0, 0.0, 10.0, 7.5)]
    assert iou_box(pred[0], gt[0]) == 0.75
    ap, ar = average_precision_recall([pred], [gt])
    assert ap == 60.0
    assert ar == 60.0


def test_ap_ar_perfect():
    boxes = [[(0, 0, 10, 10), (20, 20, 40, 45)], [(5, 5, 9, 9)]]
    ap, ar = average_precision_recall(boxes, boxes)
    assert ap == 100.0
    assert ar == 100.0


def test_ap_ar_no_predictions():
    ap, ar = average_precision_recall([[]], [[(0, 0, 10, 10)]])
    assert ap == 0.0
    assert ar == 0.0


def test_ap_ar_rejects_empty_gt_and_mismatch():
    with pytest.raises(ValueError):
        average_precision_recall([[]], [[]])
    with pytest.raises(ValueError):
        average_precision_recall([[], []], [[]])


def test_ap_penalizes_false_positives():
    gt = [[(0, 0, 10, 10)]]
    clean = average_precision_recall([[(0, 0, 10, 10)]], gt)[0]
    noisy = average_precision_recall(
        [[(50, 50, 60, 60), (0, 0, 10, 10)]], gt
    )[0]
    assert noisy < clean


def test_ap_ar_translation_invariant():
    rng = random.Random(53)
    for _ in range(30):
        def boxes():
            out = []
            for _ in range(rng.randrange(1, 5)):
                x, y = rng.randrange(0, 50), rng.randrange(0, 50)
                out.append((x, y, x + rng.randrange(5, 20), y + rng.randrange(5, 20)))
            return out

        gt = [boxes(), boxes()]
        pred = [boxes(), boxes()]
        base = average_precision_recall(pred, gt)
        shift = lambda bs: [(x1 + 16, y1 + 16, x2 + 16, y2 + 16) for x1, y1, x2, y2 in bs]
        moved = average_precision_recall([shift(b) for b in pred], [shift(b) for b in gt])
        assert base == moved


def test_miou_identical():
    m = np.zeros((8, 8), dtype=bool)
    m[2:5, 2:7] = True
    assert miou([(m, m)]) == (100.0, 100.0, 100.0)


def test_miou_missed_foreground():
    gt = np.zeros((8, 8), dtype=bool)
    gt[0:2, 0:2] = True
    pred = np.zeros((8, 8), dtype=bool)
    fg, bg, mean = miou([(pred, gt)])
    assert fg == 0.0
    assert bg == pytest.approx(100.0 * 60 / 64, abs=1e-9)


def test_miou_halves_fixture():
    gt = np.zeros((10, 10), dtype=bool)
    gt[:, :5] = True  # left half foreground
    pred = np.zeros((10, 10), dtype=bool)
    pred[:5, :] = True  # top half foreground
    fg, bg, mean = miou([(pred, gt)])
    third = 100.0 * 25 / 75
    assert fg == third
    assert bg == third
    assert mean == third


def test_miou_aggregates_over_dataset():
    # One perfect pair and one fully-wrong pair: aggregation pools pixels,
    # it does not average per-image scores.
    a = np.ones((4, 4), dtype=bool)
    b = np.zeros((4, 4), dtype=bool)
    fg, _, _ = miou([(a, a), (b, a)])
    assert fg == 100.0 * 16 / 32


def test_miou_empty_class_convention():
    z = np.zeros((4, 4), dtype=bool)
    fg, bg, mean = miou([(z, z)])
    assert (fg, bg, mean) == (100.0, 100.0, 100.0)


def test_miou_rejects_shape_mismatch_and_empty():
    with pytest.raises(ValueError):
        miou([(np.zeros((2, 2), bool), np.zeros((3, 3), bool))])
    with pytest.raises(ValueError):
        miou([])


def test_mae_match_rate_fixtures():
    assert mae_and_match_rate([(3, 3), (2, 2)]) == (0.0, 1.0)
    assert mae_and_match_rate([(3, 1)]) == (2.0, 0.0)
    assert mae_and_match_rate([(2, 3), (3, 3)]) == (0.5, 0.5)
    with pytest.raises(ValueError):
        mae_and_match_rate([])


def test_mae_zero_iff_match_rate_one():
    rng = random.Random(59)
    for _ in range(200):
        records = [
            (rng.randrange(0, 5), rng.randrange(0, 5))
            for _ in range(rng.randrange(1, 9))
        ]
        mae, rate = mae_and_match_rate(records)
        assert (mae == 0.0) == (rate == 1.0)


def test_game_identity():
    pts = [[(10.0, 10.0), (200.0, 30.0)]]
    mean, per_level = game(pts, pts, (256.0, 256.0))
    assert mean == 0.0
    assert per_level == (0.0, 0.0, 0.0, 0.0)


def test_game_opposite_corners_fixture():
    mean, per_level = game(
        [[(200.0, 200.0)]], [[(10.0, 10.0)]], (256.0, 256.0)
    )
    assert per_level == (2.0, 2.0, 2.0, 2.0)
    assert mean == 2.0


def test_game_neighbors_share_cells_fixture():
    mean, _ = game([[(11.0, 10.0)]], [[(10.0, 10.0)]], (256.0, 256.0))
    assert mean == 0.0


def test_game_counts_missing_points():
    # Empty prediction against two gt points: every level pays 2.
    mean, per_level = game([[]], [[(10.0, 10.0), (240.0, 240.0)]], (256.0, 256.0))
    assert per_level == (2.0, 2.0, 2.0, 2.0)


def test_game_boundary_points_clamped():
    mean, _ = game(
        [[(256.0, 256.0)]], [[(255.9, 255.9)]], (256.0, 256.0)
    )
    assert mean == 0.0


def test_game_levels_non_decreasing():
    rng = random.Random(61)
    for _ in range(200):
        size = (rng.choice([64.0, 100.0, 256.0]), rng.choice([64.0, 128.0, 200.0]))
        def cloud():
            return [
                (rng.uniform(0, size[0]), rng.uniform(0, size[1]))
                for _ in range(rng.randrange(0, 9))
            ]
        _, per_level = game([cloud(), cloud()], [cloud(), cloud()], size)
        for lo, hi in zip(per_level, per_level[1:]):
            assert hi >= lo


def test_game_depends_only_on_cell_membership():
    rng = random.Random(67)
    size = (128.0, 128.0)
    def centroid(p):
        cx = min(int(p[0] * 16 / size[0]), 15)
        cy = min(int(p[1] * 16 / size[1]), 15)
        return ((cx + 0.5) * size[0] / 16, (cy + 0.5) * size[1] / 16)
    for _ in range(100):
        preds = [[(rng.uniform(0, 128), rng.uniform(0, 128)) for _ in range(5)]]
        gts = [[(rng.uniform(0, 128), rng.uniform(0, 128)) for _ in range(5)]]
        base = game(preds, gts, size)
        snapped = game(
            [[centroid(p) for p in preds[0]]], [[centroid(p) for p in gts[0]]], size
        )
        assert base == snapped


def test_game_per_image_sizes():
    mean_single, _ = game([[(10.0, 10.0)]], [[(10.0, 10.0)]], (64.0, 64.0))
    mean_list, _ = game([[(10.0, 10.0)]], [[(10.0, 10.0)]], [(64.0, 64.0)])
    assert mean_single == mean_list == 0.0


def test_alignment_rate_cases():
    aligned = resp_for([(10, 10)])
    off = resp_for([(10, 10), (30, 30), (60, 60)], count=2)
    assert alignment_rate([aligned, aligned]) == 1.0
    assert alignment_rate([aligned, off]) == 0.5
    assert alignment_rate([off]) == 0.0
    with pytest.raises(ValueError):
        alignment_rate([])


def make_gt(image_id, points, with_boxes=True, mask=None):
    boxes = tuple((x - 5, y - 5, x + 5, y + 5) for x, y in points) if with_boxes else None
    return GroundTruthRecord(
        image_id=image_id,
        image_size=(100.0, 100.0),
        points=tuple(points),
        boxes=boxes,
        mask=mask,
    )


def test_evaluate_dataset_perfect():
    mask = np.zeros((100, 100), dtype=bool)
    mask[10:30, 10:30] = True
    gts = [
        make_gt("a", [(20.0, 20.0), (70.0, 70.0)], mask=mask),
        make_gt("b", [(50.0, 50.0)], mask=mask),
    ]
    preds = [
        PredictionRecord("a", resp_for([(20.0, 20.0), (70.0, 70.0)]), mask=mask),
        PredictionRecord("b", resp_for([(50.0, 50.0)]), mask=mask),
    ]
    report = evaluate_dataset(gts, preds)
    assert report.ap_50_95 == 100.0
    assert report.ar_50_95 == 100.0
    assert report.miou == 100.0
    assert report.mae == 0.0
    assert report.match_rate == 1.0
    assert report.game == 0.0
    assert report.alignment_rate == 1.0
    assert report.n_images == 2


def test_evaluate_dataset_nulls_when_inputs_absent():
    gts = [make_gt("a", [(20.0, 20.0)], with_boxes=False)]
    preds = [PredictionRecord("a", resp_for([(20.0, 20.0)]))]
    report = evaluate_dataset(gts, preds)
    assert report.ap_50_95 is None
    assert report.ar_50_95 is None
    assert report.fg_iou is None and report.miou is None
    assert report.mae == 0.0
    assert report.game == 0.0


def test_evaluate_dataset_missing_prediction_counts_as_empty():
    gts = [make_gt("a", [(20.0, 20.0)], with_boxes=False), make_gt("b", [], with_boxes=False)]
    report = evaluate_dataset(gts, [])
    assert report.mae == 0.5
    assert report.match_rate == 0.5
    assert report.alignment_rate is None


def test_evaluate_dataset_rejects_unknown_and_duplicate_ids():
    gts = [make_gt("a", [(20.0, 20.0)], with_boxes=False)]
    with pytest.raises(ValueError):
        evaluate_dataset(gts, [PredictionRecord("zzz", resp_for([]))])
    with pytest.raises(ValueError):
        evaluate_dataset(
            gts,
            [PredictionRecord("a", resp_for([])), PredictionRecord("a", resp_for([]))],
        )
    with pytest.raises(ValueError):
        evaluate_dataset([], [])


def test_ground_truth_record_validation():
    with pytest.raises(ValueError):
        make_gt("a", [(200.0, 20.0)])
    with pytest.raises(ValueError):
        GroundTruthRecord(
            image_id="a",
            image_size=(10.0, 10.0),
            points=(),
            mask=np.zeros((5, 5), dtype=bool),
        )


def test_report_as_dict_has_per_level_games():
    gts = [make_gt("a", [(20.0, 20.0)], with_boxes=False)]
    report = evaluate_dataset(gts, [PredictionRecord("a", resp_for([(20.0, 20.0)]))])
    d = report.as_dict()
    assert {"game_1", "game_2", "game_3", "game_4"} <= set(d)
    assert d["mae"] == 0.0
