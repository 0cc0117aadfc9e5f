"""Dataset-level evaluation for detect-to-count predictions.

Covers box AP/AR over IoU 0.5:0.95 with confidence-free emission-order
ranking, dataset-aggregated foreground/background/mean IoU on binary masks,
count MAE and exact-match rate, grid average mean absolute error (GAME) at
levels 1..4, and the detections-vs-declared-count alignment rate.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .parsing import ParsedResponse

Box = tuple[float, float, float, float]
Point = tuple[float, float]

IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * k, 2) for k in range(10))
GAME_LEVELS = (1, 2, 3, 4)


@dataclass(frozen=True, eq=False)
class GroundTruthRecord:
    """Per-image labels: points always, boxes and a binary mask optionally."""

    image_id: str
    image_size: tuple[float, float]
    points: tuple[Point, ...]
    boxes: Optional[tuple[Box, ...]] = None
    mask: Optional[np.ndarray] = None

    def __post_init__(self):
        width, height = self.image_size
        if width <= 0 or height <= 0:
            raise ValueError(f"{self.image_id}: image_size must be positive")
        for x, y in self.points:
            if not (0 <= x <= width and 0 <= y <= height):
                raise ValueError(f"{self.image_id}: point ({x}, {y}) out of bounds")
        if self.mask is not None:
            expect = (int(height), int(width))
            if self.mask.shape != expect:
                raise ValueError(
                    f"{self.image_id}: mask shape {self.mask.shape} != {expect}"
                )


@dataclass(frozen=True, eq=False)
class PredictionRecord:
    image_id: str
    parsed: ParsedResponse
    mask: Optional[np.ndarray] = None


@dataclass(frozen=True)
class MetricsReport:
    """IoU-family values in percent; rates in [0,1]; None = input absent."""

    ap_50_95: Optional[float]
    ar_50_95: Optional[float]
    fg_iou: Optional[float]
    bg_iou: Optional[float]
    miou: Optional[float]
    mae: float
    match_rate: float
    game: float
    game_per_level: tuple[float, float, float, float]
    alignment_rate: Optional[float]
    n_images: int

    def as_dict(self) -> dict:
        d = {
            "ap_50_95": self.ap_50_95,
            "ar_50_95": self.ar_50_95,
            "fg_iou": self.fg_iou,
            "bg_iou": self.bg_iou,
            "miou": self.miou,
            "mae": self.mae,
            "match_rate": self.match_rate,
            "game": self.game,
            "alignment_rate": self.alignment_rate,
            "n_images": self.n_images,
        }
        for level, value in zip(GAME_LEVELS, self.game_per_level):
            d[f"game_{level}"] = value
        return d


def iou_box(a: Box, b: Box) -> float:
    ax1, ay1, ax2, ay2 = a
    bx1, by1, bx2, by2 = b
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0 or ih <= 0:
        inter = 0.0
    else:
        inter = iw * ih
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    if union <= 0:
        return 0.0
    return inter / union


def _greedy_match_flags(preds: Sequence[Box], gts: Sequence[Box], thr: float):
    """True/False per prediction in emission order at one IoU threshold."""
    taken = [False] * len(gts)
    flags = []
    for p in preds:
        # Ties on IoU keep the lowest gt index for determinism.
        best, best_iou = -1, 0.0
        for j, g in enumerate(gts):
            if taken[j]:
                continue
            v = iou_box(p, g)
            if v >= thr and v > best_iou:
                best, best_iou = j, v
        if best >= 0:
            taken[best] = True
            flags.append(True)
        else:
            flags.append(False)
    return flags


def average_precision_recall(
    preds: Sequence[Sequence[Box]], gts: Sequence[Sequence[Box]]
) -> tuple[float, float]:
    """COCO-style AP/AR in percent, averaged over IoU 0.5:0.05:0.95.

    Predictions carry no scores, so the precision-recall sweep runs in
    image order then emission order.
    """
    if len(preds) != len(gts):
        raise ValueError("preds and gts must cover the same images")
    total_gt = sum(len(g) for g in gts)
    if total_gt == 0:
        raise ValueError("no ground-truth boxes to evaluate against")
    recall_grid = np.linspace(0.0, 1.0, 101)
    ap_sum = 0.0
    ar_sum = 0.0
    for thr in IOU_THRESHOLDS:
        stream: list[bool] = []
        for p_boxes, g_boxes in zip(preds, gts):
            stream.extend(_greedy_match_flags(p_boxes, g_boxes, thr))
        tp = 0
        precisions = []
        recalls = []
        for k, hit in enumerate(stream, start=1):
            tp += hit
            precisions.append(tp / k)
            recalls.append(tp / total_gt)
        # Monotone envelope from the right, then 101-point interpolation.
        for k in range(len(precisions) - 2, -1, -1):
            precisions[k] = max(precisions[k], precisions[k + 1])
        ap = 0.0
        idx = 0
        for r in recall_grid:
            while idx < len(recalls) and recalls[idx] < r:
                idx += 1
            if idx < len(precisions):
                ap += precisions[idx]
        ap_sum += ap / 101.0
        ar_sum += (tp / total_gt) if stream else 0.0
    return 100.0 * ap_sum / len(IOU_THRESHOLDS), 100.0 * ar_sum / len(IOU_THRESHOLDS)


def miou(
    pairs: Sequence[tuple[np.ndarray, np.ndarray]],
) -> tuple[float, float, float]:
    """(fg_iou, bg_iou, mean) in percent over dataset-aggregated counts."""
    if not pairs:
        raise ValueError("no mask pairs supplied")
    fg_inter = fg_union = bg_inter = bg_union = 0
    for pred, gt in pairs:
        pred = np.asarray(pred, dtype=bool)
        gt = np.asarray(gt, dtype=bool)
        if pred.shape != gt.shape:
            raise ValueError(f"mask shape mismatch: {pred.shape} vs {gt.shape}")
        fg_inter += int(np.count_nonzero(pred & gt))
        fg_union += int(np.count_nonzero(pred | gt))
        bg_inter += int(np.count_nonzero(~pred & ~gt))
        bg_union += int(np.count_nonzero(~pred | ~gt))
    # An empty union means both sides agree the class is absent everywhere.
    fg = 100.0 * fg_inter / fg_union if fg_union else 100.0
    bg = 100.0 * bg_inter / bg_union if bg_union else 100.0
    return fg, bg, (fg + bg) / 2.0


def mae_and_match_rate(records: Sequence[tuple[int, int]]) -> tuple[float, float]:
    if not records:
        raise ValueError("no count records supplied")
    abs_err = sum(abs(p - g) for p, g in records)
    exact = sum(1 for p, g in records if p == g)
    return abs_err / len(records), exact / len(records)


def _cell_counts(points: Sequence[Point], size: tuple[float, float], level: int):
    n = 1 << level
    width, height = size
    counts = np.zeros((n, n), dtype=np.int64)
    for x, y in points:
        cx = min(int(x * n / width), n - 1)
        cy = min(int(y * n / height), n - 1)
        counts[cy, cx] += 1
    return counts


def game(
    preds: Sequence[Sequence[Point]],
    gts: Sequence[Sequence[Point]],
    image_size,
) -> tuple[float, tuple[float, float, float, float]]:
    """(mean over levels, per-level values); image_size is one (w, h) pair
    shared by all images or a per-image sequence of pairs."""
    if len(preds) != len(gts):
        raise ValueError("preds and gts must cover the same images")
    if not preds:
        raise ValueError("no images supplied")
    if len(image_size) == 2 and not hasattr(image_size[0], "__len__"):
        sizes = [tuple(image_size)] * len(preds)
    else:
        sizes = [tuple(s) for s in image_size]
        if len(sizes) != len(preds):
            raise ValueError("one image size per image required")
    per_level = []
    for level in GAME_LEVELS:
        total = 0.0
        for p, g, size in zip(preds, gts, sizes):
            diff = np.abs(_cell_counts(p, size, level) - _cell_counts(g, size, level))
            total += float(diff.sum())
        per_level.append(total / len(preds))
    return sum(per_level) / len(per_level), tuple(per_level)


def alignment_rate(responses: Sequence[ParsedResponse]) -> float:
    if not responses:
        raise ValueError("no responses supplied")
    aligned = sum(1 for r in responses if len(r.detections) == r.fish_count)
    return aligned / len(responses)


def evaluate_dataset(
    gts: Sequence[GroundTruthRecord], preds: Sequence[PredictionRecord]
) -> MetricsReport:
    """Score predictions against ground truth matched by image_id.

    Ground-truth images without a prediction record are scored as empty
    predictions (nothing detected, count zero). AP/AR and mask IoU are None
    when no image carries the inputs they need.
    """
    if not gts:
        raise ValueError("no ground-truth records supplied")
    by_id: dict[str, PredictionRecord] = {}
    gt_ids = {g.image_id for g in gts}
    if len(gt_ids) != len(gts):
        raise ValueError("duplicate ground-truth image_id")
    for p in preds:
        if p.image_id not in gt_ids:
            raise ValueError(f"prediction for unknown image_id {p.image_id!r}")
        if p.image_id in by_id:
            raise ValueError(f"duplicate prediction for image_id {p.image_id!r}")
        by_id[p.image_id] = p

    empty = ParsedResponse(think="", detections=(), fish_count=0)
    count_records = []
    game_preds = []
    game_gts = []
    sizes = []
    box_preds = []
    box_gts = []
    mask_pairs = []
    responses = []
    for g in gts:
        p = by_id.get(g.image_id)
        parsed = p.parsed if p is not None else empty
        count_records.append((parsed.fish_count, len(g.points)))
        game_preds.append([d.point for d in parsed.detections])
        game_gts.append(list(g.points))
        sizes.append(g.image_size)
        if g.boxes is not None:
            box_preds.append([d.bbox for d in parsed.detections])
            box_gts.append(list(g.boxes))
        if g.mask is not None and p is not None and p.mask is not None:
            mask_pairs.append((p.mask, g.mask))
        if p is not None:
            responses.append(p.parsed)

    if box_gts and sum(len(b) for b in box_gts) > 0:
        ap, ar = average_precision_recall(box_preds, box_gts)
    else:
        ap = ar = None
    if mask_pairs:
        fg, bg, mean_iou = miou(mask_pairs)
    else:
        fg = bg = mean_iou = None
    mae, match_rate = mae_and_match_rate(count_records)
    game_mean, per_level = game(game_preds, game_gts, sizes)
    align = alignment_rate(responses) if responses else None
    return MetricsReport(
        ap_50_95=ap,
        ar_50_95=ar,
        fg_iou=fg,
        bg_iou=bg,
        miou=mean_iou,
        mae=mae,
        match_rate=match_rate,
        game=game_mean,
        game_per_level=per_level,
        alignment_rate=align,
        n_images=len(gts),
    )
