"""Reward components for detect-to-count responses.

Four signals are combined into one scalar: tag/entry format quality,
detection accuracy plus count-consistency against matched points, declared
count correctness, and a non-repetition penalty. The weighted total is what
a policy optimizer consumes.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

from .matching import match_points
from .parsing import FormatReport, ParsedResponse, parse_response

THRESHOLD_UNITS = ("fraction", "pixels")


@dataclass(frozen=True)
class RewardConfig:
    """Weights and constants for reward composition.

    match_threshold is interpreted per threshold_unit: a fraction of the
    image diagonal (default 0.05) or an absolute pixel radius.
    """

    w1: float = 1.0
    w2: float = 1.0
    w3: float = 1.0
    w4: float = 1.0
    lambda_detect: float = 4.0
    match_threshold: float = 0.05
    threshold_unit: str = "fraction"
    structure_points: float = 1.0
    content_points_max: float = 3.0

    def __post_init__(self):
        for name in ("w1", "w2", "w3", "w4"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"weight {name} must be finite")
        if not self.lambda_detect > 0:
            raise ValueError("lambda_detect must be positive")
        if self.content_points_max < 0:
            raise ValueError("content_points_max must be non-negative")
        if self.structure_points < 0:
            raise ValueError("structure_points must be non-negative")
        if not self.match_threshold > 0:
            raise ValueError("match_threshold must be positive")
        if self.threshold_unit not in THRESHOLD_UNITS:
            raise ValueError(f"threshold_unit must be one of {THRESHOLD_UNITS}")

    def resolve_threshold(self, image_size: tuple[float, float] | None) -> float:
        """Threshold in pixels; fraction mode needs the (width, height)."""
        if self.threshold_unit == "pixels":
            return self.match_threshold
        if image_size is None:
            raise ValueError("fractional threshold requires an image size")
        width, height = image_size
        return self.match_threshold * math.hypot(width, height)


@dataclass(frozen=True)
class RewardContext:
    """Counts feeding the detection and count rewards."""

    n_gt: int
    n_pred: int
    n_count: int
    n_valid: int

    def __post_init__(self):
        if min(self.n_gt, self.n_pred, self.n_count, self.n_valid) < 0:
            raise ValueError("counts must be non-negative")
        if self.n_valid > min(self.n_pred, self.n_gt):
            raise ValueError("n_valid cannot exceed either side of the match")


@dataclass(frozen=True)
class RewardBreakdown:
    format: float
    detect: float
    count: float
    non_repeat: float
    total: float

    def as_dict(self) -> dict[str, float]:
        return {
            "format": self.format,
            "detect": self.detect,
            "count": self.count,
            "non_repeat": self.non_repeat,
            "total": self.total,
        }


def format_reward(
    rep: FormatReport,
    cfg: RewardConfig | None = None,
    declared_count: int | None = None,
) -> float:
    """Structure points plus proportional credit for well-formed entries.

    An empty detection list earns full content points only when the declared
    count is zero; silence about a populated scene earns none.
    """
    if cfg is None:
        cfg = RewardConfig()
    if not rep.structure_ok:
        return 0.0
    if rep.entries_total > 0:
        # Multiply before dividing so exact thirds stay exact.
        content = (cfg.content_points_max * rep.entries_well_formed) / rep.entries_total
        return cfg.structure_points + content
    if declared_count == 0:
        return cfg.structure_points + cfg.content_points_max
    return cfg.structure_points


def detection_reward(
    resp: ParsedResponse,
    gt: list[tuple[float, float]],
    cfg: RewardConfig,
    image_size: tuple[float, float] | None = None,
) -> tuple[float, float, float]:
    """(accuracy, match, detect) per the proportional-match formulation."""
    accuracy, match, detect, _ = _detection_with_context(resp, gt, cfg, image_size)
    return accuracy, match, detect


def _detection_with_context(resp, gt, cfg, image_size):
    n_pred = len(resp.detections)
    n_gt = len(gt)
    points = [d.point for d in resp.detections]
    n_valid = 0
    if points and gt:
        threshold = cfg.resolve_threshold(image_size)
        n_valid = match_points(points, gt, threshold).n_valid
    if n_gt > 0:
        accuracy = (cfg.lambda_detect * n_valid) / n_gt
    else:
        # Nothing to find: full credit for abstaining, none for inventing.
        accuracy = cfg.lambda_detect if n_pred == 0 else 0.0
    match = 0.0 if n_pred == resp.fish_count else -1.0
    context = RewardContext(
        n_gt=n_gt, n_pred=n_pred, n_count=resp.fish_count, n_valid=n_valid
    )
    return accuracy, match, accuracy + match, context


def count_reward(resp: ParsedResponse, gt: list[tuple[float, float]]) -> float:
    return 1.0 if resp.fish_count == len(gt) else -1.0


def non_repetition_reward(resp: ParsedResponse) -> float:
    """0 for clean output, -1 for duplicated detections or looping think text."""
    boxes = [d.bbox for d in resp.detections]
    if len(set(boxes)) < len(boxes):
        return -1.0
    pts = [d.point for d in resp.detections]
    for i in range(len(pts)):
        for j in range(i + 1, len(pts)):
            if math.dist(pts[i], pts[j]) < 1.0:
                return -1.0
    words = resp.think.split()
    if len(words) >= 10:
        grams = Counter(tuple(words[k : k + 10]) for k in range(len(words) - 9))
        if grams.most_common(1)[0][1] >= 3:
            return -1.0
    return 0.0


def total_reward(
    resp_or_report: ParsedResponse | FormatReport,
    gt: list[tuple[float, float]],
    cfg: RewardConfig,
    report: FormatReport | None = None,
    image_size: tuple[float, float] | None = None,
) -> RewardBreakdown:
    """Compose the weighted total for a parsed response or a parse failure.

    A bare ParsedResponse implies a fully well-formed report; pass the real
    report when the source text contained malformed entries.
    """
    if isinstance(resp_or_report, ParsedResponse):
        resp = resp_or_report
        if report is None:
            n = len(resp.detections)
            report = FormatReport(
                structure_ok=True, entries_total=n, entries_well_formed=n
            )
        fmt = format_reward(report, cfg, declared_count=resp.fish_count)
        _, _, detect, _ = _detection_with_context(resp, gt, cfg, image_size)
        cnt = count_reward(resp, gt)
        non_rep = non_repetition_reward(resp)
    elif isinstance(resp_or_report, FormatReport):
        fmt = format_reward(resp_or_report, cfg)
        detect = -1.0
        cnt = -1.0
        non_rep = 0.0
    else:
        raise TypeError("expected a ParsedResponse or a FormatReport")
    total = cfg.w1 * fmt + cfg.w2 * detect + cfg.w3 * cnt + cfg.w4 * non_rep
    return RewardBreakdown(
        format=fmt, detect=detect, count=cnt, non_repeat=non_rep, total=total
    )


def score_text(
    text: str,
    gt: list[tuple[float, float]],
    cfg: RewardConfig,
    image_size: tuple[float, float] | None = None,
) -> tuple[RewardBreakdown, RewardContext | None, FormatReport]:
    """Parse then score raw text; context is None when parsing failed."""
    parsed, report = parse_response(text)
    if parsed is None:
        return total_reward(report, gt, cfg), None, report
    fmt = format_reward(report, cfg, declared_count=parsed.fish_count)
    _, _, detect, context = _detection_with_context(parsed, gt, cfg, image_size)
    cnt = count_reward(parsed, gt)
    non_rep = non_repetition_reward(parsed)
    total = cfg.w1 * fmt + cfg.w2 * detect + cfg.w3 * cnt + cfg.w4 * non_rep
    breakdown = RewardBreakdown(
        format=fmt, detect=detect, count=cnt, non_repeat=non_rep, total=total
    )
    return breakdown, context, report
