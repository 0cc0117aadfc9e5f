"""Parsing and serialization of the three-tag detect-to-count response format.

A response carries a free-text reasoning block, a JSON array of detection
entries, and a declared fish count:

    <think>...</think>
    <detection>[{"bbox_2d": [x1, y1, x2, y2], "point_2d": [x, y], "label": "fish"}]</detection>
    <fish_count>N</fish_count>

Parsing never raises on malformed input; every defect is reported through
a FormatReport and, when the structure is unusable, by the absence of a
ParsedResponse.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field

TAGS = ("think", "detection", "fish_count")
ENTRY_KEYS = frozenset({"bbox_2d", "point_2d", "label"})
FISH_LABEL = "fish"

_COUNT_RE = re.compile(r"^[+-]?\d+$")


@dataclass(frozen=True)
class Detection:
    """One detected instance: a bounding box, a keypoint, and a label.

    Boxes are corner-normalized on construction (x1 <= x2, y1 <= y2).
    """

    bbox: tuple[float, float, float, float]
    point: tuple[float, float]
    label: str = FISH_LABEL

    def __post_init__(self) -> None:
        x1, y1, x2, y2 = (float(v) for v in self.bbox)
        object.__setattr__(
            self, "bbox", (min(x1, x2), min(y1, y2), max(x1, x2), max(y1, y2))
        )
        object.__setattr__(self, "point", (float(self.point[0]), float(self.point[1])))

    def to_entry(self) -> dict:
        return {
            "bbox_2d": list(self.bbox),
            "point_2d": list(self.point),
            "label": self.label,
        }


@dataclass(frozen=True)
class ParsedResponse:
    """A structurally valid response: think text, detections, declared count."""

    think: str
    detections: tuple[Detection, ...]
    fish_count: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "detections", tuple(self.detections))
        if self.fish_count < 0:
            raise ValueError("fish_count must be non-negative")


@dataclass(frozen=True)
class FormatReport:
    """Structural diagnosis of a raw response.

    entries_well_formed counts entries matching the detection schema exactly;
    it always equals the number of detections retained by the parser.
    """

    structure_ok: bool
    entries_total: int = 0
    entries_well_formed: int = 0


def _find_block(text: str, tag: str) -> str | None:
    """Body between <tag> and </tag> when each occurs exactly once, else None."""
    opening, closing = f"<{tag}>", f"</{tag}>"
    if text.count(opening) != 1 or text.count(closing) != 1:
        return None
    start = text.index(opening) + len(opening)
    end = text.index(closing)
    if end < start:
        return None
    return text[start:end]


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _entry_to_detection(entry) -> Detection | None:
    """Validate one detection entry; None when it breaks the schema."""
    if not isinstance(entry, dict) or set(entry.keys()) != ENTRY_KEYS:
        return None
    bbox, point, label = entry["bbox_2d"], entry["point_2d"], entry["label"]
    if not (isinstance(bbox, list) and len(bbox) == 4 and all(_is_number(v) for v in bbox)):
        return None
    if not (isinstance(point, list) and len(point) == 2 and all(_is_number(v) for v in point)):
        return None
    if label != FISH_LABEL:
        return None
    return Detection(bbox=tuple(bbox), point=tuple(point), label=label)


def parse_response(text: str) -> tuple[ParsedResponse | None, FormatReport]:
    """Parse raw model output into a ParsedResponse plus a FormatReport.

    The report is always produced. A ParsedResponse is returned only when all
    three tags appear exactly once and the fish_count body is a non-negative
    base-10 integer. Malformed detection entries are counted in entries_total
    but dropped from the detections list.
    """
    structure_ok = True
    bodies: dict[str, str | None] = {}
    for tag in TAGS:
        body = _find_block(text, tag)
        bodies[tag] = body
        if body is None:
            structure_ok = False

    entries_total = 0
    detections: list[Detection] = []
    det_body = bodies["detection"]
    if det_body is not None and det_body.strip():
        try:
            entries = json.loads(det_body)
        except (ValueError, RecursionError):
            entries = None
        if isinstance(entries, list):
            entries_total = len(entries)
            for entry in entries:
                det = _entry_to_detection(entry)
                if det is not None:
                    detections.append(det)

    report = FormatReport(
        structure_ok=structure_ok,
        entries_total=entries_total,
        entries_well_formed=len(detections),
    )

    if not structure_ok:
        return None, report
    count_body = (bodies["fish_count"] or "").strip()
    if not _COUNT_RE.match(count_body) or int(count_body) < 0:
        return None, report
    parsed = ParsedResponse(
        think=bodies["think"] or "",
        detections=tuple(detections),
        fish_count=int(count_body),
    )
    return parsed, report


def serialize_response(response: ParsedResponse) -> str:
    """Render a ParsedResponse as tagged text such that parsing it back
    reproduces the response exactly.

    Raises ValueError when the response cannot survive the round trip: a think
    body embedding any tag literal, or a detection with a non-fish label
    (the parser would drop it).
    """
    for det in response.detections:
        if det.label != FISH_LABEL:
            raise ValueError(f"cannot serialize detection with label {det.label!r}")
    entries_json = json.dumps([d.to_entry() for d in response.detections])
    pieces = (response.think, entries_json)
    for tag in TAGS:
        for literal in (f"<{tag}>", f"</{tag}>"):
            if any(literal in piece for piece in pieces):
                raise ValueError(f"body contains reserved tag literal {literal!r}")
    return (
        f"<think>{response.think}</think>\n"
        f"<detection>{entries_json}</detection>\n"
        f"<fish_count>{response.fish_count}</fish_count>"
    )
