"""File ingestion and report emission.

Ground truth is one JSON document with an "images" array; predictions are
JSON lines. Binary masks travel either as 8-bit grayscale images (nonzero =
foreground) or as run-length JSON files holding alternating background and
foreground run lengths over row-major pixel order, starting with background.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .metrics import GroundTruthRecord, MetricsReport, PredictionRecord
from .parsing import parse_response


def decode_rle(counts: Sequence[int], size: tuple[int, int]) -> np.ndarray:
    """Runs to a boolean (height, width) grid; size is (height, width)."""
    height, width = size
    if height <= 0 or width <= 0:
        raise ValueError("mask size must be positive")
    if any(not isinstance(c, int) or c < 0 for c in counts):
        raise ValueError("run lengths must be non-negative integers")
    if sum(counts) != height * width:
        raise ValueError("run lengths must cover the mask exactly")
    flat = np.zeros(height * width, dtype=bool)
    pos = 0
    value = False
    for run in counts:
        if value:
            flat[pos : pos + run] = True
        pos += run
        value = not value
    return flat.reshape(height, width)


def encode_rle(mask: np.ndarray) -> dict:
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2:
        raise ValueError("mask must be 2-D")
    flat = mask.ravel()
    counts = []
    current = False
    run = 0
    for bit in flat:
        if bit == current:
            run += 1
        else:
            counts.append(run)
            current = bool(bit)
            run = 1
    counts.append(run)
    return {"size": [int(mask.shape[0]), int(mask.shape[1])], "counts": counts}


def load_mask(path: Path) -> np.ndarray:
    """Read a mask file: .json means run-length, anything else an image."""
    if path.suffix.lower() == ".json":
        data = json.loads(path.read_text(encoding="utf-8"))
        return decode_rle(data["counts"], tuple(data["size"]))
    with Image.open(path) as img:
        return np.asarray(img.convert("L")) > 0


def write_mask_rle(mask: np.ndarray, path: Path) -> None:
    path.write_text(json.dumps(encode_rle(mask)), encoding="utf-8")


def _record_from_entry(entry: dict, base: Path) -> GroundTruthRecord:
    required = {"image_id", "width", "height", "points"}
    missing = required - set(entry)
    if missing:
        raise ValueError(f"ground-truth entry missing keys: {sorted(missing)}")
    mask = None
    if entry.get("mask_file"):
        mask = load_mask(base / entry["mask_file"])
    boxes = entry.get("boxes")
    return GroundTruthRecord(
        image_id=str(entry["image_id"]),
        image_size=(float(entry["width"]), float(entry["height"])),
        points=tuple((float(x), float(y)) for x, y in entry["points"]),
        boxes=None
        if boxes is None
        else tuple(
            (float(a), float(b), float(c), float(d)) for a, b, c, d in boxes
        ),
        mask=mask,
    )


def load_ground_truth(path: str | Path) -> list[GroundTruthRecord]:
    path = Path(path)
    data = json.loads(path.read_text(encoding="utf-8"))
    if not isinstance(data, dict) or not isinstance(data.get("images"), list):
        raise ValueError("ground-truth file must contain an 'images' array")
    return [_record_from_entry(e, path.parent) for e in data["images"]]


def write_ground_truth(
    records: Sequence[GroundTruthRecord], path: str | Path
) -> None:
    """Write records so load_ground_truth reproduces them; masks become
    run-length sidecar files next to the document."""
    path = Path(path)
    images = []
    for r in records:
        entry: dict = {
            "image_id": r.image_id,
            "width": r.image_size[0],
            "height": r.image_size[1],
            "points": [[x, y] for x, y in r.points],
        }
        if r.boxes is not None:
            entry["boxes"] = [list(b) for b in r.boxes]
        if r.mask is not None:
            mask_name = f"{r.image_id}_mask.json"
            write_mask_rle(r.mask, path.parent / mask_name)
            entry["mask_file"] = mask_name
        images.append(entry)
    path.write_text(
        json.dumps({"images": images}, indent=2, sort_keys=True), encoding="utf-8"
    )


def ground_truth_equal(a: GroundTruthRecord, b: GroundTruthRecord) -> bool:
    if (a.image_id, a.image_size, a.points, a.boxes) != (
        b.image_id,
        b.image_size,
        b.points,
        b.boxes,
    ):
        return False
    if (a.mask is None) != (b.mask is None):
        return False
    return a.mask is None or bool(np.array_equal(a.mask, b.mask))


def load_jsonl(path: str | Path) -> list[dict]:
    records = []
    for lineno, line in enumerate(
        Path(path).read_text(encoding="utf-8").splitlines(), start=1
    ):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except ValueError as exc:
            raise ValueError(f"line {lineno}: invalid JSON ({exc})") from exc
        if not isinstance(obj, dict):
            raise ValueError(f"line {lineno}: expected a JSON object")
        records.append(obj)
    return records


def load_prediction_records(
    path: str | Path, known_ids: set[str] | None = None
) -> list[PredictionRecord]:
    """Parse an eval predictions file: one {image_id, response_text,
    mask_file?} object per line; responses must parse cleanly."""
    path = Path(path)
    records = []
    for i, obj in enumerate(load_jsonl(path), start=1):
        if "image_id" not in obj or "response_text" not in obj:
            raise ValueError(f"record {i}: needs image_id and response_text")
        parsed, report = parse_response(obj["response_text"])
        if parsed is None:
            raise ValueError(
                f"record {i} (image {obj['image_id']!r}): response text does "
                f"not parse (structure_ok={report.structure_ok})"
            )
        if known_ids is not None and obj["image_id"] not in known_ids:
            raise ValueError(f"record {i}: unknown image_id {obj['image_id']!r}")
        mask = None
        if obj.get("mask_file"):
            mask = load_mask(path.parent / obj["mask_file"])
        records.append(
            PredictionRecord(image_id=str(obj["image_id"]), parsed=parsed, mask=mask)
        )
    return records


def write_json(obj, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def write_csv(rows: Sequence[dict], path: str | Path) -> None:
    if not rows:
        raise ValueError("no rows to write")
    fieldnames = list(rows[0].keys())
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(rows)


def write_metrics_report(report: MetricsReport, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    payload = report.as_dict()
    write_json(payload, out / "metrics.json")
    write_csv([payload], out / "metrics.csv")
