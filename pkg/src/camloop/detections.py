"""Detector batch-output ingestion: parse, filter, crop-rect math, crop extraction.

Input is the detector's batch JSON ("images" array + "detection_categories"
code map). Output is a set of PNG crops plus a CSV manifest keyed by stable
crop ids, ready for the embedding stage.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from PIL import Image

from .errors import DataError

CATEGORY_NAMES = ("animal", "person", "vehicle")

# Tolerance for detector rounding on normalized boxes.
BBOX_EPS = 1e-6

DEFAULT_MIN_CONFIDENCE = 0.2
DEFAULT_ALLOWED_CATEGORIES = frozenset({"animal"})
DEFAULT_PADDING_FRAC = 0.05

MANIFEST_HEADER = "crop_id,source_image,left,top,width,height,confidence,crop_path"


class DetectionParseError(DataError):
    """Malformed detector batch document."""


@dataclass(frozen=True)
class DetectionRecord:
    """One detector hit on one image, in normalized coordinates."""

    image_path: str
    category: str  # one of CATEGORY_NAMES
    confidence: float
    bbox_norm: tuple[float, float, float, float]  # (x, y, w, h), top-left origin


@dataclass(frozen=True)
class PixelRect:
    """Integer crop rectangle, fully inside its source image."""

    left: int
    top: int
    width: int
    height: int


@dataclass(frozen=True)
class CropRecord:
    crop_id: str
    source_image: str
    rect: PixelRect
    detection_confidence: float
    crop_path: str


@dataclass
class ParseSummary:
    """Bookkeeping for one parsed detector file."""

    total_images: int = 0
    empty_images: int = 0
    total_detections: int = 0
    skipped_unknown_category: int = 0
    rejected: list[tuple[str, str]] = field(default_factory=list)  # (image, reason)
    warnings: list[str] = field(default_factory=list)

    def to_json(self) -> str:
        payload = {
            "total_images": self.total_images,
            "empty_images": self.empty_images,
            "total_detections": self.total_detections,
            "skipped_unknown_category": self.skipped_unknown_category,
            "rejected": [list(r) for r in self.rejected],
            "warnings": list(self.warnings),
        }
        return json.dumps(payload, sort_keys=True)


def parse_detection_file(raw: bytes) -> tuple[list[DetectionRecord], dict[str, str], ParseSummary]:
    """Parse a detector batch document.

    Returns (records, category code map, summary). Detections with an unknown
    category code are skipped with a warning; boxes outside [0,1] beyond the
    rounding tolerance are rejected and listed in the summary. Both are
    non-fatal; a structurally malformed document raises DetectionParseError.
    """
    try:
        doc = json.loads(raw.decode("utf-8"))
    except UnicodeDecodeError as e:
        raise DetectionParseError(f"detector file is not valid UTF-8: {e}") from e
    except json.JSONDecodeError as e:
        raise DetectionParseError(
            f"detector file is not valid JSON: {e.msg} (line {e.lineno}, column {e.colno}, byte {e.pos})"
        ) from e

    if not isinstance(doc, dict) or not isinstance(doc.get("images"), list):
        raise DetectionParseError('detector file must be an object with an "images" array')

    categories = doc.get("detection_categories", {"1": "animal", "2": "person", "3": "vehicle"})
    if not isinstance(categories, dict):
        raise DetectionParseError('"detection_categories" must be a code->name map')

    summary = ParseSummary()
    records: list[DetectionRecord] = []
    for i, entry in enumerate(doc["images"]):
        if not isinstance(entry, dict) or not isinstance(entry.get("file"), str):
            raise DetectionParseError(f'images[{i}] must be an object with a "file" string')
        image_path = entry["file"]
        summary.total_images += 1
        detections = entry.get("detections") or []
        if not isinstance(detections, list):
            raise DetectionParseError(f"images[{i}].detections must be a list")
        if not detections:
            summary.empty_images += 1
            continue
        for j, det in enumerate(detections):
            summary.total_detections += 1
            where = f"images[{i}].detections[{j}] ({image_path})"
            rec = _parse_detection(det, image_path, categories, where, summary)
            if rec is not None:
                records.append(rec)
    return records, dict(categories), summary


def _parse_detection(det, image_path, categories, where, summary):
    if not isinstance(det, dict):
        raise DetectionParseError(f"{where} is not an object")
    code = det.get("category")
    name = categories.get(code)
    if name not in CATEGORY_NAMES:
        summary.skipped_unknown_category += 1
        summary.warnings.append(f"{where}: unknown category code {code!r}, skipped")
        return None
    try:
        conf = float(det["conf"])
        x, y, w, h = (float(v) for v in det["bbox"])
    except (KeyError, TypeError, ValueError) as e:
        raise DetectionParseError(f"{where}: bad conf/bbox: {e}") from e
    if not 0.0 <= conf <= 1.0:
        summary.rejected.append((image_path, f"confidence {conf} outside [0,1]"))
        return None
    if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0 and w > 0.0 and h > 0.0
            and x + w <= 1.0 + BBOX_EPS and y + h <= 1.0 + BBOX_EPS):
        summary.rejected.append((image_path, f"bbox ({x}, {y}, {w}, {h}) outside [0,1] beyond tolerance"))
        return None
    return DetectionRecord(image_path=image_path, category=name, confidence=conf, bbox_norm=(x, y, w, h))


def filter_detections(records: list[DetectionRecord], min_confidence: float = DEFAULT_MIN_CONFIDENCE,
                      allowed_categories=DEFAULT_ALLOWED_CATEGORIES) -> list[DetectionRecord]:
    """Keep records with confidence >= threshold and an allowed category, order preserved."""
    if not 0.0 <= min_confidence <= 1.0:
        raise ValueError(f"min_confidence must be in [0,1], got {min_confidence}")
    allowed = frozenset(allowed_categories)
    return [r for r in records if r.confidence >= min_confidence and r.category in allowed]


def _round_half_away(v: float) -> int:
    if v >= 0.0:
        return int(math.floor(v + 0.5))
    return int(math.ceil(v - 0.5))


def _padded_span(lo_norm: float, extent_norm: float, scale: int, padding_frac: float) -> tuple[float, float]:
    # Pad each side by padding_frac x (box side length in pixels); a sub-pixel
    # span is widened to exactly 1 px around its center so rounding cannot
    # collapse it (and so nesting across padding values is preserved).
    pad = padding_frac * extent_norm * scale
    lo = lo_norm * scale - pad
    hi = (lo_norm + extent_norm) * scale + pad
    if hi - lo < 1.0:
        c = 0.5 * (lo + hi)
        lo, hi = c - 0.5, c + 0.5
    return lo, hi


def _rounded_span(lo_norm: float, extent_norm: float, scale: int, padding_frac: float) -> tuple[int, int]:
    lo, hi = _padded_span(lo_norm, extent_norm, scale, padding_frac)
    return _round_half_away(lo), _round_half_away(hi)


def _clamp_span(lo: int, hi: int, limit: int) -> tuple[int, int]:
    lo2 = min(max(lo, 0), limit)
    hi2 = min(max(hi, 0), limit)
    if hi2 <= lo2:
        # Span lies entirely outside the image: pin a 1 px sliver at the border.
        if lo2 >= limit:
            return limit - 1, limit
        if hi2 <= 0:
            return 0, 1
        hi2 = lo2 + 1  # unreachable for spans >= 1 px, kept as a guard
    return lo2, hi2


def compute_crop_rect(bbox_norm: tuple[float, float, float, float], image_dims: tuple[int, int],
                      padding_frac: float = DEFAULT_PADDING_FRAC) -> PixelRect:
    """Scale a normalized box to pixels, pad, round, and clamp to image bounds.

    Rounding is half-away-from-zero on each edge coordinate. Clamping absorbs
    any overflow, and degenerate boxes come out at least 1 px wide/tall.
    """
    if padding_frac < 0:
        raise ValueError("padding_frac must be >= 0")
    x, y, w, h = bbox_norm
    img_w, img_h = image_dims
    l, r = _clamp_span(*_rounded_span(x, w, img_w, padding_frac), img_w)
    t, b = _clamp_span(*_rounded_span(y, h, img_h, padding_frac), img_h)
    return PixelRect(left=l, top=t, width=r - l, height=b - t)


def crop_id_for(source_image: str, rect: PixelRect) -> str:
    """Stable 128-bit id for a (source image, rect) pair, as lowercase hex."""
    key = source_image.encode("utf-8") + b"\x00" + f"{rect.left},{rect.top},{rect.width},{rect.height}".encode()
    return hashlib.blake2b(key, digest_size=16).hexdigest()


@dataclass
class ExtractionReport:
    crops: list[CropRecord] = field(default_factory=list)
    errors: list[tuple[str, str]] = field(default_factory=list)  # (image, reason)


def extract_crops(image_root: Path, jobs: list[tuple[str, list[tuple[PixelRect, float]]]],
                  output_dir: Path, workers: int = 1) -> ExtractionReport:
    """Extract crops for each (source image, [(rect, confidence), ...]) job.

    Crops are written as PNG under output_dir/crops. Undecodable or missing
    images are recorded as errors and the rest of the batch proceeds. The
    report lists crops in input order regardless of worker count.
    """
    image_root = Path(image_root)
    crops_dir = Path(output_dir) / "crops"
    crops_dir.mkdir(parents=True, exist_ok=True)

    def one_image(job):
        source, rects = job
        out: list[CropRecord] = []
        try:
            with Image.open(image_root / source) as img:
                img.load()
                for rect, conf in rects:
                    cid = crop_id_for(source, rect)
                    box = (rect.left, rect.top, rect.left + rect.width, rect.top + rect.height)
                    crop_path = f"crops/{cid}.png"
                    img.crop(box).save(crops_dir / f"{cid}.png", format="PNG")
                    out.append(CropRecord(crop_id=cid, source_image=source, rect=rect,
                                          detection_confidence=conf, crop_path=crop_path))
        except OSError as e:
            return source, None, f"{type(e).__name__}: {e}"
        return source, out, None

    report = ExtractionReport()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one_image, jobs))
    else:
        results = [one_image(j) for j in jobs]
    for source, out, err in results:  # input order, independent of scheduling
        if err is not None:
            report.errors.append((source, err))
        else:
            report.crops.extend(out)
    return report


def detections_to_jobs(records: list[DetectionRecord], image_sizes: dict[str, tuple[int, int]],
                       padding_frac: float = DEFAULT_PADDING_FRAC) -> list[tuple[str, list[tuple[PixelRect, float]]]]:
    """Group filtered detections by source image, preserving input order."""
    jobs: dict[str, list[tuple[PixelRect, float]]] = {}
    for rec in records:
        dims = image_sizes[rec.image_path]
        rect = compute_crop_rect(rec.bbox_norm, dims, padding_frac)
        jobs.setdefault(rec.image_path, []).append((rect, rec.confidence))
    return list(jobs.items())


def format_confidence(conf: float) -> str:
    # Shortest round-trip repr; ints like 1.0 stay "1.0".
    return repr(conf)


def write_crop_manifest(crops: list[CropRecord], path: Path) -> None:
    """Write the crop manifest CSV (UTF-8, LF line endings)."""
    buf = io.StringIO()
    buf.write(MANIFEST_HEADER + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    for c in crops:
        writer.writerow([c.crop_id, c.source_image, c.rect.left, c.rect.top,
                         c.rect.width, c.rect.height, format_confidence(c.detection_confidence), c.crop_path])
    Path(path).write_bytes(buf.getvalue().encode("utf-8"))


def read_crop_manifest(path: Path) -> list[CropRecord]:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines or lines[0] != MANIFEST_HEADER:
        raise DataError(f"{path}: not a crop manifest (bad header)")
    crops = []
    for row in csv.reader(lines[1:]):
        if not row:
            continue
        if len(row) != 8:
            raise DataError(f"{path}: manifest row has {len(row)} fields, expected 8: {row!r}")
        cid, source, left, top, width, height, conf, crop_path = row
        rect = PixelRect(int(left), int(top), int(width), int(height))
        crops.append(CropRecord(crop_id=cid, source_image=source, rect=rect,
                                detection_confidence=float(conf), crop_path=crop_path))
    return crops
