"""Detection and annotation ingestion plus the sanity filters.

Detections arrive as JSON documents (one per image) holding instance
segmentation outputs: category, confidence, bounding box, and mask polygon in
full-image pixel coordinates. Transport-unit candidates are filtered by
confidence, minimum size, and bounding-box overlap suppression; the members
of each unit (pallet, two sides, packages) are gathered by a containment rule.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Iterable

from .errors import MixedPackageCategories, PalletCountError, SideCountError
from .geometry import Polygon


class CategoryLabel(str, Enum):
    TRANSPORT_UNIT = "transport_unit"
    TU_SIDE = "tu_side"
    PKG_KLT = "pkg_klt"
    PKG_TRAY = "pkg_tray"
    PALLET_WOOD = "pallet_wood"
    PALLET_PLASTIC = "pallet_plastic"


PALLET_CATEGORIES = frozenset({CategoryLabel.PALLET_WOOD, CategoryLabel.PALLET_PLASTIC})
PACKAGE_CATEGORIES = frozenset({CategoryLabel.PKG_KLT, CategoryLabel.PKG_TRAY})

# Mask polygons may spill slightly past the declared box (annotation slack).
_BBOX_SLACK = 1.05


class ParseError(ValueError):
    """Malformed detection or annotation document; names the offending record."""

    def __init__(self, message: str, record_index: int | None = None):
        super().__init__(message)
        self.record_index = record_index


@dataclass(frozen=True)
class DetectionRecord:
    """One segmented instance in full-image coordinates."""

    id: str
    category: CategoryLabel
    confidence: float
    bbox: tuple[float, float, float, float]
    mask: Polygon

    def __post_init__(self):
        x0, y0, x1, y1 = self.bbox
        if not (x0 < x1 and y0 < y1):
            raise ValueError(f"record {self.id!r}: bbox {self.bbox} is not a proper box")
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError(
                f"record {self.id!r}: confidence {self.confidence} outside [0, 1]"
            )
        mx0, my0, mx1, my1 = self.mask.bounds
        hw = 0.5 * (x1 - x0) * _BBOX_SLACK
        hh = 0.5 * (y1 - y0) * _BBOX_SLACK
        cx = 0.5 * (x0 + x1)
        cy = 0.5 * (y0 + y1)
        if mx0 < cx - hw or mx1 > cx + hw or my0 < cy - hh or my1 > cy + hh:
            raise ValueError(
                f"record {self.id!r}: mask extent ({mx0}, {my0}, {mx1}, {my1}) "
                f"exceeds bbox {self.bbox} by more than {_BBOX_SLACK}x slack"
            )

    @property
    def bbox_area(self) -> float:
        x0, y0, x1, y1 = self.bbox
        return (x1 - x0) * (y1 - y0)


@dataclass(frozen=True)
class ImageDetections:
    image_id: str
    width: int
    height: int
    records: tuple[DetectionRecord, ...]

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image dims must be >= 1, got {self.width}x{self.height}")
        for i, rec in enumerate(self.records):
            x0, y0, x1, y1 = rec.bbox
            if x0 < 0 or y0 < 0 or x1 > self.width or y1 > self.height:
                raise ValueError(
                    f"record {i} ({rec.id!r}): bbox {rec.bbox} outside "
                    f"{self.width}x{self.height} image"
                )


@dataclass(frozen=True)
class FilterConfig:
    """Thresholds for the inter-unit and intra-unit sanity checks."""

    min_confidence_tu: float = 0.5
    min_confidence_intra: float = 0.5
    min_size_frac: float = 0.05
    suppression_iou: float = 0.8
    containment_frac: float = 0.6
    min_side_area_frac: float = 0.02

    def __post_init__(self):
        for name in ("min_size_frac", "suppression_iou", "containment_frac",
                     "min_side_area_frac"):
            v = getattr(self, name)
            if not (0.0 < v <= 1.0):
                raise ValueError(f"{name} must be in (0, 1], got {v}")


@dataclass(frozen=True)
class TransportUnitHypothesis:
    """A filtered transport unit with its pallet, two sides, and packages."""

    unit: DetectionRecord
    pallet: DetectionRecord
    sides: tuple[DetectionRecord, DetectionRecord]
    packages: tuple[DetectionRecord, ...]
    image_width: int
    image_height: int

    def __post_init__(self):
        if self.unit.category is not CategoryLabel.TRANSPORT_UNIT:
            raise ValueError("hypothesis unit record must be a transport_unit")
        if self.pallet.category not in PALLET_CATEGORIES:
            raise ValueError("hypothesis pallet record must be a pallet category")
        if len(self.sides) != 2 or any(s.category is not CategoryLabel.TU_SIDE for s in self.sides):
            raise ValueError("hypothesis needs exactly two tu_side records")
        cats = {p.category for p in self.packages}
        if not cats <= PACKAGE_CATEGORIES or len(cats) > 1:
            raise ValueError("hypothesis packages must share one package category")


# ---------------------------------------------------------------------------
# parsing / serialization


def _require(obj: Any, key: str, kind, where: str, index: int | None = None):
    if not isinstance(obj, dict) or key not in obj:
        raise ParseError(f"{where}: missing field {key!r}", index)
    value = obj[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if not isinstance(value, kind) or isinstance(value, bool):
        raise ParseError(
            f"{where}.{key}: expected {getattr(kind, '__name__', kind)}, got {value!r}", index
        )
    return value


def _parse_polygon(raw: Any, where: str, index: int | None) -> Polygon:
    if not isinstance(raw, list) or len(raw) < 3:
        raise ParseError(f"{where}: polygon needs >= 3 [x, y] pairs", index)
    coords = []
    for k, pt in enumerate(raw):
        if (not isinstance(pt, list)) or len(pt) != 2 or not all(
            isinstance(c, (int, float)) and not isinstance(c, bool) for c in pt
        ):
            raise ParseError(f"{where}: polygon point {k} is not an [x, y] pair", index)
        coords.append((float(pt[0]), float(pt[1])))
    try:
        return Polygon.from_xy(coords)
    except ValueError as exc:
        raise ParseError(f"{where}: invalid polygon: {exc}", index) from exc


def _parse_document(document: bytes | str) -> dict:
    if isinstance(document, bytes):
        document = document.decode("utf-8")
    try:
        data = json.loads(document)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ParseError("document root must be a JSON object")
    return data


def _parse_image_header(data: dict) -> tuple[str, int, int]:
    image = _require(data, "image", dict, "document")
    image_id = _require(image, "id", str, "image")
    width = _require(image, "width", int, "image")
    height = _require(image, "height", int, "image")
    return image_id, width, height


def parse_image_detections(document: bytes | str) -> ImageDetections:
    """Parse and validate a detection document; raises ParseError carrying the
    offending record index on any schema or invariant violation."""
    data = _parse_document(document)
    image_id, width, height = _parse_image_header(data)
    raw_records = _require(data, "detections", list, "document")
    records = []
    for i, raw in enumerate(raw_records):
        where = f"detections[{i}]"
        rec_id = _require(raw, "id", str, where, i)
        cat_raw = _require(raw, "category", str, where, i)
        try:
            category = CategoryLabel(cat_raw)
        except ValueError:
            raise ParseError(f"{where}.category: unknown category {cat_raw!r}", i) from None
        confidence = _require(raw, "confidence", float, where, i)
        bbox_raw = _require(raw, "bbox", list, where, i)
        if len(bbox_raw) != 4 or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in bbox_raw
        ):
            raise ParseError(f"{where}.bbox: expected [x_min, y_min, x_max, y_max]", i)
        mask = _parse_polygon(raw.get("polygon"), f"{where}.polygon", i)
        try:
            records.append(
                DetectionRecord(rec_id, category, float(confidence), tuple(map(float, bbox_raw)), mask)
            )
        except ValueError as exc:
            raise ParseError(f"{where}: {exc}", i) from exc
    try:
        return ImageDetections(image_id, width, height, tuple(records))
    except ValueError as exc:
        raise ParseError(str(exc)) from exc


def image_detections_to_document(dets: ImageDetections) -> dict:
    return {
        "image": {"id": dets.image_id, "width": dets.width, "height": dets.height},
        "detections": [
            {
                "id": r.id,
                "category": r.category.value,
                "confidence": r.confidence,
                "bbox": list(r.bbox),
                "polygon": [[p.x, p.y] for p in r.mask.vertices],
            }
            for r in dets.records
        ],
    }


@dataclass(frozen=True)
class UnitAnnotation:
    """Ground truth for one transport unit: region, categories, true counts."""

    polygon: Polygon
    pallet_category: CategoryLabel
    package_category: CategoryLabel
    counts: tuple[int, int, int]  # (h_left, h_right, v)

    def __post_init__(self):
        if any(c < 1 for c in self.counts):
            raise ValueError(f"counts must be >= 1, got {self.counts}")
        if self.pallet_category not in PALLET_CATEGORIES:
            raise ValueError(f"{self.pallet_category} is not a pallet category")
        if self.package_category not in PACKAGE_CATEGORIES:
            raise ValueError(f"{self.package_category} is not a package category")

    @property
    def total(self) -> int:
        return self.counts[0] * self.counts[1] * self.counts[2]


@dataclass(frozen=True)
class ImageAnnotations:
    image_id: str
    width: int
    height: int
    units: tuple[UnitAnnotation, ...]


def parse_annotations(document: bytes | str) -> ImageAnnotations:
    """Parse a ground-truth annotation document (same envelope as detections,
    with a `units` list carrying true counts)."""
    data = _parse_document(document)
    image_id, width, height = _parse_image_header(data)
    raw_units = _require(data, "units", list, "document")
    units = []
    for i, raw in enumerate(raw_units):
        where = f"units[{i}]"
        polygon = _parse_polygon(raw.get("polygon") if isinstance(raw, dict) else None,
                                 f"{where}.polygon", i)
        pallet_raw = _require(raw, "pallet_category", str, where, i)
        package_raw = _require(raw, "package_category", str, where, i)
        counts_raw = _require(raw, "counts", dict, where, i)
        try:
            pallet = CategoryLabel(pallet_raw)
            package = CategoryLabel(package_raw)
        except ValueError as exc:
            raise ParseError(f"{where}: unknown category: {exc}", i) from None
        h_left = _require(counts_raw, "h_left", int, f"{where}.counts", i)
        h_right = _require(counts_raw, "h_right", int, f"{where}.counts", i)
        v = _require(counts_raw, "v", int, f"{where}.counts", i)
        try:
            units.append(UnitAnnotation(polygon, pallet, package, (h_left, h_right, v)))
        except ValueError as exc:
            raise ParseError(f"{where}: {exc}", i) from exc
    if width < 1 or height < 1:
        raise ParseError(f"image dims must be >= 1, got {width}x{height}")
    return ImageAnnotations(image_id, width, height, tuple(units))


def annotations_to_document(ann: ImageAnnotations) -> dict:
    return {
        "image": {"id": ann.image_id, "width": ann.width, "height": ann.height},
        "units": [
            {
                "polygon": [[p.x, p.y] for p in u.polygon.vertices],
                "pallet_category": u.pallet_category.value,
                "package_category": u.package_category.value,
                "counts": {"h_left": u.counts[0], "h_right": u.counts[1], "v": u.counts[2]},
            }
            for u in ann.units
        ],
    }


# ---------------------------------------------------------------------------
# filtering


def _bbox_iou(a: tuple[float, float, float, float], b: tuple[float, float, float, float]) -> float:
    ix0 = max(a[0], b[0])
    iy0 = max(a[1], b[1])
    ix1 = min(a[2], b[2])
    iy1 = min(a[3], b[3])
    inter = max(0.0, ix1 - ix0) * max(0.0, iy1 - iy0)
    if inter == 0.0:
        return 0.0
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    return inter / (area_a + area_b - inter)


def _containment(member: tuple[float, float, float, float],
                 unit: tuple[float, float, float, float]) -> float:
    """Fraction of the member bbox area lying inside the unit bbox."""
    ix0 = max(member[0], unit[0])
    iy0 = max(member[1], unit[1])
    ix1 = min(member[2], unit[2])
    iy1 = min(member[3], unit[3])
    inter = max(0.0, ix1 - ix0) * max(0.0, iy1 - iy0)
    area = (member[2] - member[0]) * (member[3] - member[1])
    return inter / area if area > 0 else 0.0


def filter_transport_units(dets: ImageDetections, cfg: FilterConfig) -> list[DetectionRecord]:
    """Confidence + minimum-size thresholding of transport_unit records, then
    greedy confidence-descending suppression of high-overlap duplicates.
    Output sorted by confidence descending, ties broken by id."""
    min_w = cfg.min_size_frac * dets.width
    min_h = cfg.min_size_frac * dets.height
    candidates = [
        r for r in dets.records
        if r.category is CategoryLabel.TRANSPORT_UNIT
        and r.confidence >= cfg.min_confidence_tu
        and (r.bbox[2] - r.bbox[0]) >= min_w
        and (r.bbox[3] - r.bbox[1]) >= min_h
    ]
    candidates.sort(key=lambda r: (-r.confidence, r.id))
    kept: list[DetectionRecord] = []
    for rec in candidates:
        if all(_bbox_iou(rec.bbox, k.bbox) <= cfg.suppression_iou for k in kept):
            kept.append(rec)
    return kept


def assemble_unit(unit: DetectionRecord, dets: ImageDetections,
                  cfg: FilterConfig) -> TransportUnitHypothesis:
    """Gather the unit's pallet, sides, and packages: members must clear the
    intra-unit confidence threshold and have >= containment_frac of their bbox
    inside the unit bbox; sides additionally need a minimum region size.

    Raises PalletCountError / SideCountError when not exactly one pallet and
    two sides survive, and MixedPackageCategories on inconsistent packages;
    each aborts recognition of this unit only.
    """
    pallets: list[DetectionRecord] = []
    sides: list[DetectionRecord] = []
    packages: list[DetectionRecord] = []
    min_side_area = cfg.min_side_area_frac * unit.bbox_area
    for rec in dets.records:
        if rec.category is CategoryLabel.TRANSPORT_UNIT:
            continue
        if rec.confidence < cfg.min_confidence_intra:
            continue
        if _containment(rec.bbox, unit.bbox) < cfg.containment_frac:
            continue
        if rec.category is CategoryLabel.TU_SIDE:
            if rec.mask.area >= min_side_area:
                sides.append(rec)
        elif rec.category in PALLET_CATEGORIES:
            pallets.append(rec)
        else:
            packages.append(rec)
    if len(pallets) != 1:
        raise PalletCountError(len(pallets))
    if len(sides) != 2:
        raise SideCountError(len(sides))
    if len({p.category for p in packages}) > 1:
        raise MixedPackageCategories(
            f"unit {unit.id!r} has packages of mixed categories"
        )
    return TransportUnitHypothesis(
        unit=unit,
        pallet=pallets[0],
        sides=(sides[0], sides[1]),
        packages=tuple(packages),
        image_width=dets.width,
        image_height=dets.height,
    )
