"""Information consolidation: from a transport-unit hypothesis to its
packaging structure.

Packages are assigned to the side they overlap most, masks are refined
against the unit mask, each side is fitted with a tetragon and rectified to a
rectangle, and package counts per axis come from the rectified average
package size. The two sides must agree on the vertical count; the total is
n_h_left * n_h_right * n_v.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .detections import (
    CategoryLabel,
    DetectionRecord,
    FilterConfig,
    ImageDetections,
    ParseError,
    TransportUnitHypothesis,
    assemble_unit,
    filter_transport_units,
    _parse_document,
    _parse_polygon,
    _require,
)
from .errors import (
    AmbiguousSides,
    EmptySide,
    EmptySideMask,
    InvalidCount,
    RecognitionError,
    VerticalCountMismatch,
)
from .geometry import (
    BinaryRaster,
    Polygon,
    RectSize,
    Tetragon,
    boundary_polygon,
    fit_tetragon,
    homography_from_corners,
    map_points,
    rectified_size,
    _fill_even_odd,
)


@dataclass(frozen=True)
class PipelineConfig:
    """Consolidation parameters. delta1/delta2 are the count-rounding slacks
    for the horizontal and vertical axes; raster_scale, when set, caps the
    working raster's larger dimension (None = native image resolution)."""

    delta1: float = 0.05
    delta2: float = 0.15
    filter: FilterConfig = field(default_factory=FilterConfig)
    raster_scale: int | None = None

    def __post_init__(self):
        for name in ("delta1", "delta2"):
            v = getattr(self, name)
            if not (0.0 <= v < 0.5):
                raise ValueError(f"{name} must be in [0, 0.5), got {v}")
        if self.raster_scale is not None and self.raster_scale < 32:
            raise ValueError(f"raster_scale must be >= 32, got {self.raster_scale}")


@dataclass(frozen=True)
class SideAnalysis:
    """Per-side rectification results: the fitted tetragon (image frame), the
    rectified rectangle extent, rectified package bbox dims, their means, and
    the axis counts."""

    side_role: str
    tetragon: Tetragon
    rect: RectSize
    package_boxes: tuple[tuple[float, float], ...]
    ps_h_avg: float
    ps_v_avg: float
    n_h: int
    n_v: int

    def __post_init__(self):
        if not self.package_boxes:
            raise ValueError("side analysis needs at least one package box")
        if self.n_h < 1 or self.n_v < 1:
            raise ValueError(f"axis counts must be >= 1, got ({self.n_h}, {self.n_v})")


@dataclass(frozen=True)
class PackagingStructure:
    """The answer for one transport unit."""

    n_h_left: int
    n_h_right: int
    n_v: int
    total: int
    package_category: CategoryLabel
    pallet_category: CategoryLabel
    unit_mask: Polygon

    def __post_init__(self):
        if min(self.n_h_left, self.n_h_right, self.n_v) < 1:
            raise ValueError("all counts must be >= 1")
        if self.total != self.n_h_left * self.n_h_right * self.n_v:
            raise ValueError(
                f"total {self.total} != {self.n_h_left}*{self.n_h_right}*{self.n_v}"
            )


@dataclass(frozen=True)
class UnitOutcome:
    """Recognition outcome for one filtered transport unit; either a structure
    with its two side analyses, or an error kind and message."""

    unit_id: str
    unit_mask: Polygon
    structure: PackagingStructure | None
    sides: tuple[SideAnalysis, SideAnalysis] | None
    error_kind: str | None
    error_message: str | None

    @property
    def ok(self) -> bool:
        return self.structure is not None


# ---------------------------------------------------------------------------
# raster helpers


def _working_scale(cfg: PipelineConfig, width: int, height: int) -> float:
    if cfg.raster_scale is None:
        return 1.0
    return min(1.0, cfg.raster_scale / max(width, height))


def _scaled_dims(width: int, height: int, scale: float) -> tuple[int, int]:
    return max(1, round(width * scale)), max(1, round(height * scale))


def _raster(poly: Polygon, dims: tuple[int, int], scale: float) -> np.ndarray:
    arr = poly.to_array()
    if scale != 1.0:
        arr = arr * scale
    return _fill_even_odd(arr, dims[0], dims[1])


# ---------------------------------------------------------------------------
# consolidation steps


def assign_packages(
    hyp: TransportUnitHypothesis, cfg: PipelineConfig
) -> tuple[dict[int, tuple[DetectionRecord, ...]], tuple[DetectionRecord, ...]]:
    """Assign each package to the side with the larger absolute mask
    intersection; packages intersecting neither side are dropped. Ties go to
    the side whose mask centroid is further left. Raises EmptySide when a side
    ends up with no packages."""
    scale = _working_scale(cfg, hyp.image_width, hyp.image_height)
    dims = _scaled_dims(hyp.image_width, hyp.image_height, scale)
    side_cells = [_raster(s.mask, dims, scale) for s in hyp.sides]
    left_first = hyp.sides[0].mask.centroid.x <= hyp.sides[1].mask.centroid.x
    assigned: dict[int, list[DetectionRecord]] = {0: [], 1: []}
    dropped: list[DetectionRecord] = []
    for pkg in hyp.packages:
        cells = _raster(pkg.mask, dims, scale)
        inter0 = int(np.count_nonzero(cells & side_cells[0]))
        inter1 = int(np.count_nonzero(cells & side_cells[1]))
        if inter0 == 0 and inter1 == 0:
            dropped.append(pkg)
        elif inter0 > inter1:
            assigned[0].append(pkg)
        elif inter1 > inter0:
            assigned[1].append(pkg)
        else:
            assigned[0 if left_first else 1].append(pkg)
    for i in (0, 1):
        if not assigned[i]:
            raise EmptySide(f"side {hyp.sides[i].id!r} has no packages assigned")
    return {0: tuple(assigned[0]), 1: tuple(assigned[1])}, tuple(dropped)


def refine_masks(
    hyp: TransportUnitHypothesis,
    assignment: dict[int, tuple[DetectionRecord, ...]],
    cfg: PipelineConfig,
) -> tuple[tuple[Polygon, Polygon], tuple[tuple[Polygon, ...], tuple[Polygon, ...]]]:
    """Cut side and package masks to the unit mask, then extend each side by
    the union of its assigned packages. Masks whose raster is unchanged keep
    their exact polygon; changed regions are re-vectorized by boundary
    tracing. Raises EmptySideMask if a side's raster empties."""
    scale = _working_scale(cfg, hyp.image_width, hyp.image_height)
    dims = _scaled_dims(hyp.image_width, hyp.image_height, scale)
    unit_cells = _raster(hyp.unit.mask, dims, scale)

    def revector(cells: np.ndarray) -> Polygon:
        poly = boundary_polygon(cells)
        if scale != 1.0:
            poly = Polygon.from_xy(poly.to_array() / scale)
        return poly

    refined_sides: list[Polygon] = []
    refined_pkgs: list[tuple[Polygon, ...]] = []
    for i, side in enumerate(hyp.sides):
        side_cells = _raster(side.mask, dims, scale)
        side_cut = side_cells & unit_cells
        n_side = int(np.count_nonzero(side_cells))
        n_cut = int(np.count_nonzero(side_cut))
        if n_cut == 0:
            raise EmptySideMask(f"side {side.id!r} is empty after cutting to the unit mask")
        side_poly = side.mask if n_cut == n_side else revector(side_cut)

        pkg_polys: list[Polygon] = []
        pkg_union = np.zeros_like(unit_cells)
        for pkg in assignment[i]:
            cells = _raster(pkg.mask, dims, scale)
            cut = cells & unit_cells
            n_pkg = int(np.count_nonzero(cells))
            n_pkg_cut = int(np.count_nonzero(cut))
            if n_pkg_cut == 0:
                continue  # package entirely outside the unit mask
            pkg_union |= cut
            pkg_polys.append(pkg.mask if n_pkg_cut == n_pkg else revector(cut))

        extended = side_cut | pkg_union
        if int(np.count_nonzero(extended)) != n_cut:
            side_poly = revector(extended)
        refined_sides.append(side_poly)
        refined_pkgs.append(tuple(pkg_polys))
    return (refined_sides[0], refined_sides[1]), (refined_pkgs[0], refined_pkgs[1])


def identify_left_right(sides: Sequence[Polygon]) -> tuple[int, int]:
    """Return (left_index, right_index) by mask centroid x; raises
    AmbiguousSides when the centroids are within 1 px horizontally."""
    if len(sides) != 2:
        raise ValueError(f"expected 2 sides, got {len(sides)}")
    cx0 = sides[0].centroid.x
    cx1 = sides[1].centroid.x
    if abs(cx0 - cx1) < 1.0:
        raise AmbiguousSides(
            f"side centroids at x={cx0:.2f} and x={cx1:.2f} cannot be ordered"
        )
    return (0, 1) if cx0 < cx1 else (1, 0)


def count_axis(extent: float, ps_avg: float, delta: float) -> int:
    """Package count along one axis: floor(extent / ps_avg + 0.5 + delta)."""
    if not (extent > 0 and ps_avg > 0):
        raise ValueError(f"extent and ps_avg must be positive, got {extent}, {ps_avg}")
    if not (0.0 <= delta < 0.5):
        raise ValueError(f"delta must be in [0, 0.5), got {delta}")
    return math.floor(extent / ps_avg + 0.5 + delta)


def analyze_side(
    side: Polygon,
    packages: Sequence[Polygon],
    cfg: PipelineConfig,
    *,
    frame: tuple[int, int],
    side_role: str,
) -> SideAnalysis:
    """Fit a tetragon to the side mask, rectify it to a rectangle, map the
    package polygons through the homography, and count packages per axis from
    the mean rectified package bbox dims."""
    if not packages:
        raise EmptySide(f"{side_role} side has no packages to analyze")
    width, height = frame
    scale = _working_scale(cfg, width, height)
    w_dims = _scaled_dims(width, height, scale)

    arr = side.to_array() * scale if scale != 1.0 else side.to_array()
    x0 = max(0, math.floor(arr[:, 0].min()) - 4)
    y0 = max(0, math.floor(arr[:, 1].min()) - 4)
    x1 = min(w_dims[0], math.ceil(arr[:, 0].max()) + 4)
    y1 = min(w_dims[1], math.ceil(arr[:, 1].max()) + 4)
    if x1 - x0 < 1 or y1 - y0 < 1:
        raise EmptySideMask(f"{side_role} side lies outside the working raster")
    cells = _fill_even_odd(arr, x1 - x0, y1 - y0, ox=x0, oy=y0)
    if not cells.any():
        raise EmptySideMask(f"{side_role} side rasterizes to an empty mask")
    roi = BinaryRaster(x1 - x0, y1 - y0, cells)

    fitted = fit_tetragon(roi)
    corners_w = fitted.to_array() + np.array([x0, y0], dtype=np.float64)
    tetragon_w = Tetragon.from_corners(corners_w)
    rect = rectified_size(tetragon_w)
    h = homography_from_corners(tetragon_w, rect)

    boxes: list[tuple[float, float]] = []
    for pkg in packages:
        pts = pkg.to_array() * scale if scale != 1.0 else pkg.to_array()
        mapped = map_points(h, pts)
        bw = float(mapped[:, 0].max() - mapped[:, 0].min())
        bh = float(mapped[:, 1].max() - mapped[:, 1].min())
        if bw <= 0 or bh <= 0:
            raise EmptySide(f"package rectifies to a degenerate box on the {side_role} side")
        boxes.append((bw, bh))
    ps_h = float(np.mean([b[0] for b in boxes]))
    ps_v = float(np.mean([b[1] for b in boxes]))
    n_h = count_axis(rect.s_h, ps_h, cfg.delta1)
    n_v = count_axis(rect.s_v, ps_v, cfg.delta2)
    if n_h < 1 or n_v < 1:
        raise InvalidCount(
            f"{side_role} side counts ({n_h}, {n_v}) below 1; package boxes dwarf the side"
        )

    tetragon_native = (
        tetragon_w if scale == 1.0 else Tetragon.from_corners(corners_w / scale)
    )
    return SideAnalysis(
        side_role=side_role,
        tetragon=tetragon_native,
        rect=rect,
        package_boxes=tuple(boxes),
        ps_h_avg=ps_h,
        ps_v_avg=ps_v,
        n_h=n_h,
        n_v=n_v,
    )


def _analyze_unit(
    hyp: TransportUnitHypothesis, cfg: PipelineConfig
) -> tuple[PackagingStructure, tuple[SideAnalysis, SideAnalysis]]:
    assignment, _dropped = assign_packages(hyp, cfg)
    sides, side_pkgs = refine_masks(hyp, assignment, cfg)
    left_i, right_i = identify_left_right(sides)
    frame = (hyp.image_width, hyp.image_height)
    left = analyze_side(sides[left_i], side_pkgs[left_i], cfg, frame=frame, side_role="left")
    right = analyze_side(sides[right_i], side_pkgs[right_i], cfg, frame=frame, side_role="right")
    if left.n_v != right.n_v:
        raise VerticalCountMismatch(left.n_v, right.n_v)
    structure = PackagingStructure(
        n_h_left=left.n_h,
        n_h_right=right.n_h,
        n_v=left.n_v,
        total=left.n_h * right.n_h * left.n_v,
        package_category=hyp.packages[0].category,
        pallet_category=hyp.pallet.category,
        unit_mask=hyp.unit.mask,
    )
    return structure, (left, right)


def recognize_unit(hyp: TransportUnitHypothesis, cfg: PipelineConfig) -> PackagingStructure:
    """Full consolidation for one hypothesis; raises a RecognitionError
    subclass when the unit cannot be recognized."""
    structure, _sides = _analyze_unit(hyp, cfg)
    return structure


def recognize_image(dets: ImageDetections, cfg: PipelineConfig) -> list[UnitOutcome]:
    """Recognize every filtered transport unit independently; one unit's
    failure never affects the others. Outcomes follow the filtered order."""
    outcomes: list[UnitOutcome] = []
    for unit in filter_transport_units(dets, cfg.filter):
        try:
            hyp = assemble_unit(unit, dets, cfg.filter)
            structure, sides = _analyze_unit(hyp, cfg)
            outcomes.append(UnitOutcome(unit.id, unit.mask, structure, sides, None, None))
        except RecognitionError as exc:
            outcomes.append(
                UnitOutcome(unit.id, unit.mask, None, None, exc.kind, str(exc))
            )
    return outcomes


# ---------------------------------------------------------------------------
# result documents


def results_to_document(image_id: str, outcomes: Sequence[UnitOutcome]) -> dict:
    units = []
    for oc in outcomes:
        entry: dict = {
            "status": "ok" if oc.ok else "error",
            "unit_id": oc.unit_id,
            "polygon": [[p.x, p.y] for p in oc.unit_mask.vertices],
        }
        if oc.ok:
            s = oc.structure
            entry.update(
                n_h_left=s.n_h_left,
                n_h_right=s.n_h_right,
                n_v=s.n_v,
                total=s.total,
                package_category=s.package_category.value,
                pallet_category=s.pallet_category.value,
            )
        else:
            entry["error_kind"] = oc.error_kind
            entry["error_message"] = oc.error_message
        units.append(entry)
    return {"image_id": image_id, "units": units}


@dataclass(frozen=True)
class ResultUnit:
    status: str
    unit_id: str
    polygon: Polygon
    n_h_left: int | None = None
    n_h_right: int | None = None
    n_v: int | None = None
    total: int | None = None
    package_category: CategoryLabel | None = None
    pallet_category: CategoryLabel | None = None
    error_kind: str | None = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"


@dataclass(frozen=True)
class ResultDocument:
    image_id: str
    units: tuple[ResultUnit, ...]


def parse_result_document(document: bytes | str) -> ResultDocument:
    data = _parse_document(document)
    image_id = _require(data, "image_id", str, "document")
    raw_units = _require(data, "units", list, "document")
    units = []
    for i, raw in enumerate(raw_units):
        where = f"units[{i}]"
        status = _require(raw, "status", str, where, i)
        if status not in ("ok", "error"):
            raise ParseError(f"{where}.status: expected 'ok' or 'error', got {status!r}", i)
        unit_id = _require(raw, "unit_id", str, where, i)
        polygon = _parse_polygon(raw.get("polygon"), f"{where}.polygon", i)
        if status == "ok":
            try:
                pkg = CategoryLabel(_require(raw, "package_category", str, where, i))
                pal = CategoryLabel(_require(raw, "pallet_category", str, where, i))
            except ValueError as exc:
                raise ParseError(f"{where}: unknown category: {exc}", i) from None
            units.append(
                ResultUnit(
                    status,
                    unit_id,
                    polygon,
                    n_h_left=_require(raw, "n_h_left", int, where, i),
                    n_h_right=_require(raw, "n_h_right", int, where, i),
                    n_v=_require(raw, "n_v", int, where, i),
                    total=_require(raw, "total", int, where, i),
                    package_category=pkg,
                    pallet_category=pal,
                )
            )
        else:
            units.append(
                ResultUnit(
                    status,
                    unit_id,
                    polygon,
                    error_kind=_require(raw, "error_kind", str, where, i),
                )
            )
    return ResultDocument(image_id, tuple(units))
