"""Synthetic transport-unit scenes with exact ground truth.

Units are regular grids of identical boxes on a standard pallet, placed on the
ground plane and imaged by an ideal pinhole camera whose up-vector is world
vertical (units appear upright and two sides are visible). The generator
emits perfect detection documents plus annotations carrying the true counts;
a noise model can jitter, drop, and pollute the detections for stress tests.

A pallet lid hides the top `lid_occlusion_frac` of the top package row; both
the top-row package faces and the side faces are cropped accordingly, since a
cover lies over the whole face of the stack.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .detections import (
    CategoryLabel,
    DetectionRecord,
    ImageAnnotations,
    ImageDetections,
    PACKAGE_CATEGORIES,
    PALLET_CATEGORIES,
    ParseError,
    UnitAnnotation,
    _parse_document,
    _require,
)
from .geometry import Polygon, convex_hull

_EPAL_DIMS = (1.2, 0.8, 0.144)
_FRUSTUM_MARGIN = 1.0  # px clearance to the image border
_MIN_DEPTH = 0.05  # m in front of the camera
_MIN_VIEW_ANGLE = 5.0  # deg margin from face-on / edge-on viewing


class GenerationError(Exception):
    """A scene violates the imaging restrictions; nothing is emitted."""


@dataclass(frozen=True)
class UnitSpec:
    """One transport unit: grid counts, package and pallet geometry, pose.

    package_dims is (w, h, d): w is the footprint size along the pallet's
    long axis, d along the short axis, h the vertical size. n_h_left counts
    packages along the long axis, n_h_right along the short axis; which of the
    two ends up image-left depends on the viewpoint, and the emitted
    annotation records the view-dependent truth.
    """

    n_h_left: int
    n_h_right: int
    n_v: int
    package_dims: tuple[float, float, float]
    package_category: CategoryLabel
    pallet_category: CategoryLabel
    pallet_dims: tuple[float, float, float] = _EPAL_DIMS
    lid_occlusion_frac: float = 0.0
    position: tuple[float, float] = (0.0, 0.0)
    yaw: float = 0.0

    def __post_init__(self):
        if min(self.n_h_left, self.n_h_right, self.n_v) < 1:
            raise ValueError("grid counts must be >= 1")
        if min(self.package_dims) <= 0 or min(self.pallet_dims) <= 0:
            raise ValueError("package and pallet dims must be positive")
        if not (0.0 <= self.lid_occlusion_frac <= 0.4):
            raise ValueError(
                f"lid_occlusion_frac must be in [0, 0.4], got {self.lid_occlusion_frac}"
            )
        w, _, d = self.package_dims
        length, width, _ = self.pallet_dims
        if self.n_h_left * w > length + 1e-6 or self.n_h_right * d > width + 1e-6:
            raise ValueError(
                f"grid {self.n_h_left}x{self.n_h_right} of {w}x{d} packages "
                f"does not fit the {length}x{width} pallet footprint"
            )
        if self.package_category not in PACKAGE_CATEGORIES:
            raise ValueError(f"{self.package_category} is not a package category")
        if self.pallet_category not in PALLET_CATEGORIES:
            raise ValueError(f"{self.pallet_category} is not a pallet category")


@dataclass(frozen=True)
class CameraSpec:
    """Ideal pinhole camera; the up-vector is always world vertical."""

    position: tuple[float, float, float]
    look_at: tuple[float, float, float]
    focal_px: float
    image_size: tuple[int, int]

    def __post_init__(self):
        if self.focal_px <= 0:
            raise ValueError("focal_px must be positive")
        if min(self.image_size) < 1:
            raise ValueError("image size must be >= 1")
        fwd = np.subtract(self.look_at, self.position)
        if np.hypot(fwd[0], fwd[1]) < 1e-9:
            raise ValueError("camera cannot look straight up or down (upright constraint)")


@dataclass(frozen=True)
class NoiseSpec:
    """Detection noise: vertex jitter, dropout, spurious packages, confidence
    resampling. confidence_model=None keeps original confidences. Everything
    is deterministic given the seed."""

    vertex_jitter_px: float = 0.0
    dropout_prob: float = 0.0
    spurious_rate: float = 0.0
    confidence_model: tuple[float, float] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.vertex_jitter_px < 0 or self.spurious_rate < 0:
            raise ValueError("jitter and spurious rate must be >= 0")
        if not (0.0 <= self.dropout_prob <= 1.0):
            raise ValueError(f"dropout_prob must be in [0, 1], got {self.dropout_prob}")


@dataclass(frozen=True)
class SceneSpec:
    units: tuple[UnitSpec, ...]
    camera: CameraSpec
    noise: NoiseSpec | None = None


# ---------------------------------------------------------------------------
# projection


def _camera_frame(cam: CameraSpec):
    pos = np.asarray(cam.position, dtype=np.float64)
    fwd = np.asarray(cam.look_at, dtype=np.float64) - pos
    fwd = fwd / np.linalg.norm(fwd)
    right = np.cross(fwd, [0.0, 0.0, 1.0])
    right = right / np.linalg.norm(right)
    up = np.cross(right, fwd)
    return pos, fwd, right, up


def _project(points: np.ndarray, cam: CameraSpec, frame, what: str) -> np.ndarray:
    pos, fwd, right, up = frame
    rel = points - pos
    depth = rel @ fwd
    if np.any(depth < _MIN_DEPTH):
        raise GenerationError(f"{what} lies behind or too close to the camera")
    w, h = cam.image_size
    u = 0.5 * w + cam.focal_px * (rel @ right) / depth
    v = 0.5 * h - cam.focal_px * (rel @ up) / depth
    return np.column_stack([u, v])


def _check_frustum(pts: np.ndarray, cam: CameraSpec, what: str):
    w, h = cam.image_size
    m = _FRUSTUM_MARGIN
    if (pts[:, 0] < m).any() or (pts[:, 0] > w - m).any() or \
       (pts[:, 1] < m).any() or (pts[:, 1] > h - m).any():
        raise GenerationError(f"{what} is not completely visible within the image")


def _convex_overlap(pa: np.ndarray, pb: np.ndarray) -> bool:
    """Separating-axis test for two convex polygons; touching is not overlap."""
    for poly in (pa, pb):
        n = len(poly)
        for i in range(n):
            a = poly[i]
            b = poly[(i + 1) % n]
            axis = np.array([a[1] - b[1], b[0] - a[0]])
            proj_a = pa @ axis
            proj_b = pb @ axis
            if proj_a.max() <= proj_b.min() or proj_b.max() <= proj_a.min():
                return False
    return True


# ---------------------------------------------------------------------------
# scene construction


class _UnitGeometry:
    """World-space geometry of one unit and its projection."""

    def __init__(self, spec: UnitSpec, cam: CameraSpec, frame, uid: str):
        self.spec = spec
        self.uid = uid
        w, h, d = spec.package_dims
        length, width, pallet_h = spec.pallet_dims
        a = spec.n_h_left * w
        b = spec.n_h_right * d
        c = spec.n_v * h
        crop = spec.lid_occlusion_frac * h
        ex = np.array([math.cos(spec.yaw), math.sin(spec.yaw), 0.0])
        ey = np.array([-math.sin(spec.yaw), math.cos(spec.yaw), 0.0])
        origin = np.array([spec.position[0], spec.position[1], 0.0])

        def world(lx: float, ly: float, z: float) -> np.ndarray:
            return origin + lx * ex + ly * ey + np.array([0.0, 0.0, z])

        self._world = world
        self._ex, self._ey = ex, ey

        # Viewing direction in the unit's local frame decides face visibility.
        cd = np.asarray(cam.position) - origin
        lx_cam = float(cd @ ex)
        ly_cam = float(cd @ ey)
        azimuth = math.degrees(math.atan2(ly_cam, lx_cam)) % 90.0
        if not (_MIN_VIEW_ANGLE < azimuth < 90.0 - _MIN_VIEW_ANGLE):
            raise GenerationError(
                f"unit {uid!r}: viewing azimuth {azimuth:.1f} deg (mod 90) leaves "
                f"less than {_MIN_VIEW_ANGLE} deg margin; two sides must be visible"
            )
        sx = 1.0 if lx_cam > 0 else -1.0
        sy = 1.0 if ly_cam > 0 else -1.0

        def corners(lx0, lx1, ly0, ly1, z0, z1):
            return np.array(
                [world(lx, ly, z) for lx, ly, z in (
                    (lx0, ly0, z0), (lx1, ly0, z0), (lx1, ly1, z0), (lx0, ly1, z0),
                    (lx0, ly0, z1), (lx1, ly0, z1), (lx1, ly1, z1), (lx0, ly1, z1),
                )]
            )

        pallet_pts = corners(-length / 2, length / 2, -width / 2, width / 2, 0.0, pallet_h)
        stack_pts = corners(-a / 2, a / 2, -b / 2, b / 2, pallet_h, pallet_h + c)

        self.footprint = np.array([
            world(-length / 2, -width / 2, 0)[:2], world(length / 2, -width / 2, 0)[:2],
            world(length / 2, width / 2, 0)[:2], world(-length / 2, width / 2, 0)[:2],
        ])

        proj_pallet = _project(pallet_pts, cam, frame, f"unit {uid!r} pallet")
        proj_stack = _project(stack_pts, cam, frame, f"unit {uid!r} stack")
        self.hull = convex_hull(np.vstack([proj_pallet, proj_stack]))
        self.pallet_hull = convex_hull(proj_pallet)
        _check_frustum(np.vstack([proj_pallet, proj_stack]), cam, f"unit {uid!r}")

        z0 = pallet_h
        z1 = pallet_h + c - crop

        def face_quad(fixed_axis: str, sign: float, t0: float, t1: float,
                      za: float, zb: float) -> np.ndarray:
            if fixed_axis == "x":
                pts = [world(sign * a / 2, t, z) for t, z in
                       ((t0, zb), (t1, zb), (t1, za), (t0, za))]
            else:
                pts = [world(t, sign * b / 2, z) for t, z in
                       ((t0, zb), (t1, zb), (t1, za), (t0, za))]
            return _project(np.array(pts), cam, frame, f"unit {uid!r} face")

        # Side A: the face with normal along +-x, spanning the short axis
        # (columns = n_h_right). Side B: normal along +-y, columns = n_h_left.
        self.side_a = face_quad("x", sx, -b / 2, b / 2, z0, z1)
        self.side_b = face_quad("y", sy, -a / 2, a / 2, z0, z1)
        self.side_a_cols = spec.n_h_right
        self.side_b_cols = spec.n_h_left

        def face_packages(fixed_axis: str, sign: float, start: float, size: float,
                          cols: int) -> list[np.ndarray]:
            quads = []
            for row in range(spec.n_v):
                za = pallet_h + row * h
                zb = pallet_h + (row + 1) * h - (crop if row == spec.n_v - 1 else 0.0)
                for col in range(cols):
                    t0 = start + col * size
                    quads.append(face_quad(fixed_axis, sign, t0, t0 + size, za, zb))
            return quads

        self.packages_a = face_packages("x", sx, -b / 2, d, spec.n_h_right)
        self.packages_b = face_packages("y", sy, -a / 2, w, spec.n_h_left)


def _record(rec_id: str, category: CategoryLabel, pts: np.ndarray,
            confidence: float = 1.0) -> DetectionRecord:
    poly = Polygon.from_xy(pts)
    x0, y0, x1, y1 = poly.bounds
    return DetectionRecord(rec_id, category, confidence, (x0, y0, x1, y1), poly)


def generate_scene(
    units: Sequence[UnitSpec],
    cam: CameraSpec,
    seed: int = 0,
    *,
    image_id: str = "scene",
) -> tuple[ImageDetections, ImageAnnotations]:
    """Render perfect detections and annotations for a scene.

    All confidences are 1.0 and every polygon is the exact projection of the
    corresponding 3D face (the unit region is the convex hull of the unit's
    projected corners). Frustum violations, units overlapping on the ground,
    and units occluding each other raise GenerationError; nothing is clipped
    silently. `seed` is reserved for interface symmetry; noise-free
    generation is fully deterministic.
    """
    del seed
    if not units:
        raise GenerationError("scene needs at least one unit")
    frame = _camera_frame(cam)
    geoms = [_UnitGeometry(spec, cam, frame, f"u{k}") for k, spec in enumerate(units)]

    for i in range(len(geoms)):
        for j in range(i + 1, len(geoms)):
            if _convex_overlap(geoms[i].footprint, geoms[j].footprint):
                raise GenerationError(
                    f"units {geoms[i].uid!r} and {geoms[j].uid!r} overlap on the ground plane"
                )
            if _convex_overlap(geoms[i].hull, geoms[j].hull):
                raise GenerationError(
                    f"units {geoms[i].uid!r} and {geoms[j].uid!r} occlude each other in the image"
                )

    records: list[DetectionRecord] = []
    annotations: list[UnitAnnotation] = []
    for g in geoms:
        spec = g.spec
        uid = g.uid
        records.append(_record(uid, CategoryLabel.TRANSPORT_UNIT, g.hull))
        records.append(_record(f"{uid}_pallet", spec.pallet_category, g.pallet_hull))
        records.append(_record(f"{uid}_side_a", CategoryLabel.TU_SIDE, g.side_a))
        records.append(_record(f"{uid}_side_b", CategoryLabel.TU_SIDE, g.side_b))
        for idx, quad in enumerate(g.packages_a):
            records.append(_record(f"{uid}_pa_{idx}", spec.package_category, quad))
        for idx, quad in enumerate(g.packages_b):
            records.append(_record(f"{uid}_pb_{idx}", spec.package_category, quad))

        centroid_a = Polygon.from_xy(g.side_a).centroid.x
        centroid_b = Polygon.from_xy(g.side_b).centroid.x
        if centroid_a < centroid_b:
            counts = (g.side_a_cols, g.side_b_cols, spec.n_v)
        else:
            counts = (g.side_b_cols, g.side_a_cols, spec.n_v)
        annotations.append(
            UnitAnnotation(
                polygon=Polygon.from_xy(g.hull),
                pallet_category=spec.pallet_category,
                package_category=spec.package_category,
                counts=counts,
            )
        )

    w, h = cam.image_size
    dets = ImageDetections(image_id, w, h, tuple(records))
    anns = ImageAnnotations(image_id, w, h, tuple(annotations))
    return dets, anns


# ---------------------------------------------------------------------------
# noise


def perturb(dets: ImageDetections, noise: NoiseSpec) -> ImageDetections:
    """Apply detection noise: uniform vertex jitter (clamped to the image),
    dropout of non-transport-unit records, spurious small packages, and
    confidence resampling. Transport units are never dropped; zero noise
    returns the input unchanged."""
    rng = np.random.default_rng(noise.seed)
    w, h = dets.width, dets.height
    records: list[DetectionRecord] = []
    for rec in dets.records:
        if rec.category is not CategoryLabel.TRANSPORT_UNIT and noise.dropout_prob > 0:
            if rng.random() < noise.dropout_prob:
                continue
        mask = rec.mask
        if noise.vertex_jitter_px > 0:
            arr = rec.mask.to_array()
            for _ in range(5):
                j = rng.uniform(-noise.vertex_jitter_px, noise.vertex_jitter_px, arr.shape)
                cand = arr + j
                cand[:, 0] = np.clip(cand[:, 0], 0.0, w)
                cand[:, 1] = np.clip(cand[:, 1], 0.0, h)
                try:
                    mask = Polygon.from_xy(cand)
                    break
                except ValueError:
                    mask = rec.mask  # jitter collapsed the ring; retry
        confidence = rec.confidence
        if noise.confidence_model is not None:
            mean, spread = noise.confidence_model
            confidence = float(np.clip(rng.normal(mean, spread), 0.0, 1.0))
        if mask is rec.mask and confidence == rec.confidence:
            records.append(rec)
        else:
            x0, y0, x1, y1 = mask.bounds
            records.append(
                DetectionRecord(rec.id, rec.category, confidence, (x0, y0, x1, y1), mask)
            )
    if noise.spurious_rate > 0:
        count = int(rng.poisson(noise.spurious_rate))
        categories = sorted(PACKAGE_CATEGORIES, key=lambda c: c.value)
        for k in range(count):
            cx = rng.uniform(0.1 * w, 0.9 * w)
            cy = rng.uniform(0.1 * h, 0.9 * h)
            half = rng.uniform(0.02, 0.06) * min(w, h) / 2
            quad = np.array([
                [cx - half, cy - half], [cx + half, cy - half],
                [cx + half, cy + half], [cx - half, cy + half],
            ])
            category = categories[int(rng.integers(0, len(categories)))]
            if noise.confidence_model is not None:
                mean, spread = noise.confidence_model
                confidence = float(np.clip(rng.normal(mean, spread), 0.0, 1.0))
            else:
                confidence = float(rng.uniform(0.5, 1.0))
            records.append(_record(f"spurious_{k}", category, quad, confidence))
    return ImageDetections(dets.image_id, w, h, tuple(records))


# ---------------------------------------------------------------------------
# scene spec documents


def _parse_triple(raw, where: str, n: int = 3) -> tuple[float, ...]:
    if not isinstance(raw, list) or len(raw) != n or not all(
        isinstance(v, (int, float)) and not isinstance(v, bool) for v in raw
    ):
        raise ParseError(f"{where}: expected a list of {n} numbers")
    return tuple(float(v) for v in raw)


def parse_scene_spec(document: bytes | str) -> SceneSpec:
    """Parse a scene spec document: top-level `units`, `camera`, and optional
    `noise` keys."""
    data = _parse_document(document)
    raw_units = _require(data, "units", list, "scene")
    raw_cam = _require(data, "camera", dict, "scene")

    units = []
    for i, raw in enumerate(raw_units):
        where = f"units[{i}]"
        if not isinstance(raw, dict):
            raise ParseError(f"{where}: expected an object", i)
        try:
            package_category = CategoryLabel(_require(raw, "package_category", str, where, i))
            pallet_category = CategoryLabel(_require(raw, "pallet_category", str, where, i))
        except ValueError as exc:
            raise ParseError(f"{where}: unknown category: {exc}", i) from None
        try:
            units.append(
                UnitSpec(
                    n_h_left=_require(raw, "n_h_left", int, where, i),
                    n_h_right=_require(raw, "n_h_right", int, where, i),
                    n_v=_require(raw, "n_v", int, where, i),
                    package_dims=_parse_triple(_require(raw, "package_dims", list, where, i),
                                               f"{where}.package_dims"),
                    package_category=package_category,
                    pallet_category=pallet_category,
                    pallet_dims=_parse_triple(raw["pallet_dims"], f"{where}.pallet_dims")
                    if "pallet_dims" in raw else _EPAL_DIMS,
                    lid_occlusion_frac=float(raw.get("lid_occlusion_frac", 0.0)),
                    position=_parse_triple(raw["position"], f"{where}.position", 2)
                    if "position" in raw else (0.0, 0.0),
                    yaw=float(raw.get("yaw", 0.0)),
                )
            )
        except ValueError as exc:
            raise ParseError(f"{where}: {exc}", i) from exc

    try:
        camera = CameraSpec(
            position=_parse_triple(_require(raw_cam, "position", list, "camera"), "camera.position"),
            look_at=_parse_triple(_require(raw_cam, "look_at", list, "camera"), "camera.look_at"),
            focal_px=float(_require(raw_cam, "focal_px", float, "camera")),
            image_size=tuple(
                int(v) for v in _parse_triple(
                    _require(raw_cam, "image_size", list, "camera"), "camera.image_size", 2
                )
            ),
        )
    except ValueError as exc:
        raise ParseError(f"camera: {exc}") from exc

    noise = None
    if "noise" in data and data["noise"] is not None:
        raw_noise = data["noise"]
        if not isinstance(raw_noise, dict):
            raise ParseError("noise: expected an object")
        model = raw_noise.get("confidence_model")
        try:
            noise = NoiseSpec(
                vertex_jitter_px=float(raw_noise.get("vertex_jitter_px", 0.0)),
                dropout_prob=float(raw_noise.get("dropout_prob", 0.0)),
                spurious_rate=float(raw_noise.get("spurious_rate", 0.0)),
                confidence_model=None if model is None
                else tuple(_parse_triple(model, "noise.confidence_model", 2)),
                seed=int(raw_noise.get("seed", 0)),
            )
        except ValueError as exc:
            raise ParseError(f"noise: {exc}") from exc
    return SceneSpec(tuple(units), camera, noise)


def scene_spec_to_document(spec: SceneSpec) -> dict:
    doc: dict = {
        "units": [
            {
                "n_h_left": u.n_h_left,
                "n_h_right": u.n_h_right,
                "n_v": u.n_v,
                "package_dims": list(u.package_dims),
                "package_category": u.package_category.value,
                "pallet_category": u.pallet_category.value,
                "pallet_dims": list(u.pallet_dims),
                "lid_occlusion_frac": u.lid_occlusion_frac,
                "position": list(u.position),
                "yaw": u.yaw,
            }
            for u in spec.units
        ],
        "camera": {
            "position": list(spec.camera.position),
            "look_at": list(spec.camera.look_at),
            "focal_px": spec.camera.focal_px,
            "image_size": list(spec.camera.image_size),
        },
    }
    if spec.noise is not None:
        doc["noise"] = {
            "vertex_jitter_px": spec.noise.vertex_jitter_px,
            "dropout_prob": spec.noise.dropout_prob,
            "spurious_rate": spec.noise.spurious_rate,
            "confidence_model": None if spec.noise.confidence_model is None
            else list(spec.noise.confidence_model),
            "seed": spec.noise.seed,
        }
    return doc
