"""Planar geometry kernel.

Polygons with exact float vertices, binary rasters sampled at pixel centers,
polyline simplification, tetragon fitting to masks, and homography-based
rectification. All types are immutable after construction and all operations
are pure functions, so everything here is safe to use concurrently.

Pixel convention: a raster cell (column x, row y) is set iff the point
(x + 0.5, y + 0.5) lies inside the polygon under the even-odd rule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

from .errors import AtInfinity, DegenerateQuad, NotQuadrilateral

# Search schedule for the tetragon fit: step halving with full sweeps at each
# step until no move improves the objective. When the boundary line-fit seed
# is adopted it is already sub-pixel accurate, so the search starts finer.
_FIT_STEP_START = 8.0
_FIT_STEP_START_REFINED = 2.0
_FIT_STEP_MIN = 0.25
_FIT_SWEEP_CAP = 200

# Quads with a corner angle below this (or within it of a straight line) give
# ill-conditioned homographies and are rejected.
_MIN_CORNER_ANGLE_DEG = 5.0


@dataclass(frozen=True)
class Point2:
    """A point in pixel coordinates (origin top-left, y grows downward)."""

    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite point ({self.x}, {self.y})")


@dataclass(frozen=True)
class Polygon:
    """A simple closed polygon given by its vertex ring (implicitly closed).

    Invariants: at least 3 vertices, no two consecutive vertices identical
    (including the wrap-around pair), nonzero signed area.
    """

    vertices: tuple[Point2, ...]

    def __post_init__(self):
        n = len(self.vertices)
        if n < 3:
            raise ValueError(f"polygon needs >= 3 vertices, got {n}")
        for i in range(n):
            a = self.vertices[i]
            b = self.vertices[(i + 1) % n]
            if a.x == b.x and a.y == b.y:
                raise ValueError(f"consecutive identical vertices at index {i}")
        if self.signed_area == 0.0:
            raise ValueError("polygon has zero signed area")

    @classmethod
    def from_xy(cls, coords: Iterable[Sequence[float]]) -> "Polygon":
        return cls(tuple(Point2(float(x), float(y)) for x, y in coords))

    @cached_property
    def _array(self) -> np.ndarray:
        arr = np.array([(p.x, p.y) for p in self.vertices], dtype=np.float64)
        arr.setflags(write=False)
        return arr

    def to_array(self) -> np.ndarray:
        return self._array

    @cached_property
    def signed_area(self) -> float:
        return _signed_area(self._array)

    @property
    def area(self) -> float:
        return abs(self.signed_area)

    @cached_property
    def centroid(self) -> Point2:
        cx, cy = _area_centroid(self._array)
        return Point2(cx, cy)

    @cached_property
    def bounds(self) -> tuple[float, float, float, float]:
        """(x_min, y_min, x_max, y_max)."""
        arr = self._array
        return (
            float(arr[:, 0].min()),
            float(arr[:, 1].min()),
            float(arr[:, 0].max()),
            float(arr[:, 1].max()),
        )


@dataclass(frozen=True, eq=False)
class BinaryRaster:
    """A width x height boolean occupancy grid; cells[row, column]."""

    width: int
    height: int
    cells: np.ndarray
    degenerate: bool = False

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"raster dims must be >= 1, got {self.width}x{self.height}")
        if self.cells.shape != (self.height, self.width):
            raise ValueError(
                f"cells shape {self.cells.shape} != (height={self.height}, width={self.width})"
            )
        if self.cells.dtype != np.bool_:
            raise ValueError("cells must be a boolean array")
        self.cells.setflags(write=False)

    @classmethod
    def empty(cls, width: int, height: int, degenerate: bool = False) -> "BinaryRaster":
        return cls(width, height, np.zeros((height, width), dtype=bool), degenerate)

    @cached_property
    def count(self) -> int:
        return int(np.count_nonzero(self.cells))


@dataclass(frozen=True)
class Tetragon:
    """Four corners in canonical order: top-left, top-right, bottom-right,
    bottom-left. The two corners with smallest y are the top pair; within each
    pair the smaller x is the left one."""

    corners: tuple[Point2, Point2, Point2, Point2]

    def __post_init__(self):
        if len(self.corners) != 4:
            raise ValueError("tetragon needs exactly 4 corners")
        arr = np.array([(p.x, p.y) for p in self.corners], dtype=np.float64)
        canon = _canonical_order(arr)
        if not np.array_equal(arr, canon):
            raise DegenerateQuad("corners are not in canonical order")
        if not _is_simple_quad(arr):
            raise DegenerateQuad("self-intersecting quadrilateral")
        if abs(_signed_area(arr)) <= 0.0:
            raise DegenerateQuad("zero-area quadrilateral")

    @classmethod
    def from_corners(cls, corners: Iterable[Sequence[float]] | np.ndarray) -> "Tetragon":
        arr = np.asarray(
            [(p.x, p.y) if isinstance(p, Point2) else (p[0], p[1]) for p in corners],
            dtype=np.float64,
        )
        if arr.shape != (4, 2):
            raise ValueError(f"expected 4 corner points, got shape {arr.shape}")
        canon = _canonical_order(arr)
        return cls(tuple(Point2(float(x), float(y)) for x, y in canon))

    @cached_property
    def _array(self) -> np.ndarray:
        arr = np.array([(p.x, p.y) for p in self.corners], dtype=np.float64)
        arr.setflags(write=False)
        return arr

    def to_array(self) -> np.ndarray:
        return self._array

    @property
    def top_left(self) -> Point2:
        return self.corners[0]

    @property
    def top_right(self) -> Point2:
        return self.corners[1]

    @property
    def bottom_right(self) -> Point2:
        return self.corners[2]

    @property
    def bottom_left(self) -> Point2:
        return self.corners[3]


@dataclass(frozen=True)
class RectSize:
    """Extent of a rectified side rectangle (abstract units, not pixels)."""

    s_h: float
    s_v: float

    def __post_init__(self):
        if not (self.s_h > 0 and self.s_v > 0):
            raise ValueError(f"rect size must be positive, got {self.s_h} x {self.s_v}")


@dataclass(frozen=True, eq=False)
class Homography:
    """3x3 projective transform, normalized so matrix[2, 2] == 1 when nonzero."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=np.float64)
        if m.shape != (3, 3) or not np.all(np.isfinite(m)):
            raise ValueError("homography must be a finite 3x3 matrix")
        if abs(m[2, 2]) > 1e-12 and m[2, 2] != 1.0:
            m = m / m[2, 2]
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        if abs(np.linalg.det(m)) <= 1e-12:
            raise DegenerateQuad("homography is not invertible")

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))

    @classmethod
    def translation(cls, tx: float, ty: float) -> "Homography":
        m = np.eye(3)
        m[0, 2] = tx
        m[1, 2] = ty
        return cls(m)

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.matrix))


# ---------------------------------------------------------------------------
# low-level helpers


def _signed_area(arr: np.ndarray) -> float:
    x = arr[:, 0]
    y = arr[:, 1]
    x2 = np.roll(x, -1)
    y2 = np.roll(y, -1)
    return float(0.5 * np.sum(x * y2 - x2 * y))


def _area_centroid(arr: np.ndarray) -> tuple[float, float]:
    x = arr[:, 0]
    y = arr[:, 1]
    x2 = np.roll(x, -1)
    y2 = np.roll(y, -1)
    cross = x * y2 - x2 * y
    a = 0.5 * np.sum(cross)
    if a == 0.0:
        return float(x.mean()), float(y.mean())
    cx = float(np.sum((x + x2) * cross) / (6.0 * a))
    cy = float(np.sum((y + y2) * cross) / (6.0 * a))
    return cx, cy


def _fill_even_odd(verts: np.ndarray, width: int, height: int,
                   ox: float = 0.0, oy: float = 0.0) -> np.ndarray:
    """Even-odd scanline fill sampled at pixel centers of a width x height
    grid whose cell (0, 0) covers [ox, ox+1) x [oy, oy+1) in polygon coords."""
    out = np.zeros((height, width), dtype=bool)
    if width < 1 or height < 1 or len(verts) < 3:
        return out
    x1 = verts[:, 0] - ox
    y1 = verts[:, 1] - oy
    x2 = np.roll(x1, -1)
    y2 = np.roll(y1, -1)

    rows_parts = []
    xs_parts = []
    for k in range(len(x1)):
        ya, yb = y1[k], y2[k]
        if ya == yb:
            continue
        lo, hi = (ya, yb) if ya < yb else (yb, ya)
        r0 = max(0, math.ceil(lo - 0.5))
        r1 = min(height, math.ceil(hi - 0.5))
        if r0 >= r1:
            continue
        rr = np.arange(r0, r1)
        t = (rr + 0.5 - ya) / (yb - ya)
        rows_parts.append(rr)
        xs_parts.append(x1[k] + t * (x2[k] - x1[k]))
    if not rows_parts:
        return out

    rows = np.concatenate(rows_parts)
    xs = np.concatenate(xs_parts)
    order = np.lexsort((xs, rows))
    rows = rows[order]
    xs = xs[order]

    # Crossings per row come in pairs (even count for half-open edge spans);
    # even ranks start an inside interval, odd ranks end it.
    boundary = np.flatnonzero(np.r_[True, rows[1:] != rows[:-1]])
    counts = np.diff(np.r_[boundary, rows.size])
    ranks = np.arange(rows.size) - np.repeat(boundary, counts)
    signs = np.where(ranks % 2 == 0, np.int32(1), np.int32(-1))
    cols = np.clip(np.ceil(xs - 0.5), 0, width).astype(np.int64)

    # Accumulate interval deltas only over the touched row/column extent;
    # signs cancel per row, so coverage is zero outside it either way.
    r_min = int(rows.min())
    r_max = int(rows.max())
    c_span = min(int(cols.max()), width)
    delta = np.zeros((r_max - r_min + 1, c_span + 1), dtype=np.int32)
    np.add.at(delta, (rows - r_min, cols), signs)
    coverage = np.cumsum(delta[:, :c_span], axis=1)
    np.greater(coverage, 0, out=out[r_min : r_max + 1, :c_span])
    return out


def _canonical_order(pts: np.ndarray) -> np.ndarray:
    """Order 4 points as (TL, TR, BR, BL) per the smallest-y-is-top rule."""
    idx = np.lexsort((pts[:, 0], pts[:, 1]))
    top = pts[idx[:2]]
    bottom = pts[idx[2:]]
    tl, tr = (top[0], top[1]) if top[0, 0] <= top[1, 0] else (top[1], top[0])
    bl, br = (bottom[0], bottom[1]) if bottom[0, 0] <= bottom[1, 0] else (bottom[1], bottom[0])
    return np.array([tl, tr, br, bl])


def _orient(a, b, c) -> float:
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def _segments_cross(p1, p2, p3, p4) -> bool:
    """Proper (interior) intersection of segments p1p2 and p3p4."""
    d1 = _orient(p3, p4, p1)
    d2 = _orient(p3, p4, p2)
    d3 = _orient(p1, p2, p3)
    d4 = _orient(p1, p2, p4)
    return ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) and d1 != d2 and d3 != d4


def _is_simple_quad(q: np.ndarray) -> bool:
    return not (
        _segments_cross(q[0], q[1], q[2], q[3]) or _segments_cross(q[1], q[2], q[3], q[0])
    )


def _segment_distances(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return np.hypot(points[:, 0] - a[0], points[:, 1] - a[1])
    t = np.clip(((points - a) @ ab) / denom, 0.0, 1.0)
    proj = a + t[:, None] * ab
    d = points - proj
    return np.hypot(d[:, 0], d[:, 1])


# ---------------------------------------------------------------------------
# rasterization and IoU


def rasterize(poly: Polygon, width: int, height: int) -> BinaryRaster:
    """Rasterize a polygon; cell (x, y) is set iff the pixel center
    (x + 0.5, y + 0.5) lies inside under the even-odd rule."""
    if width < 1 or height < 1:
        raise ValueError("raster dims must be >= 1")
    arr = poly.to_array()
    if _signed_area(arr) == 0.0:
        return BinaryRaster.empty(width, height, degenerate=True)
    return BinaryRaster(width, height, _fill_even_odd(arr, width, height))


def iou(a: BinaryRaster, b: BinaryRaster) -> float:
    """Intersection over union of two equally-sized rasters; 0 if both empty."""
    if (a.width, a.height) != (b.width, b.height):
        raise ValueError(
            f"raster dimension mismatch: {a.width}x{a.height} vs {b.width}x{b.height}"
        )
    inter = int(np.count_nonzero(a.cells & b.cells))
    union = a.count + b.count - inter
    if union == 0:
        return 0.0
    return inter / union


# ---------------------------------------------------------------------------
# polyline simplification


def _dp_keep_mask(arr: np.ndarray, epsilon: float) -> np.ndarray:
    n = len(arr)
    keep = np.zeros(n, dtype=bool)
    keep[0] = keep[n - 1] = True
    stack = [(0, n - 1)]
    while stack:
        i, j = stack.pop()
        if j - i < 2:
            continue
        d = _segment_distances(arr[i + 1 : j], arr[i], arr[j])
        k = int(np.argmax(d))
        if d[k] > epsilon:
            m = i + 1 + k
            keep[m] = True
            stack.append((i, m))
            stack.append((m, j))
    return keep


def douglas_peucker(points: Sequence[Point2], epsilon: float) -> list[Point2]:
    """Simplify an open polyline; keeps the endpoints, and every removed point
    lies within epsilon of the simplified chain."""
    if len(points) < 2:
        raise ValueError("polyline needs >= 2 points")
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    arr = np.array([(p.x, p.y) for p in points], dtype=np.float64)
    keep = _dp_keep_mask(arr, epsilon)
    return [points[i] for i in np.flatnonzero(keep)]


def _closed_simplify(arr: np.ndarray, epsilon: float) -> np.ndarray:
    """Simplify a closed ring by splitting it at two far-apart anchor vertices
    and simplifying the two open chains."""
    n = len(arr)
    centroid = arr.mean(axis=0)
    a = int(np.argmax(np.hypot(*(arr - centroid).T)))
    rolled = np.roll(arr, -a, axis=0)
    b = int(np.argmax(np.hypot(*(rolled - rolled[0]).T)))
    chain1 = rolled[: b + 1]
    chain2 = np.vstack([rolled[b:], rolled[:1]])
    k1 = _dp_keep_mask(chain1, epsilon)
    k2 = _dp_keep_mask(chain2, epsilon)
    merged = np.vstack([chain1[k1][:-1], chain2[k2][:-1]])
    return merged


def simplify_to_tetragon(poly: Polygon) -> Tetragon:
    """Reduce a polygon boundary to exactly 4 corners by binary-searching the
    simplification tolerance; raises NotQuadrilateral when the boundary has no
    4-corner reduction (e.g. a triangle)."""
    arr = poly.to_array()
    if len(arr) < 4:
        raise NotQuadrilateral(f"boundary has only {len(arr)} vertices")
    x0, y0, x1, y1 = poly.bounds
    diagonal = math.hypot(x1 - x0, y1 - y0)
    lo = 0.5
    hi = max(diagonal, lo + 1.0)

    def count(eps: float) -> int:
        return len(_closed_simplify(arr, eps))

    if count(lo) > 4:
        for _ in range(40):
            mid = 0.5 * (lo + hi)
            if count(mid) <= 4:
                hi = mid
            else:
                lo = mid
        eps = hi
    else:
        eps = lo

    corners = _closed_simplify(arr, eps)
    if len(corners) != 4:
        raise NotQuadrilateral(
            f"boundary simplifies to {len(corners)} vertices, not 4"
        )
    return Tetragon.from_corners(corners)


# ---------------------------------------------------------------------------
# tetragon objective and fit


def _quad_mismatch(quad: np.ndarray, cells: np.ndarray, mask_count: int) -> int:
    """Pixels where the rasterized quad and the mask disagree, over the full
    raster; computed on the quad's bounding-box ROI for speed."""
    height, width = cells.shape
    r0 = max(0, math.floor(quad[:, 1].min()))
    r1 = min(height, math.ceil(quad[:, 1].max()) + 1)
    c0 = max(0, math.floor(quad[:, 0].min()))
    c1 = min(width, math.ceil(quad[:, 0].max()) + 1)
    if r0 >= r1 or c0 >= c1:
        return mask_count
    quad_cells = _fill_even_odd(quad, c1 - c0, r1 - r0, ox=c0, oy=r0)
    quad_area = int(np.count_nonzero(quad_cells))
    inter = int(np.count_nonzero(quad_cells & cells[r0:r1, c0:c1]))
    return mask_count + quad_area - 2 * inter


def tetragon_objective(mask: BinaryRaster, t: Tetragon) -> int:
    """Size of the symmetric difference between the mask and the rasterized
    tetragon, counted over the mask's pixel grid."""
    return _quad_mismatch(t.to_array(), mask.cells, mask.count)


def _quad_valid(quad: np.ndarray) -> bool:
    return _is_simple_quad(quad) and abs(_signed_area(quad)) > 1e-9


def _line_fit_corners(ring: np.ndarray, dp_corners: np.ndarray) -> np.ndarray | None:
    """Refine DP corner estimates by fitting a total-least-squares line to the
    staircase boundary run of each quad edge and intersecting adjacent lines.

    The crack boundary oscillates within half a pixel of the true edge with
    roughly zero mean, so the fitted lines are sub-pixel accurate.
    """
    idx = []
    for c in dp_corners:
        d = np.hypot(ring[:, 0] - c[0], ring[:, 1] - c[1])
        idx.append(int(np.argmin(d)))
    lines = []
    for k in range(4):
        i, j = idx[k], idx[(k + 1) % 4]
        pts = ring[i : j + 1] if j > i else np.vstack([ring[i:], ring[: j + 1]])
        m = len(pts)
        trim = max(1, int(0.15 * m))  # corner rounding pollutes the run ends
        core = pts[trim : m - trim] if m - 2 * trim >= 2 else pts
        mean = core.mean(axis=0)
        _, _, vt = np.linalg.svd(core - mean)
        lines.append((mean, vt[0]))
    corners = []
    for k in range(4):
        p1, d1 = lines[k - 1]
        p2, d2 = lines[k]
        a = np.array([d1, -d2]).T
        if abs(np.linalg.det(a)) < 1e-9:
            return None
        t = np.linalg.solve(a, p2 - p1)
        corners.append(p1 + t[0] * d1)
    return np.array(corners)


def _fit_moves(step: float) -> list[np.ndarray]:
    """Candidate displacement vectors of the 8 corner coordinates at one step:
    single coordinates, whole-edge translations, and whole-quad translations.
    The composite moves let the search cross plateaus where a coupled pixel
    flip blocks every single-coordinate move."""
    moves = []
    for i in range(8):
        for s in (step, -step):
            d = np.zeros(8)
            d[i] = s
            moves.append(d)
    for e in range(4):
        c2 = (e + 1) % 4
        for sx, sy in ((step, 0.0), (-step, 0.0), (0.0, step), (0.0, -step)):
            d = np.zeros(8)
            d[2 * e] += sx
            d[2 * e + 1] += sy
            d[2 * c2] += sx
            d[2 * c2 + 1] += sy
            moves.append(d)
    for sx, sy in ((step, 0.0), (-step, 0.0), (0.0, step), (0.0, -step)):
        moves.append(np.tile([sx, sy], 4))
    return moves


def fit_tetragon(mask: BinaryRaster) -> Tetragon:
    """Fit a tetragon to a mask by minimizing the pixel disagreement count.

    Seeded with the 4-corner simplification of the largest connected
    component's boundary (refined by per-edge line fitting when that lowers
    the objective), then polished with a deterministic pattern search over the
    corner coordinates with halving steps. The result never has a larger
    objective than the 4-corner seed.
    """
    if mask.count == 0:
        raise ValueError("cannot fit a tetragon to an empty mask")
    boundary = boundary_polygon(mask.cells)
    seed = simplify_to_tetragon(boundary)

    cells = mask.cells
    mask_count = mask.count
    dp_quad = seed.to_array()
    quad = dp_quad.reshape(8).copy()
    best = _quad_mismatch(dp_quad, cells, mask_count)

    step = _FIT_STEP_START
    refined = _line_fit_corners(boundary.to_array(), dp_quad)
    if refined is not None and _quad_valid(refined):
        value = _quad_mismatch(refined, cells, mask_count)
        if value < best:
            quad, best = refined.reshape(8).copy(), value
            step = _FIT_STEP_START_REFINED

    sweeps = 0
    while step >= _FIT_STEP_MIN and sweeps < _FIT_SWEEP_CAP:
        improved = False
        for d in _fit_moves(step):
            cand = quad + d
            cq = cand.reshape(4, 2)
            if not _quad_valid(cq):
                continue
            value = _quad_mismatch(cq, cells, mask_count)
            if value < best:
                quad, best = cand, value
                improved = True
        sweeps += 1
        if not improved:
            step *= 0.5
    return Tetragon.from_corners(quad.reshape(4, 2))


# ---------------------------------------------------------------------------
# homography


def _normalization(pts: np.ndarray) -> np.ndarray:
    centroid = pts.mean(axis=0)
    d = np.hypot(*(pts - centroid).T).mean()
    s = math.sqrt(2.0) / d if d > 0 else 1.0
    return np.array(
        [[s, 0.0, -s * centroid[0]], [0.0, s, -s * centroid[1]], [0.0, 0.0, 1.0]]
    )


def _corner_angles(pts: np.ndarray) -> np.ndarray:
    angles = []
    for i in range(4):
        u = pts[(i - 1) % 4] - pts[i]
        v = pts[(i + 1) % 4] - pts[i]
        nu = np.hypot(*u)
        nv = np.hypot(*v)
        if nu == 0 or nv == 0:
            angles.append(0.0)
            continue
        c = np.clip((u @ v) / (nu * nv), -1.0, 1.0)
        angles.append(math.degrees(math.acos(c)))
    return np.array(angles)


def homography_from_corners(src: Tetragon, dst: RectSize) -> Homography:
    """Exact 4-point homography mapping the tetragon's canonical corners to
    the rectangle corners (0,0), (s_h,0), (s_h,s_v), (0,s_v)."""
    s = src.to_array()
    angles = _corner_angles(s)
    if np.any(angles < _MIN_CORNER_ANGLE_DEG) or np.any(angles > 180.0 - _MIN_CORNER_ANGLE_DEG):
        raise DegenerateQuad(
            f"corner angles {np.round(angles, 2).tolist()} too close to degenerate"
        )
    d = np.array(
        [[0.0, 0.0], [dst.s_h, 0.0], [dst.s_h, dst.s_v], [0.0, dst.s_v]]
    )
    t1 = _normalization(s)
    t2 = _normalization(d)
    sn = (t1 @ np.c_[s, np.ones(4)].T).T[:, :2]
    dn = (t2 @ np.c_[d, np.ones(4)].T).T[:, :2]

    rows = []
    for (x, y), (u, v) in zip(sn, dn):
        rows.append([x, y, 1, 0, 0, 0, -u * x, -u * y, -u])
        rows.append([0, 0, 0, x, y, 1, -v * x, -v * y, -v])
    a = np.array(rows)
    _, _, vt = np.linalg.svd(a)
    hn = vt[-1].reshape(3, 3)
    h = np.linalg.inv(t2) @ hn @ t1
    return Homography(h)


def apply_homography(h: Homography, p: Point2) -> Point2:
    v = h.matrix @ np.array([p.x, p.y, 1.0])
    if abs(v[2]) < 1e-12:
        raise AtInfinity(f"point ({p.x}, {p.y}) maps to infinity")
    return Point2(float(v[0] / v[2]), float(v[1] / v[2]))


def map_points(h: Homography, arr: np.ndarray) -> np.ndarray:
    """Apply a homography to an (N, 2) array of points."""
    v = np.c_[arr, np.ones(len(arr))] @ h.matrix.T
    w = v[:, 2]
    if np.any(np.abs(w) < 1e-12):
        raise AtInfinity("some points map to infinity")
    return v[:, :2] / w[:, None]


def map_polygon(h: Homography, poly: Polygon) -> Polygon:
    return Polygon.from_xy(map_points(h, poly.to_array()))


def axis_aligned_bbox(points: Sequence[Point2]) -> tuple[Point2, Point2]:
    """Componentwise min / max corner of a nonempty point sequence."""
    if len(points) == 0:
        raise ValueError("empty point sequence")
    xs = [p.x for p in points]
    ys = [p.y for p in points]
    return Point2(min(xs), min(ys)), Point2(max(xs), max(ys))


def rectified_size(t: Tetragon) -> RectSize:
    """Rectangle extent preserving the tetragon's aspect: horizontal extent is
    the mean of the top and bottom edge lengths, vertical of left and right."""
    tl, tr, br, bl = t.to_array()
    s_h = 0.5 * (np.hypot(*(tr - tl)) + np.hypot(*(br - bl)))
    s_v = 0.5 * (np.hypot(*(bl - tl)) + np.hypot(*(br - tr)))
    return RectSize(float(s_h), float(s_v))


# ---------------------------------------------------------------------------
# raster boundary tracing and convex hull

# Outgoing-direction preference at a vertex, keyed by incoming direction:
# turn toward the region side first so diagonally touching loops stay apart.
_TURN_PREFERENCE = {
    (1, 0): ((0, 1), (1, 0), (0, -1)),
    (-1, 0): ((0, -1), (-1, 0), (0, 1)),
    (0, 1): ((-1, 0), (0, 1), (1, 0)),
    (0, -1): ((1, 0), (0, -1), (-1, 0)),
}


def _boundary_edges(cells: np.ndarray) -> dict:
    """Directed crack edges between set and unset cells, keyed by start
    vertex; the region lies on a consistent side of every edge."""
    padded = np.pad(cells, 1, constant_values=False)
    ys, xs = np.nonzero(cells)
    edges: dict[tuple[int, int], list[tuple[int, int]]] = {}

    def add(sx, sy, dx, dy):
        edges.setdefault((sx, sy), []).append((dx, dy))

    top = ~padded[:-2, 1:-1][ys, xs]
    right = ~padded[1:-1, 2:][ys, xs]
    bottom = ~padded[2:, 1:-1][ys, xs]
    left = ~padded[1:-1, :-2][ys, xs]
    for x, y, t, r, b, l in zip(xs.tolist(), ys.tolist(), top.tolist(),
                                right.tolist(), bottom.tolist(), left.tolist()):
        if t:
            add(x, y, 1, 0)
        if r:
            add(x + 1, y, 0, 1)
        if b:
            add(x + 1, y + 1, -1, 0)
        if l:
            add(x, y + 1, 0, -1)
    return edges


def _trace_loops(cells: np.ndarray) -> list[np.ndarray]:
    edges = _boundary_edges(cells)
    starts = sorted(edges)
    loops = []
    for start in starts:
        while edges.get(start):
            d = edges[start].pop()
            first_dir = d
            path = [start]
            v = (start[0] + d[0], start[1] + d[1])
            while v != start:
                outs = edges.get(v)
                if not outs:
                    raise RuntimeError(f"open boundary chain at vertex {v}")
                nd = None
                for cand in _TURN_PREFERENCE[d]:
                    if cand in outs:
                        nd = cand
                        break
                if nd is None:
                    raise RuntimeError(f"no admissible continuation at vertex {v}")
                outs.remove(nd)
                if nd != d:
                    path.append(v)
                d = nd
                v = (v[0] + d[0], v[1] + d[1])
            # The start vertex may sit mid-edge; drop it if collinear.
            if d == first_dir and len(path) > 3:
                path.pop(0)
            if len(path) >= 3:
                loops.append(np.array(path, dtype=np.float64))
    return loops


def boundary_polygon(cells: np.ndarray | BinaryRaster) -> Polygon:
    """Outer boundary polygon (on the pixel-corner lattice) of the largest
    connected region of set cells. Re-rasterizing the result reproduces that
    region exactly; interior holes are not represented."""
    grid = cells.cells if isinstance(cells, BinaryRaster) else cells
    if not np.any(grid):
        raise ValueError("cannot trace the boundary of an empty raster")
    labels, n = ndimage.label(grid)
    if n > 1:
        sizes = ndimage.sum_labels(np.ones_like(labels), labels, np.arange(1, n + 1))
        grid = labels == (int(np.argmax(sizes)) + 1)
    loops = _trace_loops(np.ascontiguousarray(grid))
    outer = max(loops, key=lambda lp: abs(_signed_area(lp)))
    return Polygon.from_xy(outer)


def convex_hull(points: np.ndarray) -> np.ndarray:
    """Convex hull (monotone chain) of an (N, 2) array, counterclockwise in
    y-down screen coordinates."""
    pts = np.unique(np.asarray(points, dtype=np.float64), axis=0)
    if len(pts) < 3:
        raise ValueError("hull needs >= 3 distinct points")
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]

    def build(seq):
        out: list[np.ndarray] = []
        for p in seq:
            while len(out) >= 2 and _orient(out[-2], out[-1], p) <= 0:
                out.pop()
            out.append(p)
        return out

    lower = build(pts)
    upper = build(pts[::-1])
    return np.array(lower[:-1] + upper[:-1])
