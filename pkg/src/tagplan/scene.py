"""Planar scene model: polygons, navigable grid, tag placement options, visibility.

Everything here is 2D except :func:`tag_corners_world`, which lifts a tag
placement option to the four 3D corners of a vertical square marker.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, NamedTuple, Sequence

import numpy as np
import shapely
from shapely.geometry import LineString
from shapely.geometry import Polygon as ShapelyPolygon
from shapely.ops import split as shapely_split

# Relative scale-up of obstacle polygons before sampling tag anchors, so that
# anchors sit just outside the host surface.
SURFACE_EPS = 5e-5
DEFAULT_CELL_SIZE = 0.5
DEFAULT_D_RES = 0.3
TAG_CLEARANCE = 0.02

# Shewchuk's first-stage error bound for the 2D orientation determinant.
_ORIENT_ERRBOUND = (3.0 + 16.0 * np.finfo(float).eps) * np.finfo(float).eps


class SceneError(ValueError):
    """Invalid scene geometry."""


class DegenerateRoiWarning(UserWarning):
    """A region of interest vanished after removing no-fly zones and obstacles."""


def normalize_ccw(points) -> tuple[np.ndarray, bool]:
    """Return ``(vertices, reversed)`` with vertices in counter-clockwise order.

    A closing vertex equal to the first is dropped.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(pts) > 1 and np.array_equal(pts[0], pts[-1]):
        pts = pts[:-1]
    if len(pts) < 3:
        raise SceneError(f"polygon needs at least 3 vertices, got {len(pts)}")
    if _signed_area(pts) < 0:
        return pts[::-1].copy(), True
    return pts.copy(), False


def _signed_area(pts: np.ndarray) -> float:
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


@dataclass(frozen=True, eq=False)
class Polygon:
    """Simple polygon with counter-clockwise vertices (meters)."""

    vertices: np.ndarray

    def __post_init__(self):
        verts, _ = normalize_ccw(self.vertices)
        if abs(_signed_area(verts)) <= 0.0:
            raise SceneError("polygon has zero area")
        if not shapely.LinearRing(verts).is_simple:
            raise SceneError("polygon is self-intersecting")
        verts.setflags(write=False)
        object.__setattr__(self, "vertices", verts)

    @property
    def area(self) -> float:
        return _signed_area(self.vertices)

    @property
    def centroid(self) -> np.ndarray:
        pts = self.vertices
        x, y = pts[:, 0], pts[:, 1]
        xn, yn = np.roll(x, -1), np.roll(y, -1)
        cross = x * yn - xn * y
        a = cross.sum() / 2.0
        return np.array([((x + xn) * cross).sum(), ((y + yn) * cross).sum()]) / (6.0 * a)

    @property
    def diameter(self) -> float:
        d = self.vertices[:, None, :] - self.vertices[None, :, :]
        return float(np.sqrt((d**2).sum(-1)).max())

    def __len__(self) -> int:
        return len(self.vertices)

    def edge(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        n = len(self.vertices)
        return self.vertices[i % n], self.vertices[(i + 1) % n]

    def edges(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices, np.roll(self.vertices, -1, axis=0)

    def scaled(self, factor: float) -> "Polygon":
        c = self.centroid
        return Polygon(c + factor * (self.vertices - c))

    def to_shapely(self) -> ShapelyPolygon:
        return ShapelyPolygon(self.vertices)

    def contains(self, point) -> bool:
        """Strict interior test."""
        x, y = point
        return bool(shapely.contains_xy(self.to_shapely(), x, y))

    def bounds(self) -> tuple[float, float, float, float]:
        lo = self.vertices.min(axis=0)
        hi = self.vertices.max(axis=0)
        return float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])


@dataclass(frozen=True)
class Roi:
    polygon: Polygon
    importance: float = 1.0

    def __post_init__(self):
        if not self.importance >= 0:
            raise SceneError(f"ROI importance must be non-negative, got {self.importance}")


@dataclass(frozen=True)
class Scene:
    """One construction phase sliced at one flight altitude."""

    phase_id: int
    altitude: float
    obstacles: tuple[Polygon, ...] = ()
    rois: tuple[Roi, ...] = ()
    no_fly: tuple[Polygon, ...] = ()
    installable: tuple[tuple[int, int], ...] = ()
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if not self.altitude > 0:
            raise SceneError(f"altitude must be positive, got {self.altitude}")
        for k, (pi, ei) in enumerate(self.installable):
            if not 0 <= pi < len(self.obstacles) or not 0 <= ei < len(self.obstacles[pi]):
                raise SceneError(f"installable entry {k} ({pi}, {ei}) is out of range")
        shapes = [p.to_shapely() for p in self.obstacles]
        for i in range(len(shapes)):
            for j in range(i + 1, len(shapes)):
                if shapes[i].intersection(shapes[j]).area > 1e-9:
                    raise SceneError(f"obstacles {i} and {j} overlap")

    def obstacle_edges(self) -> tuple[np.ndarray, np.ndarray]:
        """Stacked ``(starts, ends)`` of every obstacle edge, each shape (E, 2)."""
        if not self.obstacles:
            empty = np.zeros((0, 2))
            return empty, empty
        a = np.concatenate([p.edges()[0] for p in self.obstacles])
        b = np.concatenate([p.edges()[1] for p in self.obstacles])
        return a, b


class GridCell(NamedTuple):
    center: tuple[float, float]
    size: float
    roi_index: int


@dataclass(frozen=True)
class TagOption:
    """Candidate tag location on a wall surface."""

    id: int
    anchor: tuple[float, float]
    normal: tuple[float, float]
    heights: tuple[float, ...] = ()
    feasible_phases: frozenset[int] = field(default_factory=frozenset)

    @property
    def tangent(self) -> np.ndarray:
        u, v = self.normal
        return np.array([-v, u])


class Slot(NamedTuple):
    """An (option, installation height) pair, independently selectable."""

    option: TagOption
    height: float


# ---------------------------------------------------------------- ROI handling


def _split_holes(poly: ShapelyPolygon, cell_size: float, origin) -> list[ShapelyPolygon]:
    """Split a polygon with holes into simple pieces with vertical cuts.

    Cut lines are placed on lattice cell boundaries when possible so that no
    cell center falls on a cut.
    """
    if not poly.interiors:
        return [poly]
    hole = ShapelyPolygon(poly.interiors[0])
    hx0, _, hx1, _ = hole.bounds
    ox = origin[0]
    k0 = math.floor((hx0 - ox) / cell_size) + 1
    x = ox + k0 * cell_size
    if not hx0 < x < hx1:
        # hole narrower than a cell: stay clear of the (at most one) center inside
        c = ox + (math.floor((hx0 - ox) / cell_size) + 0.5) * cell_size
        if not hx0 < c < hx1:
            c = ox + (math.floor((hx0 - ox) / cell_size) + 1.5) * cell_size
        if hx0 < c < hx1:
            x = 0.5 * (hx0 + c) if c - hx0 >= hx1 - c else 0.5 * (c + hx1)
        else:
            x = 0.5 * (hx0 + hx1)
    _, y0, _, y1 = poly.bounds
    cut = LineString([(x, y0 - 1.0), (x, y1 + 1.0)])
    out = []
    for piece in shapely_split(poly, cut).geoms:
        out.extend(_split_holes(piece, cell_size, origin))
    return out


def _polygons_of(geom) -> list[ShapelyPolygon]:
    if geom.is_empty:
        return []
    if geom.geom_type == "Polygon":
        return [geom]
    if hasattr(geom, "geoms"):
        out = []
        for g in geom.geoms:
            out.extend(_polygons_of(g))
        return out
    return []


def modified_rois(scene: Scene, cell_size: float = DEFAULT_CELL_SIZE) -> list[tuple[Polygon, int]]:
    """Navigable part of each ROI: ROI minus no-fly zones and obstacles.

    Returns simple CCW polygons tagged with the index of their source ROI.
    Pieces smaller than one grid cell are dropped; an ROI that vanishes
    entirely triggers a :class:`DegenerateRoiWarning`.
    """
    blockers = [p.to_shapely() for p in (*scene.no_fly, *scene.obstacles)]
    subtrahend = shapely.union_all(blockers) if blockers else None
    out: list[tuple[Polygon, int]] = []
    for idx, roi in enumerate(scene.rois):
        geom = roi.polygon.to_shapely()
        if subtrahend is not None:
            geom = geom.difference(subtrahend)
        pieces = []
        for poly in _polygons_of(geom):
            for simple in _split_holes(poly, cell_size, scene.origin):
                simple = shapely.set_precision(simple, 0.0)
                if simple.area < cell_size**2:
                    continue
                pieces.append(Polygon(np.asarray(simple.exterior.coords)))
        if not pieces:
            warnings.warn(
                f"ROI {idx} of phase {scene.phase_id} has no navigable area left",
                DegenerateRoiWarning,
                stacklevel=2,
            )
        out.extend((p, idx) for p in pieces)
    return out


def discretize_rois(
    polys: Sequence[tuple[Polygon, int]],
    cell_size: float = DEFAULT_CELL_SIZE,
    origin=(0.0, 0.0),
) -> list[GridCell]:
    """Cells of an origin-anchored lattice whose centers lie strictly inside a polygon."""
    if cell_size <= 0:
        raise ValueError("cell_size must be positive")
    cells: list[GridCell] = []
    ox, oy = origin
    for poly, roi_index in polys:
        x0, y0, x1, y1 = poly.bounds()
        i0 = math.floor((x0 - ox) / cell_size)
        i1 = math.ceil((x1 - ox) / cell_size)
        j0 = math.floor((y0 - oy) / cell_size)
        j1 = math.ceil((y1 - oy) / cell_size)
        ii, jj = np.meshgrid(np.arange(i0, i1), np.arange(j0, j1), indexing="xy")
        xs = ox + (ii.ravel() + 0.5) * cell_size
        ys = oy + (jj.ravel() + 0.5) * cell_size
        inside = shapely.contains_xy(poly.to_shapely(), xs, ys)
        for x, y in zip(xs[inside], ys[inside]):
            cells.append(GridCell((float(x), float(y)), float(cell_size), int(roi_index)))
    cells.sort(key=lambda c: (c.roi_index, c.center[1], c.center[0]))
    return cells


# --------------------------------------------------------------- tag options


def find_minimum_tag_distance(d_res: float, tag_sizes: Iterable[float]) -> float:
    return max(float(d_res), max(tag_sizes) + TAG_CLEARANCE)


def identify_tag_options(
    scene: Scene,
    d_res: float = DEFAULT_D_RES,
    tag_sizes: Sequence[float] = (0.23,),
    heights: Sequence[float] = (),
) -> list[TagOption]:
    """Sample tag anchors along every installable obstacle edge.

    Each host polygon is scaled by ``1 + SURFACE_EPS`` about its centroid and
    its installable edges are sampled every ``find_minimum_tag_distance``
    meters from the edge start. Samples closer than half the largest tag to an
    edge endpoint are discarded so tags never overhang the surface.
    """
    if d_res <= 0:
        raise ValueError("d_res must be positive")
    dist = find_minimum_tag_distance(d_res, tag_sizes)
    margin = max(tag_sizes) / 2.0
    by_poly: dict[int, list[int]] = {}
    for pi, ei in scene.installable:
        by_poly.setdefault(pi, []).append(ei)

    options: list[TagOption] = []
    for pi in sorted(by_poly):
        host = scene.obstacles[pi]
        scaled = host.scaled(1.0 + SURFACE_EPS)
        offset_floor = SURFACE_EPS * host.diameter * 1e-3
        for ei in sorted(set(by_poly[pi])):
            a, b = scaled.edge(ei)
            d = b - a
            length = float(np.hypot(*d))
            if length < max(tag_sizes):
                continue
            direction = d / length
            normal = np.array([direction[1], -direction[0]])
            ha, _ = host.edge(ei)
            n_samples = int(math.floor(length / dist + 1e-12)) + 1
            for k in range(n_samples):
                s = k * dist
                if s < margin or length - s < margin:
                    continue
                anchor = a + s * direction
                # non-convex hosts can pull an edge inward when scaled about the centroid
                off = float(np.dot(anchor - ha, normal))
                if off <= offset_floor:
                    anchor = anchor + (SURFACE_EPS * host.diameter - off) * normal
                options.append(
                    TagOption(
                        id=len(options),
                        anchor=(float(anchor[0]), float(anchor[1])),
                        normal=(float(normal[0]), float(normal[1])),
                        heights=tuple(float(h) for h in heights),
                        feasible_phases=frozenset({scene.phase_id}),
                    )
                )
    return options


def expand_to_heights(options: Sequence[TagOption], heights: Sequence[float]) -> list[Slot]:
    if not heights:
        raise ValueError("at least one installation height is required")
    return [Slot(o, float(h)) for o in options for h in heights]


def tag_corners_world(option: TagOption, height: float, size: float) -> np.ndarray:
    """Homogeneous corners (4x4, one per row) of a vertical square tag.

    Counter-clockwise as seen from the normal side, starting bottom-left.
    """
    if size <= 0:
        raise ValueError("tag size must be positive")
    ax, ay = option.anchor
    t = option.tangent
    h = size / 2.0
    out = np.ones((4, 4))
    for row, (side, up) in enumerate(((-1, -1), (1, -1), (1, 1), (-1, 1))):
        out[row, 0] = ax + side * h * t[0]
        out[row, 1] = ay + side * h * t[1]
        out[row, 2] = height + up * h
    return out


# ---------------------------------------------------------------- visibility


def _orient_exact(ax, ay, bx, by, cx, cy) -> int:
    ax, ay, bx, by, cx, cy = (Fraction(v) for v in (ax, ay, bx, by, cx, cy))
    det = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
    return (det > 0) - (det < 0)


def orientation(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Sign of the turn a→b→c (+1 left, -1 right, 0 collinear), exact.

    Broadcasts over leading dimensions of (..., 2) arrays. Uses a float filter
    and falls back to rational arithmetic when the float result is uncertain.
    """
    a, b, c = np.broadcast_arrays(np.asarray(a, float), np.asarray(b, float), np.asarray(c, float))
    left = (b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1])
    right = (b[..., 1] - a[..., 1]) * (c[..., 0] - a[..., 0])
    det = left - right
    sign = np.sign(det).astype(np.int8)
    unsure = np.abs(det) <= _ORIENT_ERRBOUND * (np.abs(left) + np.abs(right))
    if sign.ndim == 0:
        if unsure:
            return np.int8(_orient_exact(a[0], a[1], b[0], b[1], c[0], c[1]))
        return sign
    if np.any(unsure):
        for idx in zip(*np.nonzero(unsure)):
            sign[idx] = _orient_exact(a[idx][0], a[idx][1], b[idx][0], b[idx][1], c[idx][0], c[idx][1])
    return sign


def segments_clear(p, q, edge_a, edge_b) -> np.ndarray:
    """For each open segment (p_i, q_i), True iff it meets no closed edge.

    ``p`` and ``q`` have shape (N, 2); edges have shape (E, 2). Touching an edge
    or a vertex counts as blocked.
    """
    p = np.asarray(p, float).reshape(-1, 2)
    q = np.asarray(q, float).reshape(-1, 2)
    ea = np.asarray(edge_a, float).reshape(-1, 2)
    eb = np.asarray(edge_b, float).reshape(-1, 2)
    if len(ea) == 0 or len(p) == 0:
        return np.ones(len(p), dtype=bool)
    P, Q = p[:, None, :], q[:, None, :]
    A, B = ea[None, :, :], eb[None, :, :]
    o1 = orientation(P, Q, A)
    o2 = orientation(P, Q, B)
    o3 = orientation(A, B, P)
    o4 = orientation(A, B, Q)
    # crossing point strictly inside (p, q) and within the closed edge
    hit = (o3.astype(int) * o4 < 0) & (o1.astype(int) * o2 <= 0)
    collinear = (o1 == 0) & (o2 == 0)
    if np.any(collinear):
        d = np.broadcast_to(Q - P, collinear.shape + (2,))
        use_x = np.abs(d[..., 0]) >= np.abs(d[..., 1])
        comp = np.where(use_x, 0, 1)

        def proj(x):
            x = np.broadcast_to(x, collinear.shape + (2,))
            return np.take_along_axis(x, comp[..., None], axis=-1)[..., 0]

        pp, qq, aa, bb = proj(P), proj(Q), proj(A), proj(B)
        lo_pq, hi_pq = np.minimum(pp, qq), np.maximum(pp, qq)
        lo_ab, hi_ab = np.minimum(aa, bb), np.maximum(aa, bb)
        overlap = (lo_ab < hi_pq) & (hi_ab > lo_pq)
        hit |= collinear & overlap
    return ~hit.any(axis=1)


def line_of_sight(p, q, scene: Scene) -> bool:
    """True iff the open segment p→q crosses or touches no obstacle edge."""
    p = np.asarray(p, float)
    q = np.asarray(q, float)
    if np.array_equal(p, q):
        return True
    a, b = scene.obstacle_edges()
    return bool(segments_clear(p[None], q[None], a, b)[0])


# ---------------------------------------------------------- multi-phase merge


def merge_phase_options(per_phase: Sequence[Sequence[TagOption]], digits: int = 6) -> list[TagOption]:
    """Merge per-phase options into project-wide locations.

    Options with the same anchor and normal (rounded to ``digits``) in several
    phases share one location id; ``feasible_phases`` collects those phases.
    """
    merged: dict[tuple, TagOption] = {}
    for options in per_phase:
        for o in options:
            key = (
                round(o.anchor[0], digits),
                round(o.anchor[1], digits),
                round(o.normal[0], digits),
                round(o.normal[1], digits),
            )
            if key in merged:
                prev = merged[key]
                merged[key] = TagOption(
                    prev.id,
                    prev.anchor,
                    prev.normal,
                    tuple(sorted(set(prev.heights) | set(o.heights))),
                    prev.feasible_phases | o.feasible_phases,
                )
            else:
                merged[key] = TagOption(len(merged), o.anchor, o.normal, o.heights, o.feasible_phases)
    return sorted(merged.values(), key=lambda o: o.id)
