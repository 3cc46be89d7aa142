import json
import logging
from dataclasses import dataclass
from functools import cached_property
from itertools import combinations
from pathlib import Path
from typing import Iterable, List, Sequence, Tuple

import numpy as np

from checks import InputError, LaboratoryError

logger = logging.getLogger(__name__)

REL_TOL = 1e-10
DUPLICATE_TOL = 1e-12


class GeometryError(LaboratoryError):
    pass


class NonConvex(InputError, GeometryError):
    pass


class TooFewVertices(InputError, GeometryError):
    pass


class DegenerateEdge(InputError, GeometryError):
    pass


class PolygonFileError(InputError, GeometryError):
    pass


class OutsideDomain(GeometryError):
    pass


class IndexOutOfRange(GeometryError, IndexError):
    pass


@dataclass(frozen=True, eq=False)
class Polygon:
    vertices: np.ndarray
    name: str = "polygon"

    @property
    def n(self) -> int:
        return len(self.vertices)

    @cached_property
    def edges(self) -> np.ndarray:
        return np.roll(self.vertices, -1, axis=0) - self.vertices

    @cached_property
    def normals(self) -> np.ndarray:
        """Outward unit normals, one per side P_k P_{k+1}."""
        e = self.edges
        nrm = np.stack([e[:, 1], -e[:, 0]], axis=1)
        return nrm / np.linalg.norm(nrm, axis=1)[:, None]

    @cached_property
    def offsets(self) -> np.ndarray:
        # inside <=> normals @ x <= offsets
        return np.einsum("ij,ij->i", self.normals, self.vertices)

    @cached_property
    def area(self) -> float:
        x, y = self.vertices[:, 0], self.vertices[:, 1]
        return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))

    @cached_property
    def perimeter(self) -> float:
        return float(np.linalg.norm(self.edges, axis=1).sum())

    @cached_property
    def scale(self) -> float:
        return float(np.ptp(self.vertices, axis=0).max())

    @property
    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def side(self, k: int) -> Tuple[np.ndarray, np.ndarray]:
        if not 0 <= k < self.n:
            raise IndexOutOfRange(f"side {k} out of range for {self.n} sides")
        return self.vertices[k], self.vertices[(k + 1) % self.n]

    def inward_normal(self, k: int) -> np.ndarray:
        self.side(k)
        return -self.normals[k]

    def contains(self, points, tol: float = 0.0) -> np.ndarray:
        return signed_boundary_distance(self, points) >= -tol

    def reversed(self) -> "Polygon":
        return Polygon(self.vertices[::-1].copy(), self.name)


@dataclass(frozen=True, eq=False)
class HighRidge:
    endpoints: np.ndarray
    inradius: float
    lambda_inf: float

    @property
    def is_point(self) -> bool:
        return bool(np.linalg.norm(self.endpoints[1] - self.endpoints[0]) <= REL_TOL * self.inradius)

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.endpoints[1] - self.endpoints[0]))

    def nearest_point(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        a, b = self.endpoints
        ab = b - a
        denom = float(ab @ ab)
        if denom == 0.0:
            return np.broadcast_to(a, pts.shape).copy()
        t = np.clip((pts - a) @ ab / denom, 0.0, 1.0)
        return a + t[:, None] * ab

    def distance(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return np.linalg.norm(pts - self.nearest_point(pts), axis=1)

    def sample(self, count: int) -> np.ndarray:
        t = np.linspace(0.0, 1.0, max(count, 1))
        return self.endpoints[0] + t[:, None] * (self.endpoints[1] - self.endpoints[0])


def validate_polygon(vertices: Iterable[Sequence[float]], name: str = "polygon") -> Polygon:
    pts = np.asarray(list(vertices), dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise DegenerateEdge(f"vertices must be 2D points, got shape {pts.shape}")
    if len(pts) < 3:
        raise TooFewVertices(f"need at least 3 vertices, got {len(pts)}")
    if not np.all(np.isfinite(pts)):
        raise DegenerateEdge("vertices must be finite")

    for a, b in combinations(range(len(pts)), 2):
        if np.linalg.norm(pts[a] - pts[b]) <= DUPLICATE_TOL:
            raise DegenerateEdge(f"vertices {a} and {b} coincide")

    x, y = pts[:, 0], pts[:, 1]
    signed_area = 0.5 * (np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))
    if signed_area < 0:
        pts = pts[::-1].copy()

    edges = np.roll(pts, -1, axis=0) - pts
    nxt = np.roll(edges, -1, axis=0)
    cross = edges[:, 0] * nxt[:, 1] - edges[:, 1] * nxt[:, 0]
    if np.any(cross <= 0.0):
        bad = int(np.argmin(cross))
        raise NonConvex(f"corner {(bad + 1) % len(pts)} is not strictly convex (cross={cross[bad]:.3g})")

    # strictly positive turns can still wind twice (star vertex order)
    turning = np.arctan2(cross, np.einsum("ij,ij->i", edges, nxt)).sum()
    if abs(turning - 2.0 * np.pi) > 1e-6:
        raise NonConvex(f"vertex order winds {turning / (2 * np.pi):.2f} times")

    return Polygon(pts, name)


def load_polygon(path) -> Polygon:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as e:
        raise PolygonFileError(f"cannot read polygon file {path}: {e}") from e
    if not isinstance(data, dict) or "vertices" not in data:
        raise PolygonFileError(f"{path}: expected an object with a 'vertices' list")
    try:
        vertices = [(float(p[0]), float(p[1])) for p in data["vertices"]]
    except (TypeError, ValueError, IndexError) as e:
        raise PolygonFileError(f"{path}: malformed vertex list: {e}") from e
    polygon = validate_polygon(vertices, str(data.get("name", path.stem)))
    logger.info(f"Loaded polygon {polygon.name} with {polygon.n} corners")
    return polygon


def signed_boundary_distance(polygon: Polygon, points) -> np.ndarray:
    """Distance to the nearest side line: positive inside, negative outside.

    Inside a convex polygon this equals the distance to the boundary.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    return np.min(polygon.offsets[None, :] - pts @ polygon.normals.T, axis=1)


def _segment_distances(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    t = np.clip(((points - a) @ ab) / float(ab @ ab), 0.0, 1.0)
    return np.linalg.norm(points - (a + t[:, None] * ab), axis=1)


def boundary_distances(polygon: Polygon, points) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    signed = signed_boundary_distance(polygon, pts)
    if np.any(signed < -REL_TOL * polygon.scale):
        worst = pts[int(np.argmin(signed))]
        raise OutsideDomain(f"point ({worst[0]:.6g}, {worst[1]:.6g}) is outside {polygon.name}")
    dist = np.full(len(pts), np.inf)
    for k in range(polygon.n):
        a, b = polygon.side(k)
        dist = np.minimum(dist, _segment_distances(pts, a, b))
    return dist


def boundary_distance(polygon: Polygon, x) -> float:
    return float(boundary_distances(polygon, x)[0])


def ray_exit_distance(polygon: Polygon, points, direction) -> np.ndarray:
    """Distance along a unit direction from interior points to the boundary."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    rate = polygon.normals @ d
    gap = polygon.offsets[None, :] - pts @ polygon.normals.T
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(rate[None, :] > 1e-15, gap / rate[None, :], np.inf)
    return np.maximum(t.min(axis=1), 0.0)


def _ridge_candidates(polygon: Polygon) -> List[Tuple[np.ndarray, float]]:
    normals, offsets = polygon.normals, polygon.offsets
    tol = REL_TOL * polygon.scale
    candidates = []

    # incentre candidates from side triples: n_k . x + r = c_k for three sides
    for tri in combinations(range(polygon.n), 3):
        a = np.column_stack([normals[list(tri)], np.ones(3)])
        if abs(np.linalg.det(a)) < 1e-12:
            continue
        x1, x2, r = np.linalg.solve(a, offsets[list(tri)])
        x = np.array([x1, x2])
        if r > 0 and np.all(normals @ x + r <= offsets + tol):
            candidates.append((x, float(r)))

    # parallel opposite sides: the mid-line is equidistant, the others cut it to a segment
    for i, j in combinations(range(polygon.n), 2):
        if normals[i] @ normals[j] > -1.0 + 1e-12:
            continue
        r = 0.5 * (offsets[i] + offsets[j])
        if r <= 0:
            continue
        base = normals[i] * (offsets[i] - r)
        tangent = np.array([-normals[i][1], normals[i][0]])
        lo, hi = -np.inf, np.inf
        feasible = True
        for m in range(polygon.n):
            if m in (i, j):
                continue
            rate = normals[m] @ tangent
            slack = offsets[m] - r - normals[m] @ base
            if abs(rate) < 1e-15:
                if slack < -tol:
                    feasible = False
                continue
            bound = slack / rate
            if rate > 0:
                hi = min(hi, bound)
            else:
                lo = max(lo, bound)
        if not feasible or lo > hi + tol or not np.isfinite(lo) or not np.isfinite(hi):
            continue
        candidates.append((base + lo * tangent, float(r)))
        candidates.append((base + hi * tangent, float(r)))
    return candidates


def chebyshev_set(polygon: Polygon) -> HighRidge:
    candidates = _ridge_candidates(polygon)
    if not candidates:
        raise GeometryError(f"no inscribed-ball candidate found for {polygon.name}")
    radius = max(r for _, r in candidates)
    optimal = np.array([x for x, r in candidates if r >= radius * (1.0 - REL_TOL)])

    # H is convex and at most one-dimensional: its hull is spanned by the farthest pair
    if len(optimal) == 1:
        a = b = optimal[0]
    else:
        gaps = np.linalg.norm(optimal[:, None, :] - optimal[None, :, :], axis=2)
        i, j = np.unravel_index(int(np.argmax(gaps)), gaps.shape)
        a, b = optimal[min(i, j)], optimal[max(i, j)]
        if tuple(a) > tuple(b):
            a, b = b, a
    ridge = HighRidge(np.array([a, b], dtype=float), radius, 1.0 / radius)
    logger.debug(f"High ridge of {polygon.name}: R={radius:.6g}, H={ridge.endpoints.tolist()}")
    return ridge


def corner_bisector(polygon: Polygon, j: int) -> np.ndarray:
    if not 0 <= j < polygon.n:
        raise IndexOutOfRange(f"corner {j} out of range for {polygon.n} corners")
    p = polygon.vertices[j]
    e1 = polygon.vertices[(j + 1) % polygon.n] - p
    e2 = polygon.vertices[j - 1] - p
    b = e1 / np.linalg.norm(e1) + e2 / np.linalg.norm(e2)
    return b / np.linalg.norm(b)


def diameter(polygon: Polygon) -> float:
    v = polygon.vertices
    return float(np.linalg.norm(v[:, None, :] - v[None, :, :], axis=2).max())


def reflect_across_line(points, origin, direction) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(points, dtype=float)) - origin
    d = np.asarray(direction, dtype=float) / np.linalg.norm(direction)
    along = (pts @ d)[:, None] * d
    return origin + 2.0 * along - pts


def is_mirror_symmetric(polygon: Polygon, origin, direction) -> bool:
    mirrored = reflect_across_line(polygon.vertices, origin, direction)
    gaps = np.linalg.norm(mirrored[:, None, :] - polygon.vertices[None, :, :], axis=2)
    return bool(np.all(gaps.min(axis=1) <= 1e-9 * polygon.scale))


def axis_aligned_rectangle(polygon: Polygon):
    """(width, height) if the polygon is an axis-aligned rectangle, else None."""
    if polygon.n != 4:
        return None
    e = polygon.edges
    if not np.all(np.isclose(np.min(np.abs(e), axis=1), 0.0, atol=1e-12 * polygon.scale)):
        return None
    width, height = np.ptp(polygon.vertices, axis=0)
    return float(width), float(height)
