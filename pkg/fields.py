import logging
from dataclasses import dataclass, field as dc_field
from functools import cached_property
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from shapely.geometry import Polygon as ShapelyPolygon, box

from checks import LaboratoryError
from geometry import (
    OutsideDomain,
    Polygon,
    boundary_distances,
    ray_exit_distance,
    signed_boundary_distance,
)

logger = logging.getLogger(__name__)

LABELS = ("u_p", "u", "v", "U", "aux")
U_FLOOR = 1e-12
MIN_INTERIOR_NODES = 9
DEFAULT_RADII_FACTORS = (8.0, 6.0, 4.0, 3.0)
DEFAULT_CIRCLE_SAMPLES = 256

EAST, WEST, NORTH, SOUTH = 0, 1, 2, 3
AXIS_STEPS = ((1, 0), (-1, 0), (0, 1), (0, -1))


class FieldError(LaboratoryError):
    pass


class ResolutionTooCoarse(FieldError):
    pass


class BallNotContained(FieldError):
    pass


class NonMonotoneSequence(FieldError):
    pass


class FieldInvariantError(FieldError):
    pass


class FieldDumpError(FieldError):
    pass


def _pair_slices(di: int, dj: int):
    """Slices (A, B) such that B is A shifted by (di, dj) on a [j, i] array."""
    def axis(d):
        if d == 1:
            return slice(0, -1), slice(1, None)
        if d == -1:
            return slice(1, None), slice(0, -1)
        return slice(None), slice(None)

    ai, bi = axis(di)
    aj, bj = axis(dj)
    return (aj, ai), (bj, bi)


@dataclass(frozen=True, eq=False)
class GridSpec:
    polygon: Polygon
    origin: np.ndarray
    h: float
    nx: int
    ny: int
    inside_mask: np.ndarray
    boundary_cut: np.ndarray
    cell_weights: np.ndarray

    @cached_property
    def xs(self) -> np.ndarray:
        return self.origin[0] + self.h * np.arange(self.nx)

    @cached_property
    def ys(self) -> np.ndarray:
        return self.origin[1] + self.h * np.arange(self.ny)

    @cached_property
    def mesh(self) -> Tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.xs, self.ys)

    @cached_property
    def node_points(self) -> np.ndarray:
        """Coordinates of the masked-inside nodes in row-major [j, i] order."""
        x, y = self.mesh
        return np.column_stack([x[self.inside_mask], y[self.inside_mask]])

    @cached_property
    def node_distances(self) -> np.ndarray:
        dist = np.full((self.ny, self.nx), np.nan)
        dist[self.inside_mask] = boundary_distances(self.polygon, self.node_points)
        return dist

    @cached_property
    def node_weights(self) -> np.ndarray:
        """Lumped nodal areas: a quarter of every adjacent cell area."""
        w = np.zeros((self.ny, self.nx))
        c = self.cell_weights / 4.0
        w[:-1, :-1] += c
        w[:-1, 1:] += c
        w[1:, :-1] += c
        w[1:, 1:] += c
        w[~self.inside_mask] = 0.0
        return w

    @property
    def interior_count(self) -> int:
        return int(self.inside_mask.sum())

    def same_as(self, other: "GridSpec") -> bool:
        return (
            self.nx == other.nx
            and self.ny == other.ny
            and self.h == other.h
            and np.array_equal(self.origin, other.origin)
            and np.array_equal(self.inside_mask, other.inside_mask)
        )


def rasterize(polygon: Polygon, h: float) -> GridSpec:
    if h <= 0:
        raise ResolutionTooCoarse(f"grid spacing must be positive, got {h}")
    lo, hi = polygon.bounds
    nx = int(np.ceil((hi[0] - lo[0]) / h - 1e-9)) + 1
    ny = int(np.ceil((hi[1] - lo[1]) / h - 1e-9)) + 1
    origin = lo.astype(float).copy()

    xs = origin[0] + h * np.arange(nx)
    ys = origin[1] + h * np.arange(ny)
    x, y = np.meshgrid(xs, ys)
    pts = np.column_stack([x.ravel(), y.ravel()])
    signed = signed_boundary_distance(polygon, pts).reshape(ny, nx)
    inside = signed > 1e-10 * polygon.scale

    count = int(inside.sum())
    if count < MIN_INTERIOR_NODES:
        raise ResolutionTooCoarse(f"h={h} leaves {count} interior nodes in {polygon.name}")

    cut = np.full((4, ny, nx), np.nan)
    inner = np.column_stack([x[inside], y[inside]])
    for k, (di, dj) in enumerate(AXIS_STEPS):
        neighbour_inside = np.zeros_like(inside)
        a, b = _pair_slices(di, dj)
        neighbour_inside[a] = inside[b]
        t = np.full((ny, nx), np.nan)
        t[inside] = ray_exit_distance(polygon, inner, (di, dj))
        has_cut = inside & ~neighbour_inside
        cut[k][has_cut] = np.clip(t[has_cut], 1e-12 * h, h)

    weights = np.full((ny - 1, nx - 1), h * h)
    corners_inside = inside[:-1, :-1] & inside[:-1, 1:] & inside[1:, :-1] & inside[1:, 1:]
    far_out = np.maximum.reduce([signed[:-1, :-1], signed[:-1, 1:], signed[1:, :-1], signed[1:, 1:]]) < -2.0 * h
    shape = ShapelyPolygon(polygon.vertices)
    for j, i in zip(*np.nonzero(~corners_inside)):
        if far_out[j, i]:
            weights[j, i] = 0.0
            continue
        weights[j, i] = shape.intersection(box(xs[i], ys[j], xs[i] + h, ys[j] + h)).area

    grid = GridSpec(polygon, origin, float(h), nx, ny, inside, cut, weights)
    ridge_radius = float(np.nanmax(np.where(inside, signed, np.nan)))
    if h >= ridge_radius / 8.0:
        logger.warning(f"h={h:.4g} is coarse for {polygon.name}: fewer than 8 cells across the inscribed radius")
    logger.debug(f"Rasterized {polygon.name}: {nx}x{ny} nodes, {count} inside, h={h:.6g}")
    return grid


@dataclass(frozen=True, eq=False)
class ScalarField:
    grid: GridSpec
    values: np.ndarray
    boundary_value: float = 0.0
    label: str = "aux"

    def __post_init__(self):
        if self.label not in LABELS:
            raise FieldInvariantError(f"unknown field label {self.label!r}")
        vals = np.array(self.values, dtype=float)
        if vals.shape != (self.grid.ny, self.grid.nx):
            raise FieldInvariantError(f"values shape {vals.shape} does not match grid {(self.grid.ny, self.grid.nx)}")
        vals[~self.grid.inside_mask] = np.nan
        inner = vals[self.grid.inside_mask]
        if not np.all(np.isfinite(inner)):
            raise FieldInvariantError(f"field {self.label} has non-finite interior values")
        if self.label in ("u_p", "u", "U") and (inner.min() < -1e-9 or inner.max() > 1.0 + 1e-9):
            raise FieldInvariantError(f"field {self.label} leaves [0, 1]: [{inner.min():.3g}, {inner.max():.3g}]")
        if self.label == "v" and inner.max() > 1e-9:
            raise FieldInvariantError(f"log field exceeds 0: {inner.max():.3g}")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_function(cls, grid: GridSpec, func: Callable, label: str = "aux", boundary_value: float = 0.0):
        x, y = grid.mesh
        vals = np.full((grid.ny, grid.nx), np.nan)
        vals[grid.inside_mask] = np.asarray(func(x[grid.inside_mask], y[grid.inside_mask]), dtype=float)
        return cls(grid, vals, boundary_value, label)

    def with_values(self, values: np.ndarray, label: Optional[str] = None) -> "ScalarField":
        return ScalarField(self.grid, values, self.boundary_value, label or self.label)

    @property
    def inner(self) -> np.ndarray:
        return self.values[self.grid.inside_mask]

    @property
    def sup(self) -> float:
        return float(self.inner.max())

    @cached_property
    def ghost(self) -> np.ndarray:
        """Node values with outside nodes extrapolated so edges hit the datum at the cut."""
        g = self.grid
        out = np.where(g.inside_mask, self.values, 0.0)
        acc = np.zeros_like(out)
        cnt = np.zeros_like(out)
        for k, (di, dj) in enumerate(AXIS_STEPS):
            a, b = _pair_slices(di, dj)
            cut = g.boundary_cut[k][a]
            ok = np.isfinite(cut)
            est = np.where(ok, out[a] + (self.boundary_value - out[a]) * g.h / np.where(ok, cut, 1.0), 0.0)
            acc[b] += est
            cnt[b] += ok
        ghost = np.where(cnt > 0, acc / np.maximum(cnt, 1), self.boundary_value)
        return np.where(g.inside_mask, out, ghost)

    @cached_property
    def node_gradients(self) -> np.ndarray:
        """(2, ny, nx) three-point differences; cut distances and the datum near the boundary."""
        g = self.grid
        u = np.where(g.inside_mask, self.values, 0.0)
        grads = np.zeros((2, g.ny, g.nx))
        for axis, (plus, minus) in enumerate(((EAST, WEST), (NORTH, SOUTH))):
            up, hp = self._neighbour(u, plus)
            um, hm = self._neighbour(u, minus)
            grads[axis] = (
                -hp / (hm * (hm + hp)) * um
                + (hp - hm) / (hm * hp) * u
                + hm / (hp * (hm + hp)) * up
            )
        grads[:, ~g.inside_mask] = np.nan
        return grads

    def _neighbour(self, u: np.ndarray, k: int) -> Tuple[np.ndarray, np.ndarray]:
        g = self.grid
        di, dj = AXIS_STEPS[k]
        a, b = _pair_slices(di, dj)
        nb = np.zeros_like(u)
        nb[a] = u[b]
        cut = g.boundary_cut[k]
        has_cut = np.isfinite(cut)
        values = np.where(has_cut, self.boundary_value, nb)
        spacing = np.where(has_cut, cut, g.h)
        return values, spacing

    @cached_property
    def ghost_gradients(self) -> np.ndarray:
        g = self.grid
        grads = np.where(g.inside_mask[None], self.node_gradients, 0.0)
        out = grads.copy()
        acc = np.zeros_like(grads)
        cnt = np.zeros(grads.shape[1:])
        for di, dj in AXIS_STEPS:
            a, b = _pair_slices(di, dj)
            src = g.inside_mask[a]
            acc[(slice(None),) + b] += np.where(src[None], grads[(slice(None),) + a], 0.0)
            cnt[b] += src
        fill = acc / np.maximum(cnt, 1)[None]
        return np.where(g.inside_mask[None], out, fill)

    @cached_property
    def gradient_magnitude(self) -> np.ndarray:
        return np.hypot(self.node_gradients[0], self.node_gradients[1])

    def check_inside(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        signed = signed_boundary_distance(self.grid.polygon, pts)
        if np.any(signed < -1e-10 * self.grid.polygon.scale):
            worst = pts[int(np.argmin(signed))]
            raise OutsideDomain(f"({worst[0]:.6g}, {worst[1]:.6g}) lies outside {self.grid.polygon.name}")
        return pts

    def interpolate(self, points, check: bool = True) -> np.ndarray:
        pts = self.check_inside(points) if check else np.atleast_2d(np.asarray(points, dtype=float))
        return _bilinear(self.grid, self.ghost, pts)

    def gradient(self, points, check: bool = True) -> np.ndarray:
        pts = self.check_inside(points) if check else np.atleast_2d(np.asarray(points, dtype=float))
        gg = self.ghost_gradients
        return np.column_stack([_bilinear(self.grid, gg[0], pts), _bilinear(self.grid, gg[1], pts)])


def _bilinear(grid: GridSpec, node_values: np.ndarray, pts: np.ndarray) -> np.ndarray:
    fx = (pts[:, 0] - grid.origin[0]) / grid.h
    fy = (pts[:, 1] - grid.origin[1]) / grid.h
    i0 = np.clip(np.floor(fx).astype(int), 0, grid.nx - 2)
    j0 = np.clip(np.floor(fy).astype(int), 0, grid.ny - 2)
    tx = np.clip(fx - i0, 0.0, 1.0)
    ty = np.clip(fy - j0, 0.0, 1.0)
    v = node_values
    return (
        (1 - tx) * (1 - ty) * v[j0, i0]
        + tx * (1 - ty) * v[j0, i0 + 1]
        + (1 - tx) * ty * v[j0 + 1, i0]
        + tx * ty * v[j0 + 1, i0 + 1]
    )


def interpolate(field: ScalarField, x) -> float:
    return float(field.interpolate(x)[0])


def gradient(field: ScalarField, x) -> np.ndarray:
    return field.gradient(x)[0]


def log_field(u: ScalarField) -> ScalarField:
    """v = log(u) with the floor u_floor; nodes with u <= 0 sit at the floor."""
    vals = np.log(np.maximum(np.where(u.grid.inside_mask, u.values, U_FLOOR), U_FLOOR))
    return ScalarField(u.grid, np.minimum(vals, 0.0), float(np.log(U_FLOOR)), "v")


def normalized(field: ScalarField) -> ScalarField:
    return field.with_values(field.values / field.sup)


def _circle(k: int) -> np.ndarray:
    theta = 2.0 * np.pi * np.arange(k) / k
    return np.column_stack([np.cos(theta), np.sin(theta)])


def ring_decrements(field: ScalarField, centers, r: float, k: int = DEFAULT_CIRCLE_SAMPLES,
                    chunk: int = 4096) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(centers, dtype=float))
    if k < 64:
        raise BallNotContained(f"ring needs at least 64 samples, got {k}")
    dist = boundary_distances(field.grid.polygon, pts)
    if np.any(dist < r * (1.0 - 1e-12)):
        worst = pts[int(np.argmin(dist))]
        raise BallNotContained(f"B_{r:.4g}(({worst[0]:.4g}, {worst[1]:.4g})) leaves the domain")
    circle = r * _circle(k)
    out = np.empty(len(pts))
    for start in range(0, len(pts), chunk):
        c = pts[start:start + chunk]
        centre_vals = _bilinear(field.grid, field.ghost, c)
        ring = (c[:, None, :] + circle[None, :, :]).reshape(-1, 2)
        ring_vals = _bilinear(field.grid, field.ghost, ring).reshape(len(c), k)
        out[start:start + chunk] = -np.min((ring_vals - centre_vals[:, None]) / r, axis=1)
    return out


def ring_decrement(field: ScalarField, x, r: float, k: int = DEFAULT_CIRCLE_SAMPLES) -> float:
    return float(ring_decrements(field, x, r, k)[0])


def default_radii(h: float) -> Tuple[float, ...]:
    return tuple(f * h for f in DEFAULT_RADII_FACTORS)


@dataclass
class SOperatorSample:
    values: np.ndarray = dc_field(default_factory=lambda: np.empty(0))
    monotone: np.ndarray = dc_field(default_factory=lambda: np.empty(0, dtype=bool))
    table: np.ndarray = dc_field(default_factory=lambda: np.empty((0, 0)))
    radii: Tuple[float, ...] = ()


def s_operator_many(field: ScalarField, centers, radii: Optional[Sequence[float]] = None,
                    k: int = DEFAULT_CIRCLE_SAMPLES, tol: float = 1e-3) -> SOperatorSample:
    radii = tuple(sorted(radii or default_radii(field.grid.h), reverse=True))
    if not np.asarray(centers, dtype=float).reshape(-1, 2).shape[0]:
        return SOperatorSample(np.empty(0), np.empty(0, dtype=bool), np.empty((0, len(radii))), radii)
    table = np.column_stack([ring_decrements(field, centers, r, k) for r in radii])
    # S_r decreases as r decreases: the next (smaller) radius may not exceed the previous
    rise = table[:, 1:] - table[:, :-1]
    monotone = np.all(rise <= tol * np.maximum(np.abs(table[:, :-1]), 1.0), axis=1)
    design = np.column_stack([np.ones(len(radii)), np.asarray(radii)])
    coef, *_ = np.linalg.lstsq(design, table.T, rcond=None)
    return SOperatorSample(coef[0], monotone, table, radii)


def s_operator(field: ScalarField, x, radii: Optional[Sequence[float]] = None,
               k: int = DEFAULT_CIRCLE_SAMPLES, tol: float = 1e-3) -> float:
    sample = s_operator_many(field, x, radii, k, tol)
    if not sample.monotone[0]:
        raise NonMonotoneSequence(
            f"S_r not decreasing with r at {np.atleast_2d(x)[0].tolist()}: {sample.table[0].round(6).tolist()}"
        )
    return float(sample.values[0])


@dataclass
class ConcavityReport:
    violations: int = 0
    pairs: int = 0
    worst_deficit: float = 0.0
    tol: float = 0.0
    seed: int = 0

    @property
    def rate(self) -> float:
        return self.violations / self.pairs if self.pairs else 0.0


def random_interior_points(polygon: Polygon, count: int, rng: np.random.Generator,
                           margin: float = 0.0) -> np.ndarray:
    lo, hi = polygon.bounds
    found: List[np.ndarray] = []
    total = 0
    while total < count:
        batch = rng.uniform(lo, hi, size=(max(2 * (count - total), 64), 2))
        keep = batch[signed_boundary_distance(polygon, batch) > margin]
        found.append(keep)
        total += len(keep)
    return np.concatenate(found)[:count]


def midpoint_concavity_violations(field: ScalarField, n_pairs: int, tol: float, seed: int = 0,
                                  margin: Optional[float] = None) -> ConcavityReport:
    rng = np.random.default_rng(seed)
    margin = field.grid.h if margin is None else margin
    x = random_interior_points(field.grid.polygon, n_pairs, rng, margin)
    y = random_interior_points(field.grid.polygon, n_pairs, rng, margin)
    mid = 0.5 * (x + y)
    deficit = 0.5 * (field.interpolate(x) + field.interpolate(y)) - field.interpolate(mid)
    bad = deficit > tol
    return ConcavityReport(
        violations=int(bad.sum()),
        pairs=n_pairs,
        worst_deficit=float(max(deficit.max(), 0.0)),
        tol=tol,
        seed=seed,
    )


def discrete_laplacian(field: ScalarField) -> np.ndarray:
    """Shortley-Weller five-point Laplacian at inside nodes (nan elsewhere)."""
    g = field.grid
    u = np.where(g.inside_mask, field.values, 0.0)
    lap = np.zeros_like(u)
    for plus, minus in ((EAST, WEST), (NORTH, SOUTH)):
        up, hp = field._neighbour(u, plus)
        um, hm = field._neighbour(u, minus)
        lap += 2.0 / (hp + hm) * ((up - u) / hp - (u - um) / hm)
    lap[~g.inside_mask] = np.nan
    return lap


def level_curves(field: ScalarField, level: float) -> List[np.ndarray]:
    """Marching squares on the (ghost-extended) node values, joined into polylines."""
    g = field.grid
    v = field.ghost
    above = v > level
    bl, br, tl, tr = above[:-1, :-1], above[:-1, 1:], above[1:, :-1], above[1:, 1:]
    mixed = ~((bl == br) & (br == tl) & (tl == tr))

    points: Dict[tuple, np.ndarray] = {}

    def crossing(key):
        if key not in points:
            kind, j, i = key
            j2, i2 = (j, i + 1) if kind == "h" else (j + 1, i)
            a, b = v[j, i], v[j2, i2]
            t = (level - a) / (b - a)
            p0 = np.array([g.xs[i], g.ys[j]])
            p1 = np.array([g.xs[i2], g.ys[j2]])
            points[key] = p0 + t * (p1 - p0)
        return key

    segments = []
    for j, i in zip(*np.nonzero(mixed)):
        edges = {
            "bottom": ("h", j, i),
            "right": ("v", j, i + 1),
            "top": ("h", j + 1, i),
            "left": ("v", j, i),
        }
        corner = {"bl": bl[j, i], "br": br[j, i], "tl": tl[j, i], "tr": tr[j, i]}
        cut = [
            name for name, (c1, c2) in (
                ("bottom", ("bl", "br")), ("right", ("br", "tr")),
                ("top", ("tl", "tr")), ("left", ("bl", "tl")),
            )
            if corner[c1] != corner[c2]
        ]
        if len(cut) == 2:
            segments.append((crossing(edges[cut[0]]), crossing(edges[cut[1]])))
        elif len(cut) == 4:
            centre_above = 0.25 * (v[j, i] + v[j, i + 1] + v[j + 1, i] + v[j + 1, i + 1]) > level
            isolated = {"bl": ("left", "bottom"), "br": ("bottom", "right"),
                        "tr": ("right", "top"), "tl": ("top", "left")}
            for name, (e1, e2) in isolated.items():
                if corner[name] != centre_above:
                    segments.append((crossing(edges[e1]), crossing(edges[e2])))
    return [np.array([points[k] for k in chain]) for chain in _join_segments(segments)]


def _join_segments(segments: List[tuple]) -> List[List[tuple]]:
    links: Dict[tuple, List[tuple]] = {}
    for a, b in segments:
        links.setdefault(a, []).append(b)
        links.setdefault(b, []).append(a)
    seen = set()
    chains = []

    def walk(start):
        chain = [start]
        seen.add(start)
        prev, cur = None, start
        while True:
            nxt = [n for n in links[cur] if n != prev and n not in seen]
            if not nxt:
                # close the loop when it returns to the start
                if prev is not None and start in links[cur] and len(chain) > 2:
                    chain.append(start)
                return chain
            prev, cur = cur, nxt[0]
            chain.append(cur)
            seen.add(cur)

    for key in sorted(links, key=lambda k: (len(links[k]) != 1, k)):
        if key not in seen:
            chains.append(walk(key))
    return chains


def write_field_dump(field: ScalarField, path) -> Path:
    g = field.grid
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"{g.nx} {g.ny} {g.h:.17g} {g.origin[0]:.17g} {g.origin[1]:.17g} {field.label}"]
    for row in field.values:
        lines.append(" ".join("nan" if not np.isfinite(x) else f"{x:.17g}" for x in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_field_dump(path, grid: GridSpec) -> ScalarField:
    path = Path(path)
    try:
        header, *rows = path.read_text(encoding="utf-8").strip().splitlines()
        nx, ny, h, ox, oy, label = header.split()
        values = np.array([[float(x) for x in row.split()] for row in rows])
    except (OSError, ValueError) as e:
        raise FieldDumpError(f"cannot parse field dump {path}: {e}") from e
    if (int(nx), int(ny)) != (grid.nx, grid.ny) or float(h) != grid.h or \
            (float(ox), float(oy)) != (grid.origin[0], grid.origin[1]):
        raise FieldDumpError(f"{path} was written for a different grid")
    boundary_value = float(np.log(U_FLOOR)) if label == "v" else 0.0
    return ScalarField(grid, values, boundary_value, label)
