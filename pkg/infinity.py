import logging
from dataclasses import dataclass, field as dc_field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial import cKDTree
from shapely.geometry import LineString

from checks import INFO, CheckResult, LaboratoryError, combine, verdict
from eigensolver import GroundState
from fields import GridSpec, ScalarField, level_curves, log_field
from geometry import HighRidge, Polygon, ray_exit_distance

logger = logging.getLogger(__name__)

DIRECTIONS = ((1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (-1, -1), (1, -1), (-1, 1))
AXIS_REACH = 3
DIAGONAL_REACH = 2
DEFAULT_TOL = 1e-10
DEFAULT_MAX_SWEEPS = 5000


class InfinityError(LaboratoryError):
    pass


class LadderTooShort(InfinityError):
    pass


class GridMismatch(InfinityError):
    pass


@dataclass
class PotentialSolution:
    field: Optional[ScalarField] = None
    sweeps: int = 0
    residual: float = float("nan")
    stencil_radius: float = float("nan")
    converged: bool = False
    flags: List[str] = dc_field(default_factory=list)
    history: List[Tuple[int, float]] = dc_field(default_factory=list)
    constrained: Optional[np.ndarray] = None


@dataclass
class GroundLimit:
    u: Optional[ScalarField] = None
    v: Optional[ScalarField] = None
    v_top: Optional[ScalarField] = None
    p_used: float = float("nan")
    richardson_gap: float = float("nan")
    extrapolated: bool = False
    flags: List[str] = dc_field(default_factory=list)


def midrange_update(values: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    """Value balancing the steepest ascent and descent slopes over the rays.

    values, lengths: (..., m) ray endpoint values and ray lengths. Returns
    min_i max_j (l_i v_j + l_j v_i) / (l_i + l_j), which is the plain midrange
    (max + min) / 2 when all lengths agree.
    """
    vi, vj = values[..., :, None], values[..., None, :]
    li, lj = lengths[..., :, None], lengths[..., None, :]
    pair = (li * vj + lj * vi) / (li + lj)
    return pair.max(axis=-1).min(axis=-1)


def ridge_constraint(grid: GridSpec, ridge: HighRidge) -> Tuple[np.ndarray, np.ndarray]:
    """Constrained-node mask and the pinned value 1 on it."""
    x, y = grid.mesh
    pts = np.column_stack([x.ravel(), y.ravel()])
    dist = ridge.distance(pts).reshape(grid.ny, grid.nx)
    mask = grid.inside_mask & (dist <= 0.5 * grid.h * (1.0 + 1e-9))
    if ridge.is_point or not mask.any():
        centre = ridge.endpoints.mean(axis=0)
        fx = (centre[0] - grid.origin[0]) / grid.h
        fy = (centre[1] - grid.origin[1]) / grid.h
        i0, j0 = int(np.floor(fx)), int(np.floor(fy))
        near_i = abs(fx - round(fx)) <= 1e-9
        near_j = abs(fy - round(fy)) <= 1e-9
        cell = np.zeros_like(mask)
        if near_i and near_j:
            cell[int(round(fy)), int(round(fx))] = True
        else:
            cell[j0:j0 + 2, i0:i0 + 2] = True
        mask = mask | (cell & grid.inside_mask)
    values = np.where(mask, 1.0, np.nan)
    return mask, values


class MidrangeStencil:
    """Clipped 8-direction rays for every free node of a grid."""

    def __init__(self, grid: GridSpec, fixed: np.ndarray, evaluate: Optional[np.ndarray] = None):
        self.grid = grid
        self.sentinel = grid.nx * grid.ny
        free = grid.inside_mask & ~fixed if evaluate is None else evaluate
        self.free_j, self.free_i = np.nonzero(free)
        count = len(self.free_j)
        self.targets = np.empty((count, len(DIRECTIONS)), dtype=int)
        self.lengths = np.empty((count, len(DIRECTIONS)))
        pts = np.column_stack([grid.xs[self.free_i], grid.ys[self.free_j]])

        for k, (di, dj) in enumerate(DIRECTIONS):
            reach = AXIS_REACH if di == 0 or dj == 0 else DIAGONAL_REACH
            unit = grid.h * np.hypot(di, dj)
            exit_t = ray_exit_distance(grid.polygon, pts, (di, dj))
            open_ray = np.ones(count, dtype=bool)
            for s in range(1, reach + 1):
                j = self.free_j + s * dj
                i = self.free_i + s * di
                in_grid = (j >= 0) & (j < grid.ny) & (i >= 0) & (i < grid.nx)
                jc, ic = np.clip(j, 0, grid.ny - 1), np.clip(i, 0, grid.nx - 1)
                node_in = in_grid & grid.inside_mask[jc, ic]
                node_fixed = node_in & fixed[jc, ic]

                hits_boundary = open_ray & ~node_in
                self.targets[hits_boundary, k] = self.sentinel
                self.lengths[hits_boundary, k] = np.clip(exit_t[hits_boundary], 1e-12 * grid.h, s * unit)

                stops = open_ray & node_in & (node_fixed | (s == reach))
                self.targets[stops, k] = jc[stops] * grid.nx + ic[stops]
                self.lengths[stops, k] = s * unit
                open_ray &= ~(hits_boundary | stops)

        colour = (self.free_i % 4) * 4 + (self.free_j % 4)
        self.colours = [np.nonzero(colour == c)[0] for c in range(16)]
        self.flat = self.free_j * grid.nx + self.free_i
        self.radius = AXIS_REACH * grid.h

    def update(self, full: np.ndarray, rows: np.ndarray) -> np.ndarray:
        return midrange_update(full[self.targets[rows]], self.lengths[rows])


def _extended(values: np.ndarray, datum: float) -> np.ndarray:
    flat = np.where(np.isfinite(values), values, datum).ravel()
    return np.append(flat, datum)


def solve_infinity_potential(polygon: Polygon, ridge: HighRidge, grid: GridSpec, tol: float = DEFAULT_TOL,
                             max_sweeps: int = DEFAULT_MAX_SWEEPS,
                             init: Optional[ScalarField] = None) -> PotentialSolution:
    if grid.polygon is not polygon:
        logger.debug(f"potential grid belongs to {grid.polygon.name}, solving on it")
    fixed, fixed_values = ridge_constraint(grid, ridge)
    stencil = MidrangeStencil(grid, fixed)

    if init is None:
        start = np.minimum(1.0, ridge.lambda_inf * grid.node_distances)
    else:
        start = np.array(init.values, dtype=float)
    start = np.where(fixed, fixed_values, start)
    full = _extended(start, 0.0)

    solution = PotentialSolution(stencil_radius=stencil.radius)
    change = np.inf
    sweep = 0
    for sweep in range(1, max_sweeps + 1):
        change = 0.0
        for rows in stencil.colours:
            if not len(rows):
                continue
            new = stencil.update(full, rows)
            idx = stencil.flat[rows]
            change = max(change, float(np.abs(new - full[idx]).max()))
            full[idx] = new
        if sweep % 50 == 0 or change < tol:
            solution.history.append((sweep, change))
            logger.debug(f"sweep {sweep}: sup change {change:.3e}")
        if change < tol:
            solution.converged = True
            break
    if not solution.converged:
        solution.flags.append("NotConverged")
        logger.warning(f"potential stopped after {max_sweeps} sweeps with sup change {change:.3e}")

    all_rows = np.arange(len(stencil.flat))
    residual = float(np.abs(stencil.update(full, all_rows) - full[stencil.flat]).max()) if len(all_rows) else 0.0
    values = full[:-1].reshape(grid.ny, grid.nx)
    solution.field = ScalarField(grid, np.clip(values, 0.0, 1.0), 0.0, "U")
    solution.sweeps = sweep
    solution.residual = residual
    solution.constrained = fixed
    logger.info(f"Potential on {polygon.name}: {sweep} sweeps, midrange residual {residual:.2e}")
    return solution


def extract_ground_limit(states: Sequence[GroundState], ridge: HighRidge, extrapolate: bool = False) -> GroundLimit:
    if len(states) < 2:
        raise LadderTooShort(f"need at least two rungs, got {len(states)}")
    top, prev = states[-1], states[-2]
    if not top.field.grid.same_as(prev.field.grid):
        raise GridMismatch("ladder rungs were solved on different grids")
    gap = float(np.abs(top.field.inner - prev.field.inner).max())

    limit = GroundLimit(p_used=top.p, richardson_gap=gap, extrapolated=extrapolate)
    u = top.field.with_values(top.field.values, label="u")
    if extrapolate:
        ext = np.maximum(2.0 * top.field.values - prev.field.values, 0.0)
        u = u.with_values(ext / np.nanmax(ext))
    limit.u = u
    limit.v = log_field(u)
    limit.v_top = log_field(top.field)

    tol = 10.0 * u.grid.h * ridge.lambda_inf
    on_ridge = u.interpolate(ridge.sample(5), check=False)
    if on_ridge.min() < 1.0 - tol:
        limit.flags.append("RidgeNotMaximal")
        logger.warning(f"u falls to {on_ridge.min():.4f} on the high ridge")
    logger.info(f"Ground limit from p={top.p:g}: richardson gap {gap:.4f}")
    return limit


def as_field(obj: Union[GroundLimit, PotentialSolution, ScalarField]) -> ScalarField:
    if isinstance(obj, GroundLimit):
        return obj.u
    if isinstance(obj, PotentialSolution):
        return obj.field
    return obj


def sandwich_check(limit, polygon: Polygon, ridge: HighRidge, tol: Optional[float] = None) -> CheckResult:
    u = as_field(limit)
    grid = u.grid
    tol = 10.0 * grid.h * ridge.lambda_inf if tol is None else tol
    pts = grid.node_points
    values = u.inner
    cone = np.maximum(0.0, 1.0 - ridge.lambda_inf * ridge.distance(pts))
    upper = ridge.lambda_inf * grid.node_distances[grid.inside_mask]
    below = float((cone - values).max())
    above = float((values - upper).max())
    worst = max(below, above)
    where_below = pts[int(np.argmax(cone - values))]
    where_above = pts[int(np.argmax(values - upper))]
    return CheckResult(
        name=f"sandwich[{u.label}]",
        status=verdict(worst <= tol),
        value=worst,
        threshold=tol,
        message=f"cone gap {below:.3g}, distance gap {above:.3g}",
        details={
            "cone_margin": below,
            "cone_worst_at": where_below,
            "distance_margin": above,
            "distance_worst_at": where_above,
        },
    )


@dataclass
class ResidualStats:
    sup: float = 0.0
    l1: float = 0.0
    nodes: int = 0
    worst_at: Optional[np.ndarray] = None


def _full_stencil_nodes(grid: GridSpec) -> np.ndarray:
    # nodes whose every ray ends on an inside node
    ok = grid.inside_mask.copy()
    for di, dj in DIRECTIONS:
        reach = AXIS_REACH if di == 0 or dj == 0 else DIAGONAL_REACH
        shifted = np.zeros_like(ok)
        j0, j1 = max(0, -reach * dj), grid.ny - max(0, reach * dj)
        i0, i1 = max(0, -reach * di), grid.nx - max(0, reach * di)
        shifted[j0:j1, i0:i1] = grid.inside_mask[j0 + reach * dj:j1 + reach * dj, i0 + reach * di:i1 + reach * di]
        ok &= shifted
    return ok


def residual_infinity_laplacian(field: ScalarField, exclusion: Optional[np.ndarray] = None) -> ResidualStats:
    """Midrange deviation u - U* at nodes whose stencil stays inside, minus an excluded node set."""
    grid = field.grid
    nodes = _full_stencil_nodes(grid)
    if exclusion is not None:
        nodes &= ~exclusion
    stencil = MidrangeStencil(grid, np.zeros_like(nodes), evaluate=nodes)
    full = _extended(field.values, field.boundary_value)
    rows = np.arange(len(stencil.flat))
    if not len(rows):
        return ResidualStats()
    dev = np.abs(full[stencil.flat] - stencil.update(full, rows))
    worst = int(np.argmax(dev))
    return ResidualStats(
        sup=float(dev.max()),
        l1=float(dev.sum() * grid.h ** 2),
        nodes=len(rows),
        worst_at=np.array([grid.xs[stencil.free_i[worst]], grid.ys[stencil.free_j[worst]]]),
    )


def residual_check(field: ScalarField, exclusion: Optional[np.ndarray] = None) -> CheckResult:
    stats = residual_infinity_laplacian(field, exclusion)
    tol = 10.0 * field.grid.h
    return CheckResult(
        name=f"infinity_laplacian_residual[{field.label}]",
        status=verdict(stats.sup < tol),
        value=stats.sup,
        threshold=tol,
        details={"l1": stats.l1, "nodes": stats.nodes, "worst_at": stats.worst_at},
    )


def exclusion_mask(grid: GridSpec, points: np.ndarray, radius: float, ridge: Optional[HighRidge] = None) -> np.ndarray:
    x, y = grid.mesh
    nodes = np.column_stack([x.ravel(), y.ravel()])
    mask = np.zeros(len(nodes), dtype=bool)
    if len(points):
        tree = cKDTree(np.asarray(points))
        mask = np.isfinite(tree.query(nodes, distance_upper_bound=radius)[0])
    if ridge is not None:
        mask |= ridge.distance(nodes) <= radius
    return mask.reshape(grid.ny, grid.nx)


def compare_u_U(limit: GroundLimit, potential: PotentialSolution) -> CheckResult:
    u, big_u = limit.u, potential.field
    if not u.grid.same_as(big_u.grid):
        raise GridMismatch("u and U live on different grids")
    diff = np.abs(u.values - big_u.values)
    diff[~u.grid.inside_mask] = -1.0
    j, i = np.unravel_index(int(np.argmax(diff)), diff.shape)
    return CheckResult(
        name="u_vs_U",
        status=INFO,
        value=float(diff[j, i]),
        message="sup |u - U| (finding only)",
        details={"location": [float(u.grid.xs[i]), float(u.grid.ys[j])]},
    )


def turning_angles(line: np.ndarray) -> np.ndarray:
    closed = len(line) > 3 and np.allclose(line[0], line[-1])
    pts = line[:-1] if closed else line
    a = np.diff(pts, axis=0)
    if closed:
        a = np.vstack([a, pts[0] - pts[-1]])
        b = np.roll(a, -1, axis=0)
    else:
        a, b = a[:-1], a[1:]
    cross = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
    dot = np.einsum("ij,ij->i", a, b)
    return np.arctan2(cross, dot)


def hull_gap(line: np.ndarray) -> float:
    """Hausdorff distance between a level polyline, closed by its chord, and its convex hull boundary."""
    if len(line) < 3:
        return 0.0
    ring = LineString(np.vstack([line, line[:1]]))
    hull = ring.convex_hull
    if hull.geom_type != "Polygon":
        return 0.0
    return float(hull.exterior.hausdorff_distance(ring))


def level_convexity_check(field: ScalarField, levels: Sequence[float] = (0.2, 0.4, 0.6, 0.8),
                          gap_factor: float = 1.0) -> CheckResult:
    tol = gap_factor * field.grid.h
    parts = []
    for c in levels:
        curves = level_curves(field, c)
        worst = max((hull_gap(line) for line in curves), default=0.0)
        parts.append(CheckResult(
            name=f"level_{c:g}",
            status=verdict(worst <= tol),
            value=worst,
            threshold=tol,
            details={"curves": len(curves)},
        ))
    return combine(f"level_convexity[{field.label}]", parts, "largest gap to the convex hull per level")
