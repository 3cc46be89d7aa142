import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree
from shapely.geometry import MultiPoint, Polygon as ShapelyPolygon

from checks import FAIL, INFO, PASS, CheckResult, LaboratoryError, combine, verdict
from fields import ScalarField, log_field, ring_decrements, s_operator_many
from geometry import (
    HighRidge,
    Polygon,
    corner_bisector,
    diameter,
    is_mirror_symmetric,
    signed_boundary_distance,
    validate_polygon,
)
from infinity import GroundLimit, PotentialSolution, level_convexity_check
from streamlines import (
    JOINED_CURVE,
    REACHED_RIDGE,
    Streamline,
    StreamlineSuite,
    TraceConfig,
    arc_metrics,
    join_detection,
    trace,
    trace_suite,
)

logger = logging.getLogger(__name__)

REPORT_KEYS = (
    "eigenvalue_oracle",
    "lambda_limit",
    "gradient_upper_bound",
    "gradient_lower_bound",
    "log_concavity",
    "sandwich",
    "contact_confinement",
    "median_straightness",
    "arc_length",
    "speed_laws",
    "contact_capture",
    "gauss_flux",
    "quadrilateral_rule",
    "area_zero_trend",
    "potential_counterpart",
    "figure",
)
FINDING_KEYS = ("u_vs_U", "richardson_gap", "superharmonicity", "strange_situation", "infinity_residual")


class AnalysisError(LaboratoryError):
    pass


class ClearanceViolated(AnalysisError):
    pass


class QuadConstructionFailed(AnalysisError):
    pass


@dataclass
class ContactEstimate:
    epsilon: float = 0.05
    lambda_inf: float = float("nan")
    h: float = float("nan")
    delta0: float = float("nan")
    candidates: np.ndarray = field(default_factory=lambda: np.empty((0, 2)))
    s_values: np.ndarray = field(default_factory=lambda: np.empty(0))
    monotone: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=bool))
    ridge: Optional[HighRidge] = None
    hausdorff_to_attracting: float = float("nan")

    @property
    def selected(self) -> np.ndarray:
        return self.s_values <= self.lambda_inf * (1.0 + self.epsilon)

    @property
    def nodes(self) -> np.ndarray:
        return self.candidates[self.selected]

    @property
    def measure(self) -> float:
        return float(self.selected.sum() * self.h ** 2)

    @property
    def saturated(self) -> bool:
        return bool(len(self.s_values)) and bool(self.selected.all())

    def rethreshold(self, epsilon: float) -> "ContactEstimate":
        return replace(self, epsilon=epsilon, hausdorff_to_attracting=float("nan"))

    def distance(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        nodes = self.nodes
        if not len(nodes):
            return np.full(len(pts), np.inf)
        return cKDTree(nodes).query(pts)[0]

    def contains(self, points, margin: Optional[float] = None, ridge_clearance: float = 0.0) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        margin = np.sqrt(2.0) * self.h if margin is None else margin
        inside = self.distance(pts) <= margin
        if ridge_clearance > 0 and self.ridge is not None:
            inside |= self.ridge.distance(pts) <= ridge_clearance
        return inside


def boundary_zone_level(polygon: Polygon, lambda_inf: float) -> float:
    """Level c0 with log(1/c0) / (2 diam) > Lambda: below it the log-gradient exceeds Lambda."""
    return 0.5 * float(np.exp(-2.0 * diameter(polygon) * lambda_inf))


def contact_estimate(limit: GroundLimit, ridge: HighRidge, epsilon: float = 0.05,
                     radii: Optional[Sequence[float]] = None, k: int = 256) -> ContactEstimate:
    u, v = limit.u, limit.v
    grid = u.grid
    radii = tuple(radii) if radii else tuple(f * grid.h for f in (8.0, 6.0, 4.0, 3.0))
    c0 = boundary_zone_level(grid.polygon, ridge.lambda_inf)
    dist = grid.node_distances
    zone = grid.inside_mask & (np.where(grid.inside_mask, u.values, 0.0) >= c0)
    # clearance of the c0 level, before the ring radius filter
    delta0 = float(dist[zone].min()) if zone.any() else float("nan")
    keep = zone & (np.where(grid.inside_mask, dist, 0.0) >= max(radii) * (1.0 + 1e-9))
    x, y = grid.mesh
    candidates = np.column_stack([x[keep], y[keep]])

    sample = s_operator_many(v, candidates, radii, k)
    estimate = ContactEstimate(
        epsilon=epsilon,
        lambda_inf=ridge.lambda_inf,
        h=grid.h,
        delta0=delta0,
        candidates=candidates,
        s_values=sample.values,
        monotone=sample.monotone,
        ridge=ridge,
    )
    bad = int((~sample.monotone).sum())
    if bad:
        logger.debug(f"{bad} contact candidates have non-monotone ring sequences")
    logger.info(f"Contact estimate: {len(estimate.nodes)} nodes at eps={epsilon:g}, delta0={delta0:.4g}")
    return estimate


def densify(line: np.ndarray, spacing: float) -> np.ndarray:
    if len(line) < 2:
        return np.atleast_2d(line)
    out = [line[:1]]
    for a, b in zip(line[:-1], line[1:]):
        n = max(int(np.ceil(np.linalg.norm(b - a) / spacing)), 1)
        t = np.arange(1, n + 1)[:, None] / n
        out.append(a + t * (b - a))
    return np.vstack(out)


def _target_tree(curves: Sequence[Streamline], ridge: Optional[HighRidge], spacing: float) -> cKDTree:
    pts = [densify(c.points, spacing) for c in curves]
    if ridge is not None:
        pts.append(densify(ridge.endpoints, spacing))
    return cKDTree(np.vstack(pts))


def theorem1_check(contact: ContactEstimate, attracting: Sequence[Streamline], h: float,
                   seed_offset: Optional[float] = None) -> CheckResult:
    seed_offset = 3.0 * h if seed_offset is None else seed_offset
    tol = 4.0 * h + seed_offset
    nodes = contact.nodes
    if not len(nodes):
        return CheckResult(name="contact_confinement", status=INFO, threshold=tol, message="contact estimate is empty")
    dist = _target_tree(attracting, contact.ridge, 0.25 * h).query(nodes)[0]
    contact.hausdorff_to_attracting = float(dist.max())
    worst = nodes[int(np.argmax(dist))]
    return CheckResult(
        name="contact_confinement",
        status=verdict(dist.max() <= tol),
        value=float(dist.max()),
        threshold=tol,
        message="one-sided Hausdorff distance from contact nodes to the attracting curves",
        details={"nodes": len(nodes), "worst_at": worst, "epsilon": contact.epsilon},
    )


def attracting_reference_check(attracting: Sequence[Streamline], polygon: Polygon, ridge: HighRidge,
                               h: float) -> CheckResult:
    parts = []
    for s in attracting:
        j = int(s.name.split("-")[-1])
        corner = polygon.vertices[j]
        direction = corner_bisector(polygon, j)
        t = np.linspace(0.0, diameter(polygon), 4000)
        ray = corner + t[:, None] * direction
        target = ridge.nearest_point(ray[int(np.argmin(ridge.distance(ray)))])[0]
        reference = densify(np.array([corner, target]), 0.25 * h)
        dev = float(cKDTree(reference).query(s.points)[0].max())
        symmetric = is_mirror_symmetric(polygon, corner, direction)
        parts.append(CheckResult(
            name=s.name,
            status=verdict(dev <= 3.0 * h) if symmetric else INFO,
            value=dev,
            threshold=3.0 * h,
            details={"reference_end": target, "mirror_symmetric": symmetric},
        ))
    return combine("attracting_reference", parts, "distance of each attracting curve to its bisector segment")


def area_zero_trend(estimates: Mapping[float, ContactEstimate], eps_list: Sequence[float]) -> CheckResult:
    """Contact measure table over (h, eps); monotone in eps and in h within one cell quantum."""
    hs = sorted(estimates, reverse=True)
    eps_sorted = sorted(eps_list, reverse=True)
    table = {h: {e: estimates[h].rethreshold(e).measure for e in eps_sorted} for h in hs}
    ok_eps = all(
        table[h][a] >= table[h][b] for h in hs for a, b in zip(eps_sorted, eps_sorted[1:])
    )
    ok_h = all(
        table[fine][e] <= table[coarse][e] + coarse ** 2
        for coarse, fine in zip(hs, hs[1:]) for e in eps_sorted
    )
    saturated = any(estimates[h].rethreshold(e).saturated for h in hs for e in eps_sorted)
    rows = [{"h": h, "epsilon": e, "measure": table[h][e]} for h in hs for e in eps_sorted]
    return CheckResult(
        name="area_zero_trend",
        status=verdict(ok_eps and ok_h),
        value=float(table[hs[-1]][eps_sorted[-1]]),
        message="contact measure shrinks with eps and h" if ok_eps and ok_h else "contact measure is not monotone",
        details={"table": rows, "monotone_in_eps": ok_eps, "monotone_in_h": ok_h, "saturated": saturated},
        flags=["Saturated"] if saturated else [],
    )


def _project(u: ScalarField, x: np.ndarray, level: float, rounds: int = 3) -> np.ndarray:
    for _ in range(rounds):
        g = u.gradient(x, check=False)[0]
        n2 = float(g @ g)
        if n2 == 0:
            break
        x = x - (float(u.interpolate(x, check=False)[0]) - level) * g / n2
    return x


def march_level(u: ScalarField, start, level: float, goal, step: float, stop_radius: float,
                max_steps: int = 10000) -> np.ndarray:
    """Walk along {u = level} from start toward goal, re-projecting onto the level each step."""
    goal = np.asarray(goal, dtype=float)
    x = _project(u, np.asarray(start, dtype=float), level)
    points = [x]
    for _ in range(max_steps):
        gap = goal - x
        if np.linalg.norm(gap) <= stop_radius:
            break
        g = u.gradient(x, check=False)[0]
        n = np.hypot(*g)
        if n == 0:
            break
        tangent = np.array([-g[1], g[0]]) / n
        if tangent @ gap < 0:
            tangent = -tangent
        x = _project(u, x + min(step, float(np.linalg.norm(gap))) * tangent, level)
        if signed_boundary_distance(u.grid.polygon, x)[0] < 0:
            break
        points.append(x)
    return np.array(points)


def level_arc_sweep_check(limit: GroundLimit, contact: ContactEstimate, attracting: Sequence[Streamline],
                          h: float, extra_nodes: Optional[np.ndarray] = None) -> CheckResult:
    u = limit.u
    nodes = contact.nodes
    tree = _target_tree(attracting, contact.ridge, 0.25 * h)
    off = nodes[tree.query(nodes)[0] > 4.0 * h] if len(nodes) else nodes
    if extra_nodes is not None and len(extra_nodes):
        off = np.vstack([off, extra_nodes]) if len(off) else np.asarray(extra_nodes, dtype=float)
        nodes = np.vstack([nodes, extra_nodes]) if len(nodes) else np.asarray(extra_nodes, dtype=float)
    if not len(off):
        return CheckResult(name="level_arc_sweep", status=PASS, value=0.0, threshold=4.0 * h,
                           message="no contact nodes off the attracting curves")
    node_tree = cKDTree(nodes)
    worst = 0.0
    for z in off:
        level = float(u.interpolate(z, check=False)[0])
        goal = tree.data[tree.query(z)[1]]
        arc = march_level(u, z, level, goal, 0.5 * h, 2.0 * h)
        worst = max(worst, float(node_tree.query(arc)[0].max()))
    return CheckResult(
        name="level_arc_sweep",
        status=verdict(worst <= 4.0 * h),
        value=worst,
        threshold=4.0 * h,
        details={"off_curve_nodes": len(off)},
    )


def _ccw(quad: np.ndarray) -> np.ndarray:
    x, y = quad[:, 0], quad[:, 1]
    area = 0.5 * (np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))
    return quad if area >= 0 else quad[::-1]


def gauss_integral(field: ScalarField, quad, m: float, contact: Optional[ContactEstimate] = None,
                   clearance: Optional[float] = None) -> float:
    """Trapezoid flux of |grad f|^(m-2) grad f through a closed polyline, outward normals."""
    pts = np.asarray(quad, dtype=float)
    if np.allclose(pts[0], pts[-1]):
        pts = pts[:-1]
    pts = _ccw(pts)
    h = field.grid.h
    if clearance is not None:
        dense = densify(np.vstack([pts, pts[:1]]), 0.5 * h)
        if signed_boundary_distance(field.grid.polygon, dense).min() < clearance:
            raise ClearanceViolated("quadrilateral comes too close to the boundary")
        if contact is not None:
            if contact.distance(dense).min() < clearance:
                raise ClearanceViolated("quadrilateral comes too close to the contact set")
            if contact.ridge is not None and contact.ridge.distance(dense).min() < clearance:
                raise ClearanceViolated("quadrilateral comes too close to the high ridge")

    closed = np.vstack([pts, pts[:1]])
    total = 0.0
    for a, b in zip(closed[:-1], closed[1:]):
        seg = densify(np.array([a, b]), 0.5 * h)
        edge = b - a
        length = float(np.linalg.norm(edge))
        normal = np.array([edge[1], -edge[0]]) / length
        g = field.gradient(seg, check=False)
        mag = np.hypot(g[:, 0], g[:, 1])
        flux = mag ** (m - 2.0) * (g @ normal)
        steps = np.linalg.norm(np.diff(seg, axis=0), axis=1)
        total += float(np.sum(0.5 * (flux[:-1] + flux[1:]) * steps))
    return total


def random_quadrilaterals(limit: GroundLimit, contact: ContactEstimate, rng: np.random.Generator,
                          count: int = 20, attempts: int = 5000) -> List[np.ndarray]:
    u = limit.u
    polygon = u.grid.polygon
    h = u.grid.h
    clearance = 4.0 * h
    lo, hi = polygon.bounds
    size_cap = 0.25 * float(np.min(hi - lo))
    quads = []
    for _ in range(attempts):
        if len(quads) >= count:
            break
        centre = rng.uniform(lo, hi)
        radius = rng.uniform(4.0 * h, max(size_cap, 5.0 * h))
        angles = np.sort(rng.uniform(0.0, 2.0 * np.pi, 4))
        if np.diff(np.concatenate([angles, [angles[0] + 2 * np.pi]])).max() >= np.pi:
            continue
        radii = radius * rng.uniform(0.6, 1.0, 4)
        quad = centre + radii[:, None] * np.column_stack([np.cos(angles), np.sin(angles)])
        try:
            shape = validate_polygon(quad, "quad")
        except LaboratoryError:
            continue
        dense = densify(np.vstack([quad, quad[:1]]), 0.5 * h)
        if signed_boundary_distance(polygon, dense).min() < clearance:
            continue
        if len(contact.nodes) and np.any(signed_boundary_distance(shape, contact.nodes) > -clearance):
            continue
        if contact.ridge is not None and np.any(signed_boundary_distance(shape, contact.ridge.sample(16)) > -clearance):
            continue
        quads.append(shape.vertices)
    if len(quads) < count:
        logger.warning(f"only {len(quads)} admissible quadrilaterals found in {attempts} attempts")
    return quads


def gauss_flux_check(limit: GroundLimit, contact: ContactEstimate, rng: np.random.Generator,
                     count: int = 20, exponents: Sequence[float] = (2.0, 4.0, 8.0)) -> CheckResult:
    u = limit.u
    h = u.grid.h
    quads = random_quadrilaterals(limit, contact, rng, count)
    parts = []
    for m in exponents:
        rows = []
        for quad in quads:
            perimeter = float(np.linalg.norm(np.diff(np.vstack([quad, quad[:1]]), axis=0), axis=1).sum())
            tol = 10.0 * h * perimeter * contact.lambda_inf ** (m - 1.0)
            rows.append((gauss_integral(u, quad, m), tol))
        if not rows:
            parts.append(CheckResult(name=f"m={m:g}", status=INFO, message="no admissible quadrilateral"))
            continue
        value, tol = max(rows, key=lambda r: r[0] - r[1])
        parts.append(CheckResult(
            name=f"m={m:g}",
            status=verdict(all(v <= t for v, t in rows)),
            value=value,
            threshold=tol,
            details={"quads": len(rows)},
        ))
    result = combine("gauss_flux", parts, f"flux through {len(quads)} random admissible quadrilaterals")
    if len(quads) < count:
        result.flags.append("FewQuadrilaterals")
    return result


def level_point(u: ScalarField, curve: np.ndarray, level: float) -> Optional[np.ndarray]:
    vals = u.interpolate(curve, check=False)
    above = vals >= level
    if not above.any() or above[0]:
        return None
    i = int(np.argmax(above)) - 1
    t = (level - vals[i]) / (vals[i + 1] - vals[i])
    return curve[i] + t * (curve[i + 1] - curve[i])


@dataclass
class Quadrilateral:
    lower: np.ndarray = field(default_factory=lambda: np.empty((0, 2)))
    upper: np.ndarray = field(default_factory=lambda: np.empty((0, 2)))
    sides: Tuple[np.ndarray, np.ndarray] = ()
    levels: Tuple[float, float] = (float("nan"), float("nan"))

    @property
    def triangular(self) -> bool:
        return len(self.upper) == 1


def build_quadrilateral(u: ScalarField, s1: Streamline, s2: Streamline, c_low: float,
                        c_high: Optional[float] = None) -> Quadrilateral:
    """Region between two streamlines and two level arcs; c_high=None closes it at the meet of the curves."""
    h = u.grid.h

    def arc(level):
        a = level_point(u, s1.points, level)
        b = level_point(u, s2.points, level)
        if a is None or b is None:
            raise QuadConstructionFailed(f"level {level:.4g} does not cross both {s1.name} and {s2.name}")
        path = march_level(u, a, level, b, 0.5 * h, 0.5 * h)
        if np.linalg.norm(path[-1] - b) > 2.0 * h:
            raise QuadConstructionFailed(f"level arc {level:.4g} did not close between {s1.name} and {s2.name}")
        return np.vstack([path, b])

    lower = arc(c_low)
    if c_high is None:
        meet = join_detection(s1, s2, 2.0 * h)
        if meet is None:
            raise QuadConstructionFailed(f"{s1.name} and {s2.name} never meet")
        upper = meet.point[None]
        c_high = float(u.interpolate(meet.point, check=False)[0])
    else:
        upper = arc(c_high)

    def between(curve):
        vals = u.interpolate(curve, check=False)
        return curve[(vals >= c_low) & (vals <= c_high)]

    return Quadrilateral(lower=lower, upper=upper, sides=(between(s1.points), between(s2.points)),
                         levels=(c_low, c_high))


def _spaced_seeds(arc: np.ndarray, count: int, gap: float) -> np.ndarray:
    """Up to ``count`` interior points of ``arc``, consecutive picks more than ``gap`` apart."""
    inner = arc[1:-1]
    if count <= 0 or not len(inner):
        return inner[:0]
    picks = [inner[0]]
    for i in np.linspace(0, len(inner) - 1, min(count, len(inner))).astype(int)[1:]:
        if np.linalg.norm(inner[i] - picks[-1]) > gap:
            picks.append(inner[i])
    return np.array(picks)


def region_outline(quad: Quadrilateral) -> np.ndarray:
    s1, s2 = quad.sides
    return np.vstack([quad.lower, s2, quad.upper[::-1], s1[::-1]])


def region_meets_contact(quad: Quadrilateral, contact: ContactEstimate) -> bool:
    """True when the closed region holds a contact node."""
    nodes = contact.nodes
    outline = region_outline(quad)
    if not len(nodes) or len(outline) < 3:
        return False
    region = ShapelyPolygon(outline).buffer(0)
    return bool(region.intersects(MultiPoint([tuple(p) for p in nodes])))


def quadrilateral_verdicts(u: ScalarField, quad: Quadrilateral, cfg: TraceConfig, ridge: HighRidge,
                           test_seeds: int = 5, rel_tol: float = 0.05) -> CheckResult:
    h = u.grid.h
    lower_speed = np.hypot(*u.gradient(quad.lower, check=False).T)
    upper_speed = np.hypot(*u.gradient(quad.upper, check=False).T)
    tol = rel_tol * float(lower_speed.max())
    dominated = float(upper_speed.max() - lower_speed.max())
    parts = [CheckResult(name="upper_dominated", status=verdict(dominated <= tol), value=dominated, threshold=tol)]

    picks = _spaced_seeds(quad.lower, test_seeds, cfg.join_tol)
    tests = []
    for n, seed in enumerate(picks):
        line = trace(u, seed, cfg, ridge, name=f"quad-test-{n}")
        keep = line.values <= quad.levels[1]
        tests.append(line.truncated(max(int(keep.sum()) - 1, 0)))
    side_tree = cKDTree(np.vstack([quad.sides[0], quad.sides[1], quad.upper])) if len(quad.sides[0]) else None
    interior_meets = 0
    for i in range(len(tests)):
        for j in range(i + 1, len(tests)):
            meet = join_detection(tests[i], tests[j], cfg.join_tol, approach=True)
            if meet is None:
                continue
            near_side = side_tree is not None and side_tree.query(meet.point)[0] <= 2.0 * h
            if not near_side:
                interior_meets += 1
    parts.append(CheckResult(name="no_interior_meets", status=verdict(interior_meets == 0),
                             value=float(interior_meets), threshold=0.0, details={"tests": len(tests)}))

    if quad.triangular:
        parts.append(CheckResult(name="upper_monotone", status=PASS, value=0.0, threshold=tol,
                                 message="triangular rule: upper arc is a point"))
    else:
        drop = float((np.maximum.accumulate(upper_speed) - upper_speed).max())
        rise = float((upper_speed - np.minimum.accumulate(upper_speed)).max())
        defect = min(drop, rise)
        parts.append(CheckResult(name="upper_monotone", status=verdict(defect <= tol), value=defect, threshold=tol))
    return combine("triangular" if quad.triangular else "quadrilateral", parts)


def _side_position(polygon: Polygon, s: Streamline) -> Tuple[int, float]:
    best = (0, 0.0, np.inf)
    for k in range(polygon.n):
        a, b = polygon.side(k)
        e = b - a
        t = float(np.clip((s.seed - a) @ e / (e @ e), 0.0, 1.0))
        d = float(np.linalg.norm(a + t * e - s.seed))
        if d < best[2]:
            best = (k, t, d)
    return best[0], best[1]


def quadrilateral_rule_check(limit: GroundLimit, suite: StreamlineSuite, cfg: TraceConfig, ridge: HighRidge,
                             count: int = 5, contact: Optional[ContactEstimate] = None) -> CheckResult:
    u = limit.u
    polygon = u.grid.polygon
    rejected = 0

    def admissible(quad: Quadrilateral, name: str) -> bool:
        nonlocal rejected
        if contact is None or not region_meets_contact(quad, contact):
            return True
        rejected += 1
        logger.debug(f"skipped region {name}: it holds contact nodes")
        return False
    by_side: Dict[int, List[Tuple[float, Streamline]]] = {}
    for s in suite.non_attracting:
        k, t = _side_position(polygon, s)
        by_side.setdefault(k, []).append((t, s))

    candidates = []
    for k in sorted(by_side):
        ordered = [s for _, s in sorted(by_side[k], key=lambda item: item[0])]
        candidates.extend(zip(ordered[:-1], ordered[1:]))

    parts = []
    for s1, s2 in candidates:
        if len(parts) >= count - 1:
            break
        top = min(float(u.interpolate(s1.end, check=False)[0]), float(u.interpolate(s2.end, check=False)[0]))
        try:
            quad = build_quadrilateral(u, s1, s2, 0.25 * top, 0.75 * top)
        except QuadConstructionFailed as e:
            logger.debug(f"skipped quadrilateral: {e}")
            continue
        if not admissible(quad, f"{s1.name}|{s2.name}"):
            continue
        result = quadrilateral_verdicts(u, quad, cfg, ridge)
        result.name = f"{s1.name}|{s2.name}"
        parts.append(result)

    attracting = {s.name: s for s in suite.attracting}
    for s in suite.non_attracting:
        if s.termination != JOINED_CURVE or s.joined is None or s.joined[0] not in attracting:
            continue
        gamma = attracting[s.joined[0]]
        top = float(u.interpolate(s.end, check=False)[0])
        try:
            quad = build_quadrilateral(u, s, gamma, 0.5 * top)
        except QuadConstructionFailed as e:
            logger.debug(f"skipped triangle: {e}")
            continue
        if not admissible(quad, f"{s.name}|{gamma.name}"):
            continue
        result = quadrilateral_verdicts(u, quad, cfg, ridge)
        result.name = f"{s.name}|{gamma.name}"
        parts.append(result)
        break
    result = combine("quadrilateral_rule", parts, f"{len(parts)} constructed regions")
    result.details["rejected_in_contact"] = rejected
    if rejected:
        result.flags.append("RegionMeetsContact")
    if not any(p.name.endswith(tuple(attracting)) for p in parts):
        result.flags.append("NoTriangularCase")
    return result


def arc_length_check(limit: GroundLimit, suite: StreamlineSuite, contact: ContactEstimate,
                     lambda_inf: float, rel_tol: float = 0.05, min_events: int = 10) -> CheckResult:
    identity_worst, length_worst, sign_changes = 0.0, 0.0, 0
    in_contact = 0
    metrics = {}
    for s in suite.non_attracting:
        if s.termination not in (JOINED_CURVE, REACHED_RIDGE):
            continue
        m = arc_metrics(s, limit)
        metrics[s.name] = {"S": m.length, "S_event": m.event_length, "ratio": m.ratio,
                           "sign_changes": m.curvature_sign_changes}
        sign_changes = max(sign_changes, m.curvature_sign_changes)
        if s.termination == JOINED_CURVE:
            identity_worst = max(identity_worst, abs(m.identity - 1.0))
        if contact.contains(m.event)[0]:
            in_contact += 1
            length_worst = max(length_worst, abs(m.event_length * lambda_inf - 1.0))

    parts = [
        CheckResult(name="ratio_times_length", status=verdict(identity_worst <= rel_tol) if metrics else INFO,
                    value=identity_worst, threshold=rel_tol),
        CheckResult(name="length_times_lambda", status=verdict(length_worst <= rel_tol) if in_contact else INFO,
                    value=length_worst, threshold=rel_tol, details={"events_in_contact": in_contact}),
        CheckResult(name="curvature_sign_changes", status=verdict(sign_changes == 0) if metrics else INFO,
                    value=float(sign_changes), threshold=0.0),
    ]
    result = combine("arc_length", parts)
    result.details["arcs"] = metrics
    if in_contact < min_events:
        result.flags.append("FewEvents")
    return result


def strange_situation_candidates(suite: StreamlineSuite, contact: ContactEstimate, ridge: HighRidge,
                                 h: float) -> CheckResult:
    found = []
    for gamma in suite.attracting:
        inside = contact.contains(gamma.points)
        if not inside.any():
            continue
        entry = gamma.points[int(np.argmax(inside))]
        if ridge.distance(entry)[0] <= 4.0 * h:
            continue
        feeders = [
            s.name for s in suite.non_attracting
            if s.joined is not None and s.joined[0] == gamma.name
            and contact.contains(s.joined[1])[0] and ridge.distance(s.joined[1])[0] > 4.0 * h
        ]
        if feeders:
            found.append({"curve": gamma.name, "entry": entry, "feeders": feeders})
    return CheckResult(name="strange_situation", status=INFO, value=float(len(found)),
                       message="attracting curves fed inside the contact region before the ridge",
                       details={"candidates": found})


def potential_contact_proxy(potential: PotentialSolution, ridge: HighRidge, gap: float = 0.25) -> np.ndarray:
    """Nodes where the ring decrement of U exceeds the local gradient: a kink indicator."""
    big_u = potential.field
    grid = big_u.grid
    r = 3.0 * grid.h
    keep = grid.inside_mask & (np.where(grid.inside_mask, grid.node_distances, 0.0) >= r * (1 + 1e-9))
    x, y = grid.mesh
    pts = np.column_stack([x[keep], y[keep]])
    if not len(pts):
        return pts
    ring = ring_decrements(big_u, pts, r)
    slope = big_u.gradient_magnitude[keep]
    return pts[ring - slope > gap * ridge.lambda_inf]


def potential_as_limit(potential: PotentialSolution) -> GroundLimit:
    big_u = potential.field
    return GroundLimit(u=big_u, v=log_field(big_u), v_top=log_field(big_u), p_used=float("inf"))


async def potential_counterpart_suite(potential: PotentialSolution, polygon: Polygon, ridge: HighRidge,
                                      cfg: TraceConfig, total: int = 20,
                                      suite: Optional[StreamlineSuite] = None) -> CheckResult:
    big_u = potential.field
    if suite is None:
        suite = await trace_suite(potential_as_limit(potential), polygon, ridge, cfg, total=total)
    h = big_u.grid.h

    parts = [
        attracting_reference_check(suite.attracting, polygon, ridge, h),
        combine("medians", suite.straightness),
        level_convexity_check(big_u),
    ]
    proxy = potential_contact_proxy(potential, ridge)
    if len(proxy):
        dist = _target_tree(suite.attracting, ridge, 0.25 * h).query(proxy)[0]
        parts.append(CheckResult(name="kink_confinement", status=INFO, value=float(dist.max()),
                                 threshold=7.0 * h, details={"nodes": len(proxy)}))
    else:
        parts.append(CheckResult(name="kink_confinement", status=INFO, message="no kink nodes detected"))
    result = combine("potential_counterpart", parts)
    result.details["streamlines"] = len(suite.all)
    return result


@dataclass
class VerificationReport:
    checks: Dict[str, CheckResult] = field(default_factory=dict)
    findings: Dict[str, CheckResult] = field(default_factory=dict)
    provenance: Dict[str, object] = field(default_factory=dict)

    @property
    def failed(self) -> List[str]:
        return [k for k, c in self.checks.items() if c.status == FAIL]

    @property
    def exit_code(self) -> int:
        return 1 if self.failed else 0

    def to_dict(self) -> Dict[str, object]:
        out: Dict[str, object] = {k: self.checks[k].to_dict() for k in REPORT_KEYS if k in self.checks}
        out.update({k: self.findings[k].to_dict() for k in FINDING_KEYS if k in self.findings})
        out["provenance"] = CheckResult(details=self.provenance).to_dict()["details"]
        return out

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2) + "\n"
        if path is not None:
            Path(path).parent.mkdir(parents=True, exist_ok=True)
            Path(path).write_text(text, encoding="utf-8")
        return text


def assemble_report(results: Mapping[str, CheckResult], provenance: Optional[Mapping[str, object]] = None,
                    keys: Sequence[str] = REPORT_KEYS) -> VerificationReport:
    report = VerificationReport(provenance=dict(provenance or {}))
    for key in keys:
        result = results.get(key)
        if result is None:
            result = CheckResult(name=key, status=INFO, message="not run")
        result.name = key
        report.checks[key] = result
    for key in FINDING_KEYS:
        if key in results:
            results[key].name = key
            report.findings[key] = results[key]
    for key in report.failed:
        logger.warning(f"check {key} failed: {report.checks[key].message}")
    infos = [k for k, c in report.checks.items() if c.status == INFO]
    if infos:
        logger.warning(f"checks reported INFO only: {', '.join(infos)}")
    return report
