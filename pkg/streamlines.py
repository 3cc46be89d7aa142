import asyncio
import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from checks import INFO, CheckResult, LaboratoryError, combine, verdict
from fields import ScalarField
from geometry import HighRidge, Polygon, boundary_distance, corner_bisector, signed_boundary_distance
from infinity import as_field, turning_angles

logger = logging.getLogger(__name__)

REACHED_RIDGE = "ReachedRidge"
JOINED_CURVE = "JoinedCurve"
SPEED_FLOOR = "SpeedFloor"
MAX_STEPS = "MaxSteps"
LEFT_DOMAIN = "LeftDomain"

ATTRACTING = "attracting"
MEDIAN = "median"
GENERIC = "generic"
INTERIOR = "interior"


class StreamlineError(LaboratoryError):
    pass


class StartOutside(StreamlineError):
    pass


class StartOnRidge(StreamlineError):
    pass


class SeedOutside(StreamlineError):
    pass


class NoEvent(StreamlineError):
    pass


@dataclass
class TraceConfig:
    h: float = 1.0 / 128
    step_factor: float = 0.5
    speed_floor: float = 1e-3
    max_steps: int = 100000
    max_halvings: int = 4
    seed_offset_factor: float = 3.0
    join_factor: float = 2.0
    speed_tol: float = 0.05
    straightness_factor: float = 3.0

    @property
    def step(self) -> float:
        return self.step_factor * self.h

    @property
    def join_tol(self) -> float:
        return self.join_factor * self.h

    @property
    def seed_offset(self) -> float:
        return self.seed_offset_factor * self.h


@dataclass
class Streamline:
    points: np.ndarray = field(default_factory=lambda: np.empty((0, 2)))
    params: np.ndarray = field(default_factory=lambda: np.empty(0))
    speeds: np.ndarray = field(default_factory=lambda: np.empty(0))
    values: np.ndarray = field(default_factory=lambda: np.empty(0))
    field_label: str = "u"
    name: str = ""
    kind: str = INTERIOR
    termination: str = MAX_STEPS
    joined: Optional[Tuple[str, np.ndarray]] = None
    switch_index: Optional[int] = None
    flags: List[str] = field(default_factory=list)

    @property
    def seed(self) -> np.ndarray:
        return self.points[0]

    @property
    def end(self) -> np.ndarray:
        return self.points[-1]

    @property
    def arc_length(self) -> float:
        return float(np.linalg.norm(np.diff(self.points, axis=0), axis=1).sum())

    def truncated(self, index: int) -> "Streamline":
        keep = slice(0, index + 1)
        return Streamline(
            points=self.points[keep],
            params=self.params[keep],
            speeds=self.speeds[keep],
            values=self.values[keep],
            field_label=self.field_label,
            name=self.name,
            kind=self.kind,
            termination=self.termination,
            joined=self.joined,
            switch_index=self.switch_index if self.switch_index is not None and self.switch_index <= index else None,
            flags=list(self.flags),
        )


def _rk4(f: ScalarField, x: np.ndarray, dt: float) -> np.ndarray:
    def g(p):
        return f.gradient(p, check=False)[0]

    k1 = g(x)
    k2 = g(x + 0.5 * dt * k1)
    k3 = g(x + 0.5 * dt * k2)
    k4 = g(x + dt * k3)
    return x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def trace(field: ScalarField, start, cfg: TraceConfig, ridge: HighRidge,
          fallback: Optional[ScalarField] = None,
          switch_region: Optional[Callable[[np.ndarray], np.ndarray]] = None,
          name: str = "", kind: str = INTERIOR) -> Streamline:
    polygon = field.grid.polygon
    x = np.asarray(start, dtype=float)
    tol = 1e-10 * polygon.scale
    if signed_boundary_distance(polygon, x)[0] < -tol:
        raise StartOutside(f"seed ({x[0]:.6g}, {x[1]:.6g}) lies outside {polygon.name}")
    if ridge.distance(x)[0] <= 1e-12 * polygon.scale:
        raise StartOnRidge(f"seed ({x[0]:.6g}, {x[1]:.6g}) lies on the high ridge")

    active = field
    speed_floor = cfg.speed_floor * ridge.lambda_inf
    ridge_tol = cfg.h
    points, params, speeds, values = [x], [0.0], [], []
    switch_index = None
    t = 0.0
    termination = MAX_STEPS
    value = float(active.interpolate(x, check=False)[0])
    for _ in range(cfg.max_steps):
        if fallback is not None and switch_index is None and switch_region is not None and switch_region(x[None])[0]:
            active = fallback
            switch_index = len(points) - 1
            value = float(active.interpolate(x, check=False)[0])
        grad = active.gradient(x, check=False)[0]
        speed = float(np.hypot(*grad))
        speeds.append(speed)
        values.append(value)
        if ridge.distance(x)[0] <= ridge_tol:
            termination = REACHED_RIDGE
            break
        if not np.isfinite(speed) or speed < speed_floor:
            termination = SPEED_FLOOR
            break
        ds = cfg.step
        new = None
        for _ in range(cfg.max_halvings + 1):
            dt = ds / speed
            trial = _rk4(active, x, dt)
            if signed_boundary_distance(polygon, trial)[0] < -tol:
                ds *= 0.5
                continue
            trial_value = float(active.interpolate(trial, check=False)[0])
            if trial_value > value:
                new = (trial, trial_value, dt)
                break
            ds *= 0.5
        if new is None:
            outside = signed_boundary_distance(polygon, _rk4(active, x, cfg.step / speed))[0] < -tol
            termination = LEFT_DOMAIN if outside else SPEED_FLOOR
            break
        x, value, dt = new
        t += dt
        points.append(x)
        params.append(t)
    else:
        # loop exhausted: close the speed/value arrays on the last point
        grad = active.gradient(x, check=False)[0]
        speeds.append(float(np.hypot(*grad)))
        values.append(value)

    line = Streamline(
        points=np.array(points),
        params=np.array(params),
        speeds=np.array(speeds),
        values=np.array(values),
        field_label=field.label,
        name=name,
        kind=kind,
        termination=termination,
        switch_index=switch_index,
    )
    if termination == LEFT_DOMAIN:
        line.flags.append(LEFT_DOMAIN)
        logger.warning(f"streamline {name or 'trace'} left the domain at {np.round(x, 5).tolist()}")
    return line


def corner_seed(polygon: Polygon, j: int, offset: float) -> np.ndarray:
    seed = polygon.vertices[j] + offset * corner_bisector(polygon, j)
    if signed_boundary_distance(polygon, seed)[0] <= 0:
        raise SeedOutside(f"corner {j} of {polygon.name} is too sharp for a seed offset of {offset:.3g}")
    return seed


def attracting_streamline(limit, polygon: Polygon, j: int, cfg: TraceConfig, ridge: HighRidge,
                          contact=None) -> Streamline:
    seed = corner_seed(polygon, j, cfg.seed_offset)
    switch = contact.contains if contact is not None else None
    line = trace(limit.v, seed, cfg, ridge, fallback=limit.v_top, switch_region=switch,
                 name=f"corner-{j}", kind=ATTRACTING)
    if line.termination != REACHED_RIDGE:
        line.flags.append("NotReachedRidge")
        logger.warning(f"attracting streamline from corner {j} stopped with {line.termination}")
    return line


@dataclass
class SideMax:
    side: int = 0
    point: Optional[np.ndarray] = None
    t: float = float("nan")
    speed: float = float("nan")
    profile: Optional[np.ndarray] = None
    unimodal_defect: float = 0.0
    flags: List[str] = field(default_factory=list)


def find_side_max(limit, polygon: Polygon, k: int, rel_tol: float = 0.05) -> SideMax:
    u = as_field(limit)
    h = u.grid.h
    a, b = polygon.side(k)
    length = float(np.linalg.norm(b - a))
    t = np.arange(0.0, length + 1e-12, 0.5 * h) / length
    inward = polygon.inward_normal(k)
    points = a + t[:, None] * (b - a) + h * inward
    keep = signed_boundary_distance(polygon, points) >= 0.5 * h * (1 - 1e-9)
    t, points = t[keep], points[keep]
    speeds = np.hypot(*u.gradient(points, check=False).T)
    top = int(np.argmax(speeds))

    rising = speeds[:top + 1]
    falling = speeds[top:]
    defect = max(
        float((np.maximum.accumulate(rising) - rising).max()) if len(rising) else 0.0,
        float((falling - np.minimum.accumulate(falling)).max()) if len(falling) else 0.0,
    )
    result = SideMax(
        side=k,
        point=a + t[top] * (b - a),
        t=float(t[top]),
        speed=float(speeds[top]),
        profile=np.column_stack([t, speeds]),
        unimodal_defect=defect,
    )
    if defect > rel_tol * speeds[top]:
        result.flags.append("NonUnimodal")
        logger.warning(f"|grad u| along side {k} is not unimodal (defect {defect:.3g})")
    return result


def chord_deviation(points: np.ndarray) -> float:
    a, b = points[0], points[-1]
    d = b - a
    norm = np.linalg.norm(d)
    if norm == 0:
        return float(np.linalg.norm(points - a, axis=1).max())
    rel = points - a
    return float(np.abs(rel[:, 0] * d[1] - rel[:, 1] * d[0]).max() / norm)


def median(limit, polygon: Polygon, k: int, cfg: TraceConfig, ridge: HighRidge,
           attracting: Sequence[Streamline] = ()) -> Tuple[Streamline, CheckResult]:
    side_max = find_side_max(limit, polygon, k)
    line = trace(as_field(limit), side_max.point, cfg, ridge, name=f"median-{k}", kind=MEDIAN)
    line.flags.extend(side_max.flags)
    line = truncate_at_first_join(line, attracting, cfg.join_tol, ridge)
    tol = cfg.straightness_factor * cfg.h
    deviation = chord_deviation(line.points)
    return line, CheckResult(
        name=f"median-{k}",
        status=verdict(deviation <= tol),
        value=deviation,
        threshold=tol,
        details={"seed": line.seed, "event": line.end, "termination": line.termination},
    )


@dataclass
class Meet:
    point: Optional[np.ndarray] = None
    params: Tuple[float, float] = (float("nan"), float("nan"))
    index: int = -1
    other_index: int = -1
    crossing: bool = False


def _side_of(b: Streamline, tree: cKDTree, pts: np.ndarray) -> np.ndarray:
    _, m = tree.query(pts)
    m = np.minimum(m, len(b.points) - 2)
    d = b.points[m + 1] - b.points[m]
    rel = pts - b.points[m]
    return np.sign(d[:, 0] * rel[:, 1] - d[:, 1] * rel[:, 0])


def join_detection(a: Streamline, b: Streamline, tol: float, approach: bool = False) -> Optional[Meet]:
    """First point of ``a`` within ``tol`` of ``b``.

    With ``approach`` a leading run of ``a`` that already lies within ``tol``
    of ``b`` (curves seeded side by side) is not a meet: ``a`` has to leave
    the band and come back.
    """
    if len(a.points) < 2 or len(b.points) < 2:
        return None
    tree = cKDTree(b.points)
    dist, nearest = tree.query(a.points, distance_upper_bound=tol)
    near = np.isfinite(dist)
    start = 0
    if approach:
        apart = np.nonzero(~near)[0]
        if not len(apart):
            return None
        start = int(apart[0])
    close = np.nonzero(near[start:])[0] + start
    if not len(close):
        return None
    ia = int(close[0])
    ib = int(nearest[ia])
    meet = Meet(point=a.points[ia], params=(float(a.params[ia]), float(b.params[ib])), index=ia, other_index=ib)

    before = a.points[:ia]
    after_idx = np.arange(ia, len(a.points))
    after = a.points[after_idx[~near[after_idx]]]
    if len(before) and len(after):
        side_before = _side_of(b, tree, before[-1:])[0]
        sides_after = _side_of(b, tree, after)
        meet.crossing = bool(side_before != 0 and np.any(sides_after == -side_before))
    if meet.crossing:
        logger.warning(f"{a.name} crosses {b.name} near {np.round(meet.point, 4).tolist()}")
    return meet


def ray_hit(origin, direction, path: np.ndarray, reach: float) -> Optional[np.ndarray]:
    """First point where origin + t * direction, 0 <= t <= reach, meets the polyline ``path``."""
    origin = np.asarray(origin, dtype=float)
    direction = np.asarray(direction, dtype=float)
    p, e = path[:-1], np.diff(path, axis=0)
    rel = p - origin
    denom = direction[0] * e[:, 1] - direction[1] * e[:, 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (rel[:, 0] * e[:, 1] - rel[:, 1] * e[:, 0]) / denom
        s = (rel[:, 0] * direction[1] - rel[:, 1] * direction[0]) / denom
    eps = 1e-9
    ok = np.isfinite(t) & (t >= -eps) & (t <= reach) & (s >= -eps) & (s <= 1.0 + eps)
    if not ok.any():
        return None
    return origin + max(float(t[ok].min()), 0.0) * direction


def nearest_on_path(x, path: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    p, e = path[:-1], np.diff(path, axis=0)
    ee = np.einsum("ij,ij->i", e, e)
    t = np.clip(np.einsum("ij,ij->i", x - p, e) / np.where(ee > 0, ee, 1.0), 0.0, 1.0)
    foot = p + t[:, None] * e
    return foot[int(np.argmin(np.linalg.norm(foot - x, axis=1)))]


def join_event(line: Streamline, other: Streamline, tol: float, ridge: Optional[HighRidge] = None) -> np.ndarray:
    """Where ``line``, cut ``tol`` short of ``other``, actually lands on it.

    The cut end is carried straight along its last direction onto the other
    polyline; an attracting curve that reached the ridge is closed off at
    the ridge first.
    """
    path = other.points
    if ridge is not None and other.termination == REACHED_RIDGE:
        path = np.vstack([path, ridge.nearest_point(other.end)])
    if len(path) < 2:
        return line.end
    if len(line.points) >= 2:
        d = line.points[-1] - line.points[-2]
        norm = float(np.linalg.norm(d))
        if norm > 0:
            hit = ray_hit(line.end, d / norm, path, 4.0 * tol)
            if hit is not None:
                return hit
    return nearest_on_path(line.end, path)


def truncate_at_first_join(line: Streamline, others: Sequence[Streamline], tol: float,
                           ridge: Optional[HighRidge] = None) -> Streamline:
    first: Optional[Tuple[Meet, Streamline]] = None
    for other in others:
        meet = join_detection(line, other, tol)
        if meet is not None and (first is None or meet.index < first[0].index):
            first = (meet, other)
    if first is None:
        return line
    meet, other = first
    cut = line.truncated(meet.index)
    cut.termination = JOINED_CURVE
    cut.joined = (other.name, join_event(cut, other, tol, ridge))
    if meet.crossing:
        cut.flags.append("CrossingDefect")
    return cut


def _running_drop(speeds: np.ndarray) -> float:
    if not len(speeds):
        return 0.0
    return float((np.maximum.accumulate(speeds) - speeds).max())


def _running_rise(speeds: np.ndarray) -> float:
    if not len(speeds):
        return 0.0
    return float((speeds - np.minimum.accumulate(speeds)).max())


def _off_region(s: Streamline, contact, ridge_clearance: float, polygon: Optional[Polygon] = None,
                collar: float = 0.0) -> np.ndarray:
    keep = np.ones(len(s.points), dtype=bool)
    if contact is not None:
        keep &= ~contact.contains(s.points, ridge_clearance=ridge_clearance)
    if polygon is not None and collar > 0:
        # boundary collar
        keep &= signed_boundary_distance(polygon, s.points) >= collar
    return keep


def speed_profile_checks(s: Streamline, contact=None, speed_tol: float = 0.05, h: float = 0.0,
                         polygon: Optional[Polygon] = None) -> CheckResult:
    off = _off_region(s, contact, 2.0 * h, polygon, 2.0 * h)
    speeds = s.speeds[off]
    top = float(s.speeds.max()) if len(s.speeds) else 0.0
    tol = speed_tol * top
    parts = []

    if s.field_label in ("u", "U", "u_p"):
        drop = _running_drop(speeds)
        parts.append(CheckResult(name="non_decreasing", status=verdict(drop <= tol), value=drop, threshold=tol))
    else:
        parts.append(CheckResult(name="non_decreasing", status=INFO, message="not a u-streamline"))

    if s.field_label == "v":
        rise = _running_rise(s.speeds)
        parts.append(CheckResult(name="non_increasing", status=verdict(rise <= tol), value=rise, threshold=tol))
    else:
        parts.append(CheckResult(name="non_increasing", status=INFO, message="not a fictitious streamline"))

    if s.kind != ATTRACTING and len(speeds):
        spread = float((speeds.max() - speeds.min()) / max(speeds.max(), 1e-300))
        parts.append(CheckResult(name="constant", status=verdict(spread <= speed_tol), value=spread,
                                 threshold=speed_tol))
    else:
        parts.append(CheckResult(name="constant", status=INFO, message="attracting curve"))
    return combine(f"speed[{s.name}]", parts)


def level_crossing_check(s: Streamline, levels: Sequence[float]) -> CheckResult:
    counts = {}
    ok = True
    for c in levels:
        sign = np.sign(s.values - c)
        sign = sign[sign != 0]
        n = int(np.count_nonzero(np.diff(sign)))
        counts[f"{c:g}"] = n
        outside_range = c < s.values[0] or c > s.values[-1]
        ok &= n == 1 or (n == 0 and outside_range)
    return CheckResult(
        name=f"level_crossings[{s.name}]",
        status=verdict(ok),
        value=float(max(counts.values(), default=0)),
        threshold=1.0,
        details=counts,
    )


def stability_check(field: ScalarField, x0, y0, T: float, cfg: TraceConfig, ridge: HighRidge,
                    rel_tol: float = 0.05) -> CheckResult:
    a = trace(field, x0, cfg, ridge, name="stability-a")
    b = trace(field, y0, cfg, ridge, name="stability-b")
    t_end = min(T, a.params[-1], b.params[-1])
    t = a.params[a.params <= t_end]
    pa = a.points[: len(t)]
    pb = np.column_stack([np.interp(t, b.params, b.points[:, 0]), np.interp(t, b.params, b.points[:, 1])])
    start_gap = float(np.linalg.norm(np.asarray(x0, float) - np.asarray(y0, float)))
    gaps = np.linalg.norm(pa - pb, axis=1)
    limit = start_gap * (1.0 + rel_tol) + 1e-12
    worst = float(gaps.max()) if len(gaps) else 0.0
    return CheckResult(
        name="stability",
        status=verdict(worst <= limit),
        value=worst,
        threshold=limit,
        details={"t_end": t_end, "start_gap": start_gap},
    )


@dataclass
class ArcMetrics:
    length: float = float("nan")
    ratio: float = float("nan")
    curvature_sign_changes: int = 0
    event: Optional[np.ndarray] = None
    event_length: float = float("nan")

    @property
    def identity(self) -> float:
        """ratio * S, which equals one along a straight stretch."""
        return self.ratio * self.length


def arc_metrics(s: Streamline, limit, event_index: Optional[int] = None) -> ArcMetrics:
    """Length and speed ratio at the last traced point; ``event_length`` runs on to the join event."""
    u = as_field(limit)
    polygon = u.grid.polygon
    projected = event_index is None and s.termination == JOINED_CURVE and s.joined is not None
    if event_index is None:
        if s.termination not in (JOINED_CURVE, REACHED_RIDGE):
            raise NoEvent(f"{s.name} ended with {s.termination}")
        event_index = len(s.points) - 1
    arc = s.points[: event_index + 1]
    stub = boundary_distance(polygon, arc[0])
    length = float(np.linalg.norm(np.diff(arc, axis=0), axis=1).sum()) + stub
    y = arc[-1]
    value = float(u.interpolate(y, check=False)[0])
    slope = float(np.hypot(*u.gradient(y, check=False)[0]))
    ratio = slope / value if value > 0 else float("inf")

    spacing = 2.0 * u.grid.h
    seg = np.linalg.norm(np.diff(arc, axis=0), axis=1)
    s_cum = np.concatenate([[0.0], np.cumsum(seg)])
    changes = 0
    if s_cum[-1] > 3 * spacing:
        grid_t = np.linspace(0.0, s_cum[-1], int(s_cum[-1] / spacing) + 1)
        coarse = np.column_stack([np.interp(grid_t, s_cum, arc[:, 0]), np.interp(grid_t, s_cum, arc[:, 1])])
        turns = turning_angles(coarse)
        noise = u.grid.h / max(length, u.grid.h)
        signs = np.sign(turns[np.abs(turns) >= noise])
        changes = int(np.count_nonzero(np.diff(signs)))
    event, event_length = y, length
    if projected:
        event = np.asarray(s.joined[1], dtype=float)
        event_length = length + float(np.linalg.norm(event - y))
    return ArcMetrics(length=length, ratio=ratio, curvature_sign_changes=changes, event=event,
                      event_length=event_length)


def capture_check(attracting: Sequence[Streamline], contact, h: float) -> CheckResult:
    parts = []
    for s in attracting:
        inside = contact.contains(s.points)
        if not inside.any():
            parts.append(CheckResult(name=s.name, status=INFO, message="never entered the contact region"))
            continue
        entry = int(np.argmax(inside))
        excursion = float(contact.distance(s.points[entry:]).max())
        parts.append(CheckResult(
            name=s.name,
            status=verdict(excursion <= 2.0 * h),
            value=excursion,
            threshold=2.0 * h,
            details={"entry": s.points[entry]},
        ))
    return combine("contact_capture", parts, "largest excursion after entering the contact region")


def dyadic_positions(count: int) -> List[float]:
    """Positions in (0, 1) along a side, coarse first, never the midpoint."""
    out: List[float] = []
    level = 2
    while len(out) < count:
        den = 2 ** level
        out.extend(k / den for k in range(1, den, 2))
        level += 1
    return out[:count]


@dataclass
class StreamlineSuite:
    attracting: List[Streamline] = field(default_factory=list)
    medians: List[Streamline] = field(default_factory=list)
    generic: List[Streamline] = field(default_factory=list)
    straightness: List[CheckResult] = field(default_factory=list)
    side_maxima: List[SideMax] = field(default_factory=list)
    flags: List[str] = field(default_factory=list)

    @property
    def all(self) -> List[Streamline]:
        return self.attracting + self.medians + self.generic

    @property
    def non_attracting(self) -> List[Streamline]:
        return self.medians + self.generic


async def trace_suite(limit, polygon: Polygon, ridge: HighRidge, cfg: TraceConfig, contact=None,
                      total: int = 20) -> StreamlineSuite:
    u = as_field(limit)
    suite = StreamlineSuite()
    corners = range(polygon.n)
    suite.attracting = list(await asyncio.gather(*[
        asyncio.to_thread(attracting_streamline, limit, polygon, j, cfg, ridge, contact) for j in corners
    ]))

    medians = await asyncio.gather(*[
        asyncio.to_thread(median, limit, polygon, k, cfg, ridge, suite.attracting) for k in range(polygon.n)
    ])
    suite.medians = [m for m, _ in medians]
    suite.straightness = [c for _, c in medians]

    spare = max(total - 2 * polygon.n, 0)
    per_side = [spare // polygon.n + (1 if k < spare % polygon.n else 0) for k in range(polygon.n)]
    seeds = []
    for k, count in enumerate(per_side):
        a, b = polygon.side(k)
        for m, t in enumerate(dyadic_positions(count)):
            seeds.append((f"generic-{k}-{m}", a + t * (b - a)))

    def generic(name, seed):
        line = trace(u, seed, cfg, ridge, name=name, kind=GENERIC)
        return truncate_at_first_join(line, suite.attracting, cfg.join_tol, ridge)

    suite.generic = list(await asyncio.gather(*[asyncio.to_thread(generic, n, s) for n, s in seeds]))
    for s in suite.all:
        suite.flags.extend(f"{s.name}:{f}" for f in s.flags)
    logger.info(f"Traced {len(suite.all)} streamlines on {polygon.name}")
    return suite


def write_streamline_csv(s: Streamline, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "x", "y", "speed", "value"])
        for t, (x, y), sp, val in zip(s.params, s.points, s.speeds, s.values):
            writer.writerow([f"{t:.12g}", f"{x:.12g}", f"{y:.12g}", f"{sp:.12g}", f"{val:.12g}"])
    return path


def write_manifest(lines: Sequence[Streamline], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    entries = []
    for s in lines:
        entries.append({
            "name": s.name,
            "kind": s.kind,
            "field": s.field_label,
            "seed": [float(v) for v in s.seed],
            "termination": s.termination,
            "joined": None if s.joined is None else {"curve": s.joined[0], "point": [float(v) for v in s.joined[1]]},
            "arc_length": s.arc_length,
            "flags": s.flags,
            "file": f"{s.name}.csv",
        })
    path.write_text(json.dumps(entries, indent=2) + "\n", encoding="utf-8")
    return path
