import asyncio
import json

import numpy as np
import pytest

from analysis import (
    REPORT_KEYS,
    ClearanceViolated,
    ContactEstimate,
    Quadrilateral,
    arc_length_check,
    area_zero_trend,
    assemble_report,
    attracting_reference_check,
    boundary_zone_level,
    build_quadrilateral,
    contact_estimate,
    gauss_flux_check,
    gauss_integral,
    level_arc_sweep_check,
    level_point,
    march_level,
    potential_contact_proxy,
    potential_counterpart_suite,
    quadrilateral_rule_check,
    quadrilateral_verdicts,
    random_quadrilaterals,
    region_meets_contact,
    strange_situation_candidates,
    theorem1_check,
)
from checks import FAIL, INFO, PASS, CheckResult
from fields import ScalarField, log_field, rasterize
from geometry import chebyshev_set, validate_polygon
from infinity import GroundLimit, PotentialSolution, solve_infinity_potential
from streamlines import (
    ATTRACTING,
    JOINED_CURVE,
    MEDIAN,
    Streamline,
    StreamlineSuite,
    TraceConfig,
    capture_check,
    trace,
    trace_suite,
    truncate_at_first_join,
)

SQUARE = validate_polygon([(0, 0), (1, 0), (1, 1), (0, 1)], "square")
RIDGE = chebyshev_set(SQUARE)
H = 1 / 32


@pytest.fixture(scope="module")
def grid():
    return rasterize(SQUARE, H)


@pytest.fixture(scope="module")
def dome_limit(grid):
    u = ScalarField.from_function(grid, lambda x, y: 1 - 2 * ((x - 0.5) ** 2 + (y - 0.5) ** 2), label="u")
    v = log_field(u)
    return GroundLimit(u=u, v=v, v_top=v, p_used=64.0)


@pytest.fixture(scope="module")
def sine_suite(grid):
    u = ScalarField.from_function(grid, lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y), label="u")
    v = log_field(u)
    limit = GroundLimit(u=u, v=v, v_top=v, p_used=64.0)
    return limit, asyncio.run(trace_suite(limit, SQUARE, RIDGE, TraceConfig(h=H), total=20))


def diagonals():
    lines = []
    for j, corner in enumerate(SQUARE.vertices):
        t = np.linspace(0.0, 1.0, 200)[:, None]
        pts = corner + t * (RIDGE.endpoints[0] - corner)
        lines.append(Streamline(points=pts, params=t[:, 0], name=f"corner-{j}", kind=ATTRACTING))
    return lines


def contact_at(points, s_values, h=H, epsilon=0.05):
    return ContactEstimate(
        epsilon=epsilon,
        lambda_inf=RIDGE.lambda_inf,
        h=h,
        candidates=np.asarray(points, dtype=float),
        s_values=np.asarray(s_values, dtype=float),
        monotone=np.ones(len(s_values), dtype=bool),
        ridge=RIDGE,
    )


def test_boundary_zone_level():
    assert boundary_zone_level(SQUARE, 2.0) == pytest.approx(0.5 * np.exp(-4 * np.sqrt(2)))


def test_contact_selection_and_measure():
    contact = contact_at([(0.3, 0.3), (0.4, 0.4), (0.3, 0.5)], [2.05, 2.2, 1.5])
    assert contact.selected.tolist() == [True, False, True]
    assert contact.measure == pytest.approx(2 * H ** 2)
    assert contact.rethreshold(0.2).selected.all()
    assert contact.rethreshold(0.2).saturated
    assert contact.contains([(0.3, 0.3 + H)])[0]
    assert not contact.contains([(0.45, 0.3)])[0]
    assert contact.contains([(0.45, 0.5)], ridge_clearance=0.06)[0]


def test_theorem1_check():
    near = contact_at([(0.2, 0.2), (0.7, 0.3)], [2.0, 2.0])
    assert theorem1_check(near, diagonals(), H).status == PASS
    far = contact_at([(0.2, 0.2), (0.5, 0.1)], [2.0, 2.0])
    result = theorem1_check(far, diagonals(), H)
    assert result.status == FAIL
    assert np.allclose(result.details["worst_at"], (0.5, 0.1))
    empty = contact_at([(0.5, 0.2)], [3.0])
    assert theorem1_check(empty, diagonals(), H).status == INFO


def test_attracting_reference_on_diagonals():
    result = attracting_reference_check(diagonals(), SQUARE, RIDGE, H)
    assert result.status == PASS
    assert result.value < 0.25 * H


def test_area_zero_trend():
    coarse = contact_at([(0.3, 0.3), (0.4, 0.4), (0.5, 0.4)], [2.0, 2.08, 2.15], h=2 * H)
    fine = contact_at([(0.3, 0.3), (0.35, 0.35)], [2.0, 2.15], h=H)
    result = area_zero_trend({2 * H: coarse, H: fine}, (0.1, 0.05, 0.025))
    assert result.status == PASS
    assert len(result.details["table"]) == 6
    grown = contact_at([(0.3, 0.3)] * 40, [2.0] * 40, h=H)
    assert area_zero_trend({2 * H: coarse, H: grown}, (0.1, 0.05)).status == FAIL


def test_gauss_integral_divergence(grid):
    bowl = ScalarField.from_function(grid, lambda x, y: x ** 2 + y ** 2)
    quad = np.array([(0.3, 0.3), (0.6, 0.3), (0.6, 0.6), (0.3, 0.6)])
    assert gauss_integral(bowl, quad, 2.0) == pytest.approx(4 * 0.09, rel=1e-9)
    assert gauss_integral(bowl, quad[::-1], 2.0) == pytest.approx(4 * 0.09, rel=1e-9)
    plane = ScalarField.from_function(grid, lambda x, y: 0.5 * x - 0.2 * y)
    assert gauss_integral(plane, quad, 4.0) == pytest.approx(0.0, abs=1e-12)


def test_gauss_integral_clearance(grid):
    plane = ScalarField.from_function(grid, lambda x, y: x)
    quad = np.array([(0.02, 0.3), (0.3, 0.3), (0.3, 0.6), (0.02, 0.6)])
    with pytest.raises(ClearanceViolated):
        gauss_integral(plane, quad, 2.0, clearance=4 * H)


def test_random_quadrilaterals_keep_clear(dome_limit):
    contact = contact_at([(0.5, 0.5)], [2.0])
    quads = random_quadrilaterals(dome_limit, contact, np.random.default_rng(1), count=10)
    assert len(quads) == 10
    for quad in quads:
        assert validate_polygon(quad).n == 4
        assert SQUARE.contains(quad, tol=-4 * H).all()
        assert not validate_polygon(quad).contains([(0.5, 0.5)])[0]


def test_gauss_flux_on_concave_dome(dome_limit):
    contact = contact_at([(0.5, 0.5)], [2.0])
    result = gauss_flux_check(dome_limit, contact, np.random.default_rng(0), count=8)
    assert result.status == PASS
    assert set(result.details) == {"m=2", "m=4", "m=8"}


def test_level_point_on_radial_segment(dome_limit):
    curve = np.column_stack([np.full(50, 0.5), np.linspace(0.05, 0.45, 50)])
    point = level_point(dome_limit.u, curve, 0.7)
    assert point[0] == pytest.approx(0.5)
    assert point[1] == pytest.approx(0.5 - np.sqrt(0.15), abs=0.01)
    assert level_point(dome_limit.u, curve, 0.999) is None


def test_quadrilateral_rule_on_first_mode(sine_suite):
    limit, suite = sine_suite
    result = quadrilateral_rule_check(limit, suite, TraceConfig(h=H), RIDGE, count=5)
    regions = {k: v for k, v in result.details.items() if k != "rejected_in_contact"}
    assert regions
    assert result.details["rejected_in_contact"] == 0
    for part in regions.values():
        assert part["details"]["upper_dominated"]["status"] == PASS


def test_strange_situation_is_a_finding(sine_suite):
    _, suite = sine_suite
    result = strange_situation_candidates(suite, contact_at([(0.5, 0.5)], [2.0]), RIDGE, H)
    assert result.status == INFO
    assert result.value == 0.0


def test_potential_counterpart_reports_all_parts():
    grid = rasterize(SQUARE, 1 / 16)
    potential = solve_infinity_potential(SQUARE, RIDGE, grid, tol=1e-8)
    result = asyncio.run(potential_counterpart_suite(potential, SQUARE, RIDGE, TraceConfig(h=1 / 16), total=12))
    assert set(result.details) >= {"attracting_reference", "medians", "level_convexity[U]", "kink_confinement"}
    assert result.details["streamlines"] == 12


def test_report_order_and_exit_code(tmp_path):
    results = {
        "sandwich": CheckResult(status=PASS, value=0.01, threshold=0.1),
        "figure": CheckResult(status=FAIL, message="renders differ"),
        "u_vs_U": CheckResult(status=INFO, value=0.03),
    }
    report = assemble_report(results, {"h": H})
    assert list(report.checks) == list(REPORT_KEYS)
    assert report.checks["lambda_limit"].status == INFO
    assert report.failed == ["figure"]
    assert report.exit_code == 1

    report.to_json(tmp_path / "report.json")
    data = json.loads((tmp_path / "report.json").read_text())
    assert list(data)[: len(REPORT_KEYS)] == list(REPORT_KEYS)
    assert data["u_vs_U"]["value"] == 0.03
    assert data["provenance"]["h"] == H


def test_report_passes_without_failures():
    report = assemble_report({"sandwich": CheckResult(status=PASS)})
    assert report.exit_code == 0


@pytest.fixture(scope="module")
def pyramid_limit(grid):
    u = ScalarField.from_function(
        grid, lambda x, y: 2 * np.minimum(np.minimum(x, 1 - x), np.minimum(y, 1 - y)), label="u"
    )
    v = log_field(u)
    return GroundLimit(u=u, v=v, v_top=v, p_used=64.0)


def vertical(x, name):
    ys = np.linspace(0.02, 0.98, 97)
    pts = np.column_stack([np.full_like(ys, x), ys])
    return Streamline(points=pts, params=ys - ys[0], name=name)


def test_contact_estimate_clearance_comes_from_the_zone_level(dome_limit):
    estimate = contact_estimate(dome_limit, RIDGE)
    radii_floor = 8 * H
    assert estimate.delta0 == pytest.approx(H)
    assert len(estimate.candidates) == len(estimate.s_values)
    assert estimate.candidates.size
    clearance = np.minimum(estimate.candidates, 1 - estimate.candidates).min()
    assert clearance >= radii_floor - 1e-12
    assert estimate.delta0 < clearance


def test_level_arc_sweep():
    grid = rasterize(SQUARE, 1 / 64)
    u = ScalarField.from_function(grid, lambda x, y: 1 - 2 * ((x - 0.5) ** 2 + (y - 0.5) ** 2), label="u")
    limit = GroundLimit(u=u, v=log_field(u), v_top=log_field(u), p_used=64.0)
    contact = contact_at([(0.3, 0.3), (0.7, 0.7)], [2.0, 2.0], h=1 / 64)
    clean = level_arc_sweep_check(limit, contact, diagonals(), 1 / 64)
    assert clean.status == PASS
    assert clean.value == 0.0
    stray = level_arc_sweep_check(limit, contact, diagonals(), 1 / 64, extra_nodes=np.array([(0.5, 0.2)]))
    assert stray.status == FAIL
    assert stray.value > 4 / 64


def test_march_level_follows_a_circle(dome_limit):
    u = dome_limit.u
    path = march_level(u, (0.5, 0.2), 0.82, (0.8, 0.5), 0.5 * H, 0.5 * H)
    radius = np.hypot(path[:, 0] - 0.5, path[:, 1] - 0.5)
    assert np.abs(radius - 0.3).max() < 0.01
    assert np.abs(u.interpolate(path, check=False) - 0.82).max() < 1e-3
    assert np.linalg.norm(path[-1] - (0.8, 0.5)) <= 0.5 * H
    assert len(path) > 10


def test_capture_check():
    gamma = diagonals()[:1]
    along = np.column_stack([np.arange(0.3, 0.5 + 1e-9, H / 2)] * 2)
    held = capture_check(gamma, contact_at(along, [2.0] * len(along)), H)
    assert held.status == PASS
    assert held.value <= np.sqrt(2) * H
    escaped = capture_check(gamma, contact_at([(0.2, 0.2)], [2.0]), H)
    assert escaped.status == FAIL
    assert escaped.value > 0.3
    assert capture_check(gamma, contact_at([(0.9, 0.1)], [2.0]), H).status == INFO


def test_arc_length_of_a_median_joined_at_the_centre(pyramid_limit):
    cfg = TraceConfig(h=H)
    line = trace(pyramid_limit.u, (0.5, 0.0), cfg, RIDGE, name="median-0", kind=MEDIAN)
    attracting = diagonals()
    cut = truncate_at_first_join(line, attracting, cfg.join_tol, RIDGE)
    assert cut.termination == JOINED_CURVE
    suite = StreamlineSuite(attracting=attracting, medians=[cut])
    contact = contact_at([(0.5, 0.5), (0.5 - H, 0.5 - H)], [2.0, 2.0])
    result = arc_length_check(pyramid_limit, suite, contact, RIDGE.lambda_inf)
    assert result.status == PASS
    assert result.details["length_times_lambda"]["value"] < 0.05
    assert result.details["length_times_lambda"]["details"]["events_in_contact"] == 1
    assert result.details["arcs"]["median-0"]["S_event"] == pytest.approx(0.5)
    assert "FewEvents" in result.flags


def linear_field(h):
    return ScalarField.from_function(rasterize(SQUARE, h), lambda x, y: 0.5 * y, label="u")


def test_quadrilateral_between_close_parallel_streamlines():
    u = linear_field(1 / 64)
    quad = build_quadrilateral(u, vertical(0.40, "a"), vertical(0.44, "b"), 0.1, 0.3)
    assert np.allclose(quad.lower[0], (0.40, 0.2))
    assert np.allclose(quad.upper[-1], (0.44, 0.6))
    result = quadrilateral_verdicts(u, quad, TraceConfig(h=1 / 64), RIDGE)
    assert result.status == PASS
    assert result.details["no_interior_meets"]["value"] == 0.0


def test_quadrilateral_with_several_test_streamlines():
    u = linear_field(1 / 64)
    quad = build_quadrilateral(u, vertical(0.3, "a"), vertical(0.7, "b"), 0.1, 0.3)
    assert not quad.triangular
    result = quadrilateral_verdicts(u, quad, TraceConfig(h=1 / 64), RIDGE)
    assert result.status == PASS
    assert result.details["no_interior_meets"]["details"]["tests"] >= 3


def test_non_monotone_upper_arc_fails(grid):
    wavy = ScalarField.from_function(grid, lambda x, y: 0.3 * y * (1 + 0.5 * np.sin(2 * np.pi * x)), label="u")
    xs = np.linspace(0.1, 0.9, 33)
    lower = np.column_stack([xs, np.full_like(xs, 0.2)])
    upper = np.column_stack([xs, np.full_like(xs, 0.6)])
    sides = (np.array([lower[0], upper[0]]), np.array([lower[-1], upper[-1]]))
    quad = Quadrilateral(lower=lower, upper=upper, sides=sides, levels=(0.05, 0.3))
    result = quadrilateral_verdicts(wavy, quad, TraceConfig(h=H), RIDGE, test_seeds=0)
    assert result.status == FAIL
    assert result.details["upper_monotone"]["status"] == FAIL


def box_quad():
    lower = np.array([(0.3, 0.2), (0.5, 0.2), (0.7, 0.2)])
    upper = np.array([(0.3, 0.6), (0.5, 0.6), (0.7, 0.6)])
    sides = (np.array([(0.3, 0.2), (0.3, 0.6)]), np.array([(0.7, 0.2), (0.7, 0.6)]))
    return Quadrilateral(lower=lower, upper=upper, sides=sides, levels=(0.1, 0.3))


def test_region_meets_contact():
    assert region_meets_contact(box_quad(), contact_at([(0.5, 0.4)], [2.0]))
    assert region_meets_contact(box_quad(), contact_at([(0.7, 0.4)], [2.0]))
    assert not region_meets_contact(box_quad(), contact_at([(0.5, 0.8)], [2.0]))
    assert not region_meets_contact(box_quad(), contact_at([(0.5, 0.4)], [3.0]))


def test_quadrilateral_rule_skips_regions_holding_contact(sine_suite, grid):
    limit, suite = sine_suite
    x, y = grid.mesh
    nodes = np.column_stack([x[grid.inside_mask], y[grid.inside_mask]])
    everywhere = contact_at(nodes, [2.0] * len(nodes))
    result = quadrilateral_rule_check(limit, suite, TraceConfig(h=H), RIDGE, count=5, contact=everywhere)
    assert result.status == INFO
    assert result.details["rejected_in_contact"] > 0
    assert "RegionMeetsContact" in result.flags


def test_potential_contact_proxy_marks_the_kinks():
    grid = rasterize(SQUARE, 1 / 16)
    pyramid = ScalarField.from_function(
        grid, lambda x, y: 1 - 2 * np.maximum(np.abs(x - 0.5), np.abs(y - 0.5)), label="U"
    )
    proxy = potential_contact_proxy(PotentialSolution(field=pyramid), RIDGE)
    assert len(proxy)
    assert np.allclose(np.abs(proxy[:, 0] - 0.5), np.abs(proxy[:, 1] - 0.5))
