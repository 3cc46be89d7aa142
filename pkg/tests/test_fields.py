import numpy as np
import pytest

from fields import (
    BallNotContained,
    FieldDumpError,
    FieldInvariantError,
    ResolutionTooCoarse,
    ScalarField,
    discrete_laplacian,
    level_curves,
    log_field,
    midpoint_concavity_violations,
    rasterize,
    read_field_dump,
    ring_decrement,
    s_operator,
    write_field_dump,
)
from geometry import OutsideDomain, boundary_distances, validate_polygon

SQUARE = validate_polygon([(0, 0), (1, 0), (1, 1), (0, 1)], "square")
TRIANGLE = validate_polygon([(0, 0), (4, 0), (0, 3)], "triangle")


@pytest.fixture(scope="module")
def grid():
    return rasterize(SQUARE, 1 / 32)


def test_rasterize_counts():
    assert rasterize(SQUARE, 0.25).interior_count == 9


def test_rasterize_too_coarse():
    with pytest.raises(ResolutionTooCoarse):
        rasterize(SQUARE, 0.5)


def test_rasterize_mask_is_strictly_inside():
    grid = rasterize(TRIANGLE, 0.1)
    assert np.all(boundary_distances(TRIANGLE, grid.node_points) > 0)


def test_cell_weights_sum_to_area():
    grid = rasterize(TRIANGLE, 0.1)
    assert grid.cell_weights.sum() == pytest.approx(TRIANGLE.area, rel=1e-9)


def test_boundary_cut_distances_on_square(grid):
    west = grid.boundary_cut[1]
    first_column = west[grid.inside_mask[:, 1], 1]
    assert np.allclose(first_column, grid.h)
    assert np.all(np.isnan(west[:, 5]))


def test_linear_field_is_reproduced(grid):
    field = ScalarField.from_function(grid, lambda x, y: 0.3 + 0.2 * x - 0.1 * y)
    pts = np.array([[0.31, 0.47], [0.5, 0.5], [0.66, 0.29]])
    assert np.allclose(field.interpolate(pts), 0.3 + 0.2 * pts[:, 0] - 0.1 * pts[:, 1], atol=1e-12)
    assert np.allclose(field.gradient(pts), [[0.2, -0.1]] * 3, atol=1e-10)


def test_constant_field(grid):
    field = ScalarField.from_function(grid, lambda x, y: np.full_like(x, 0.7), boundary_value=0.7)
    assert np.allclose(field.interpolate([[0.05, 0.9], [0.5, 0.5]]), 0.7)


def test_quadratic_interpolation_error():
    grid = rasterize(SQUARE, 0.1)
    field = ScalarField.from_function(grid, lambda x, y: x ** 2)
    assert field.interpolate([0.5, 0.5])[0] == pytest.approx(0.25, abs=0.01)


def test_cone_gradient(grid):
    cone = ScalarField.from_function(grid, lambda x, y: 1 - 2 * np.hypot(x - 0.5, y - 0.5))
    g = cone.gradient([0.75, 0.5])[0]
    assert g == pytest.approx([-2.0, 0.0], abs=4 * grid.h)


def test_queries_outside_raise(grid):
    field = ScalarField.from_function(grid, lambda x, y: x)
    with pytest.raises(OutsideDomain):
        field.interpolate([1.2, 0.5])


def test_labels_enforce_ranges(grid):
    with pytest.raises(FieldInvariantError):
        ScalarField.from_function(grid, lambda x, y: 2 + x, label="u")
    with pytest.raises(FieldInvariantError):
        ScalarField.from_function(grid, lambda x, y: x, label="not-a-label")


def test_values_are_read_only(grid):
    field = ScalarField.from_function(grid, lambda x, y: x)
    with pytest.raises(ValueError):
        field.values[5, 5] = 1.0


def test_log_field_floors_and_caps(grid):
    u = ScalarField.from_function(grid, lambda x, y: np.minimum(x, 1 - x), label="u")
    v = log_field(u)
    assert v.label == "v"
    assert np.nanmax(v.values) <= 0.0
    assert v.interpolate([0.25, 0.5])[0] == pytest.approx(np.log(0.25), abs=1e-9)


def test_ring_decrement_linear_axis_slope(grid):
    field = ScalarField.from_function(grid, lambda x, y: 0.5 + 0.3 * x)
    for r in (3 * grid.h, 6 * grid.h):
        assert ring_decrement(field, [0.5, 0.5], r) == pytest.approx(0.3, abs=1e-12)


def test_ring_decrement_linear_generic_slope(grid):
    field = ScalarField.from_function(grid, lambda x, y: 0.5 + 0.3 * x + 0.2 * y)
    assert ring_decrement(field, [0.5, 0.5], 4 * grid.h) == pytest.approx(np.hypot(0.3, 0.2), rel=1e-4)


def test_ring_decrement_cone_apex(grid):
    cone = ScalarField.from_function(grid, lambda x, y: -np.hypot(x - 0.5, y - 0.5))
    assert ring_decrement(cone, [0.5, 0.5], 8 * grid.h) == pytest.approx(1.0, abs=0.02)


def test_ring_must_fit_inside(grid):
    field = ScalarField.from_function(grid, lambda x, y: x)
    with pytest.raises(BallNotContained):
        ring_decrement(field, [0.05, 0.5], 0.1)


def test_s_operator_on_linear_and_ridge(grid):
    linear = ScalarField.from_function(grid, lambda x, y: 0.5 + 0.3 * x)
    assert s_operator(linear, [0.5, 0.5]) == pytest.approx(0.3, abs=1e-9)
    tent = ScalarField.from_function(grid, lambda x, y: np.minimum(x, 1 - x))
    assert s_operator(tent, [0.5, 0.5]) == pytest.approx(1.0, abs=1e-6)


def test_midpoint_concavity():
    grid = rasterize(SQUARE, 1 / 32)
    concave = ScalarField.from_function(grid, lambda x, y: -((x - 0.5) ** 2 + (y - 0.5) ** 2))
    report = midpoint_concavity_violations(concave, 2000, tol=grid.h ** 2, seed=3)
    assert report.violations == 0
    convex = ScalarField.from_function(grid, lambda x, y: (x - 0.5) ** 2 + (y - 0.5) ** 2)
    report = midpoint_concavity_violations(convex, 2000, tol=1e-6, seed=3)
    assert report.rate > 0.9


def test_discrete_laplacian_of_quadratic(grid):
    field = ScalarField.from_function(grid, lambda x, y: x ** 2 + y ** 2)
    lap = discrete_laplacian(field)
    assert lap[16, 16] == pytest.approx(4.0, abs=1e-9)


def test_level_curve_of_cone_is_a_closed_circle(grid):
    cone = ScalarField.from_function(grid, lambda x, y: 1 - 2 * np.hypot(x - 0.5, y - 0.5))
    curves = level_curves(cone, 0.5)
    assert len(curves) == 1
    line = curves[0]
    assert np.allclose(line[0], line[-1])
    radii = np.hypot(line[:, 0] - 0.5, line[:, 1] - 0.5)
    assert np.allclose(radii, 0.25, atol=grid.h)


def test_field_dump_round_trip(tmp_path, grid):
    u = ScalarField.from_function(grid, lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y), label="u")
    path = write_field_dump(u, tmp_path / "u.txt")
    assert path.read_text().splitlines()[0].split()[-1] == "u"
    back = read_field_dump(path, grid)
    assert back.label == "u"
    assert np.array_equal(np.isnan(back.values), np.isnan(u.values))
    assert np.allclose(back.inner, u.inner, rtol=0, atol=0)


def test_field_dump_grid_mismatch(tmp_path, grid):
    u = ScalarField.from_function(grid, lambda x, y: x)
    path = write_field_dump(u, tmp_path / "u.txt")
    with pytest.raises(FieldDumpError):
        read_field_dump(path, rasterize(SQUARE, 1 / 16))
