import json

import numpy as np
import pytest

from checks import InputError
from geometry import (
    IndexOutOfRange,
    NonConvex,
    OutsideDomain,
    PolygonFileError,
    TooFewVertices,
    DegenerateEdge,
    axis_aligned_rectangle,
    boundary_distance,
    chebyshev_set,
    corner_bisector,
    diameter,
    is_mirror_symmetric,
    load_polygon,
    ray_exit_distance,
    validate_polygon,
)

SQUARE = [(0, 0), (1, 0), (1, 1), (0, 1)]
RECTANGLE = [(0, 0), (2, 0), (2, 1), (0, 1)]
RIGHT_TRIANGLE = [(0, 0), (4, 0), (0, 3)]


def test_square_accepted():
    square = validate_polygon(SQUARE, "square")
    assert square.n == 4
    assert square.area == pytest.approx(1.0)
    assert square.perimeter == pytest.approx(4.0)


def test_clockwise_order_is_reoriented():
    square = validate_polygon(SQUARE[::-1])
    assert square.area == pytest.approx(1.0)


def test_self_intersecting_order_rejected():
    with pytest.raises(NonConvex):
        validate_polygon([(0, 0), (1, 1), (1, 0), (0, 1)])


def test_collinear_corner_rejected():
    with pytest.raises(NonConvex):
        validate_polygon([(0, 0), (1, 0), (2, 0), (1, 1)])


def test_any_triangle_accepted():
    assert validate_polygon([(0, 0), (2, 0), (1, 2)]).n == 3


def test_too_few_and_duplicate_vertices():
    with pytest.raises(TooFewVertices):
        validate_polygon([(0, 0), (1, 0)])
    with pytest.raises(DegenerateEdge):
        validate_polygon([(0, 0), (1, 0), (1, 0), (0, 1)])


def test_boundary_distance_examples():
    square = validate_polygon(SQUARE)
    assert boundary_distance(square, (0.5, 0.5)) == pytest.approx(0.5)
    assert boundary_distance(square, (0.25, 0.5)) == pytest.approx(0.25)
    # (1, 1) is the incentre of this triangle, so it is one inradius from every side
    triangle = validate_polygon(RIGHT_TRIANGLE)
    assert boundary_distance(triangle, (1, 1)) == pytest.approx(1.0)


def test_boundary_distance_outside_raises():
    square = validate_polygon(SQUARE)
    with pytest.raises(OutsideDomain):
        boundary_distance(square, (1.5, 0.5))


def test_ray_exit_distance():
    square = validate_polygon(SQUARE)
    assert ray_exit_distance(square, [(0.25, 0.5)], (1, 0))[0] == pytest.approx(0.75)
    assert ray_exit_distance(square, [(0.25, 0.5)], (-1, 0))[0] == pytest.approx(0.25)


def test_chebyshev_set_square_is_a_point():
    ridge = chebyshev_set(validate_polygon(SQUARE))
    assert ridge.inradius == pytest.approx(0.5)
    assert ridge.lambda_inf == pytest.approx(2.0)
    assert ridge.is_point
    assert np.allclose(ridge.endpoints[0], (0.5, 0.5))


def test_chebyshev_set_rectangle_is_a_segment():
    ridge = chebyshev_set(validate_polygon(RECTANGLE))
    assert ridge.inradius == pytest.approx(0.5)
    assert not ridge.is_point
    assert np.allclose(ridge.endpoints, [(0.5, 0.5), (1.5, 0.5)])
    assert ridge.length == pytest.approx(1.0)
    assert ridge.distance([(1.0, 0.25)])[0] == pytest.approx(0.25)
    assert ridge.distance([(0.0, 0.5)])[0] == pytest.approx(0.5)


def test_chebyshev_set_equilateral_triangle():
    ridge = chebyshev_set(validate_polygon([(0, 0), (2, 0), (1, np.sqrt(3))]))
    assert ridge.inradius == pytest.approx(1 / np.sqrt(3))
    assert ridge.is_point


def test_chebyshev_radius_matches_brute_force():
    triangle = validate_polygon(RIGHT_TRIANGLE)
    xs, ys = np.meshgrid(np.linspace(0, 4, 401), np.linspace(0, 3, 301))
    pts = np.column_stack([xs.ravel(), ys.ravel()])
    pts = pts[triangle.contains(pts)]
    best = max(boundary_distance(triangle, p) for p in pts[::7])
    assert chebyshev_set(triangle).inradius == pytest.approx(best, abs=0.02)


@pytest.mark.parametrize("vertices", [SQUARE, RECTANGLE, RIGHT_TRIANGLE])
def test_corner_bisector_right_angle(vertices):
    polygon = validate_polygon(vertices)
    assert np.allclose(corner_bisector(polygon, 0), (np.sqrt(0.5), np.sqrt(0.5)))


def test_corner_bisector_out_of_range():
    with pytest.raises(IndexOutOfRange):
        corner_bisector(validate_polygon(SQUARE), 4)


def test_diameter():
    assert diameter(validate_polygon(SQUARE)) == pytest.approx(np.sqrt(2))
    assert diameter(validate_polygon(RECTANGLE)) == pytest.approx(np.sqrt(5))
    hexagon = [(np.cos(a), np.sin(a)) for a in np.arange(6) * np.pi / 3]
    assert diameter(validate_polygon(hexagon)) == pytest.approx(2.0)


def test_mirror_symmetry_and_rectangle_detection():
    rectangle = validate_polygon(RECTANGLE)
    assert is_mirror_symmetric(rectangle, (1.0, 0.5), (1.0, 0.0))
    assert not is_mirror_symmetric(validate_polygon(RIGHT_TRIANGLE), (0, 0), (1, 1))
    assert axis_aligned_rectangle(rectangle) == pytest.approx((2.0, 1.0))
    assert axis_aligned_rectangle(validate_polygon(RIGHT_TRIANGLE)) is None


def test_load_polygon(tmp_path):
    path = tmp_path / "tri.json"
    path.write_text(json.dumps({"name": "tri", "vertices": RIGHT_TRIANGLE}))
    polygon = load_polygon(path)
    assert polygon.name == "tri"
    assert polygon.n == 3


def test_load_polygon_errors_are_input_errors(tmp_path):
    missing = tmp_path / "missing.json"
    with pytest.raises(PolygonFileError):
        load_polygon(missing)
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"corners": SQUARE}))
    with pytest.raises(InputError):
        load_polygon(bad)
