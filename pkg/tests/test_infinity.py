import numpy as np
import pytest

from checks import INFO, PASS, FAIL
from eigensolver import GroundState
from fields import ScalarField, rasterize
from geometry import chebyshev_set, validate_polygon
from infinity import (
    GroundLimit,
    GridMismatch,
    LadderTooShort,
    PotentialSolution,
    compare_u_U,
    exclusion_mask,
    extract_ground_limit,
    hull_gap,
    level_convexity_check,
    midrange_update,
    residual_check,
    residual_infinity_laplacian,
    ridge_constraint,
    sandwich_check,
    solve_infinity_potential,
)

SQUARE = validate_polygon([(0, 0), (1, 0), (1, 1), (0, 1)], "square")
RECTANGLE = validate_polygon([(0, 0), (2, 0), (2, 1), (0, 1)], "rectangle")


@pytest.fixture(scope="module")
def square_potential():
    grid = rasterize(SQUARE, 1 / 16)
    return solve_infinity_potential(SQUARE, chebyshev_set(SQUARE), grid, tol=1e-9)


def test_midrange_of_equal_rays():
    values = np.array([0.1, 0.9, 0.4, 0.3])
    assert midrange_update(values, np.ones(4)) == pytest.approx(0.5)


def test_midrange_is_monotone():
    rng = np.random.default_rng(7)
    for _ in range(200):
        values = rng.uniform(0, 1, 8)
        lengths = rng.uniform(0.2, 1.0, 8)
        base = midrange_update(values, lengths)
        k = rng.integers(8)
        raised = values.copy()
        raised[k] += rng.uniform(0, 0.5)
        assert midrange_update(raised, lengths) >= base - 1e-15


def test_ridge_constraint_square_centre():
    grid = rasterize(SQUARE, 1 / 16)
    mask, values = ridge_constraint(grid, chebyshev_set(SQUARE))
    assert mask.sum() == 1
    assert values[8, 8] == 1.0


def test_ridge_constraint_rectangle_segment():
    grid = rasterize(RECTANGLE, 1 / 16)
    mask, values = ridge_constraint(grid, chebyshev_set(RECTANGLE))
    assert mask.sum() == 17
    assert np.allclose(values[mask], 1.0)


def test_ridge_constraint_pins_an_off_grid_centre():
    grid = rasterize(SQUARE, 1 / 15)
    mask, values = ridge_constraint(grid, chebyshev_set(SQUARE))
    assert mask.sum() == 4
    assert np.all(values[mask] == 1.0)
    assert np.isnan(values[~mask]).all()


def test_potential_on_square(square_potential):
    big_u = square_potential.field
    assert big_u.label == "U"
    assert big_u.interpolate([0.5, 0.5])[0] == 1.0
    assert big_u.interpolate([0.5, 0.25])[0] == pytest.approx(0.5, abs=5 * big_u.grid.h)
    assert np.all((big_u.inner >= 0) & (big_u.inner <= 1))
    assert square_potential.residual < 1e-6
    assert square_potential.history


def test_potential_is_symmetric(square_potential):
    values = square_potential.field.values
    inside = square_potential.field.grid.inside_mask
    assert np.allclose(values[inside], values.T[inside], atol=1e-6)
    assert np.allclose(values[inside], values[::-1][inside], atol=1e-6)


def test_potential_sandwich_and_levels(square_potential):
    ridge = chebyshev_set(SQUARE)
    assert sandwich_check(square_potential, SQUARE, ridge).status == PASS
    assert residual_check(square_potential.field, square_potential.constrained).status == PASS


def test_distance_over_inradius_is_tight_above():
    grid = rasterize(SQUARE, 1 / 16)
    ridge = chebyshev_set(SQUARE)
    u = ScalarField(grid, np.minimum(ridge.lambda_inf * grid.node_distances, 1.0), 0.0, "u")
    result = sandwich_check(u, SQUARE, ridge)
    assert result.status == PASS
    assert result.details["distance_margin"] == pytest.approx(0.0, abs=1e-12)


def test_residual_of_affine_field_vanishes():
    grid = rasterize(SQUARE, 1 / 32)
    field = ScalarField.from_function(grid, lambda x, y: 0.2 + 0.5 * x - 0.3 * y)
    stats = residual_infinity_laplacian(field)
    assert stats.nodes > 0
    assert stats.sup < 1e-12


def test_residual_of_cone_off_apex():
    grid = rasterize(SQUARE, 1 / 32)
    cone = ScalarField.from_function(grid, lambda x, y: 1 - 2 * np.hypot(x - 0.5, y - 0.5))
    excluded = exclusion_mask(grid, np.array([[0.5, 0.5]]), 0.2)
    assert excluded[16, 16]
    assert residual_check(cone, excluded).status == PASS


def test_compare_against_itself(square_potential):
    limit = GroundLimit(u=square_potential.field.with_values(square_potential.field.values, "u"))
    result = compare_u_U(limit, square_potential)
    assert result.status == INFO
    assert result.value == 0.0


def test_compare_needs_one_grid(square_potential):
    other = rasterize(SQUARE, 1 / 8)
    limit = GroundLimit(u=ScalarField.from_function(other, lambda x, y: 0 * x, label="u"))
    with pytest.raises(GridMismatch):
        compare_u_U(limit, square_potential)


def test_extract_ground_limit():
    grid = rasterize(SQUARE, 1 / 16)
    ridge = chebyshev_set(SQUARE)
    cone = np.maximum(1 - 2 * np.hypot(grid.mesh[0] - 0.5, grid.mesh[1] - 0.5), 0.01)
    low = GroundState(p=32.0, field=ScalarField(grid, 0.98 * cone, 0.0, "u_p"))
    high = GroundState(p=64.0, field=ScalarField(grid, cone, 0.0, "u_p"))
    with pytest.raises(LadderTooShort):
        extract_ground_limit([high], ridge)
    limit = extract_ground_limit([low, high], ridge)
    assert limit.p_used == 64.0
    assert limit.u.label == "u"
    assert limit.v.label == "v"
    assert limit.richardson_gap == pytest.approx(0.02, abs=1e-9)
    assert not limit.flags


def test_level_convexity():
    grid = rasterize(SQUARE, 1 / 32)
    cone = ScalarField.from_function(grid, lambda x, y: 1 - 2 * np.hypot(x - 0.5, y - 0.5))
    assert level_convexity_check(cone, (0.3, 0.5, 0.7)).status == PASS
    peanut = ScalarField.from_function(
        grid, lambda x, y: 1 - 2 * np.minimum(np.hypot(x - 0.35, y - 0.5), np.hypot(x - 0.65, y - 0.5))
    )
    assert level_convexity_check(peanut, (0.6,)).status == FAIL


def test_level_convexity_of_convex_fields(square_potential):
    grid = rasterize(SQUARE, 1 / 64)
    oval = ScalarField.from_function(grid, lambda x, y: 1 - np.hypot((x - 0.5) / 0.45, (y - 0.5) / 0.3))
    assert level_convexity_check(oval).status == PASS
    cone = ScalarField.from_function(grid, lambda x, y: 1 - 2 * np.hypot(x - 0.5, y - 0.5))
    result = level_convexity_check(cone)
    assert result.status == PASS
    assert result.value < 0.1 * grid.h
    assert level_convexity_check(square_potential.field).status == PASS


def test_hull_gap():
    square = np.array([(0, 0), (1, 0), (1, 1), (0, 1), (0, 0)], dtype=float)
    assert hull_gap(square) == pytest.approx(0.0)
    notched = np.array([(0, 0), (0.5, 0.2), (1, 0), (1, 1), (0, 1)], dtype=float)
    assert hull_gap(notched) == pytest.approx(0.2)
    assert hull_gap(np.array([(0, 0), (1, 1)], dtype=float)) == 0.0


def test_potential_solution_defaults():
    solution = PotentialSolution()
    assert not solution.converged
    assert solution.flags == []
