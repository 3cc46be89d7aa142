import numpy as np

from checks import FAIL, PASS
from fields import ScalarField, rasterize
from geometry import chebyshev_set, validate_polygon
from render import RenderOptions, figure_check, render_svg, write_svg
from streamlines import ATTRACTING, MEDIAN, Streamline

SQUARE = validate_polygon([(0, 0), (1, 0), (1, 1), (0, 1)], "square")


def scene():
    grid = rasterize(SQUARE, 1 / 16)
    cone = ScalarField.from_function(grid, lambda x, y: 1 - 2 * np.maximum(abs(x - 0.5), abs(y - 0.5)), label="U")
    t = np.linspace(0.0, 1.0, 20)[:, None]
    lines = [
        Streamline(points=(1 - t) * np.array([0.05, 0.05]) + t * 0.5, name="corner-0", kind=ATTRACTING),
        Streamline(points=(1 - t) * np.array([0.5, 0.05]) + t * 0.5, name="median-0", kind=MEDIAN),
    ]
    return cone, lines


def test_renders_are_reproducible():
    field, lines = scene()
    options = RenderOptions(levels=(0.25, 0.5, 0.75))
    first = render_svg(field, lines, SQUARE, chebyshev_set(SQUARE), options)
    second = render_svg(field, lines, SQUARE, chebyshev_set(SQUARE), options)
    assert first.lstrip().startswith("<?xml")
    assert "<svg" in first
    assert "dc:date" not in first
    assert figure_check(first, second, "figure.svg").status == PASS


def test_figure_check_fails_on_difference():
    result = figure_check("<svg/>", "<svg />", "figure.svg")
    assert result.status == FAIL
    assert result.details["path"] == "figure.svg"


def test_write_svg(tmp_path):
    field, lines = scene()
    text = render_svg(field, lines, SQUARE)
    path = write_svg(text, tmp_path / "nested" / "figure.svg")
    assert path.read_text(encoding="utf-8") == text
