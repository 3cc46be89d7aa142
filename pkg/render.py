import io
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from checks import CheckResult, verdict  # noqa: E402
from fields import ScalarField, level_curves  # noqa: E402
from geometry import HighRidge, Polygon  # noqa: E402
from streamlines import ATTRACTING, GENERIC, MEDIAN, Streamline  # noqa: E402

logger = logging.getLogger(__name__)

COLOURS = {ATTRACTING: "#c0392b", MEDIAN: "#1f618d", GENERIC: "#7f8c8d"}


@dataclass
class RenderOptions:
    levels: Sequence[float] = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
    stroke_width: float = 0.8
    level_width: float = 0.6
    size: float = 6.0
    title: Optional[str] = None


def render_svg(field: ScalarField, streamlines: Sequence[Streamline], polygon: Polygon,
               ridge: Optional[HighRidge] = None, options: Optional[RenderOptions] = None) -> str:
    options = options or RenderOptions()
    with plt.rc_context({"svg.hashsalt": "infground", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(options.size, options.size))
        outline = np.vstack([polygon.vertices, polygon.vertices[:1]])
        ax.plot(outline[:, 0], outline[:, 1], color="black", linewidth=1.2)

        for c in options.levels:
            for line in level_curves(field, c):
                ax.plot(line[:, 0], line[:, 1], color="#2e4053", linewidth=options.level_width, alpha=0.8)

        for s in streamlines:
            ax.plot(s.points[:, 0], s.points[:, 1], color=COLOURS.get(s.kind, "#7f8c8d"),
                    linewidth=options.stroke_width)

        if ridge is not None:
            if ridge.is_point:
                ax.plot(*ridge.endpoints[0], marker="o", color="black", markersize=4)
            else:
                ax.plot(ridge.endpoints[:, 0], ridge.endpoints[:, 1], color="black", linewidth=2.5)

        ax.set_aspect("equal")
        ax.set_axis_off()
        if options.title:
            ax.set_title(options.title)
        buf = io.StringIO()
        fig.savefig(buf, format="svg", metadata={"Date": None}, bbox_inches="tight")
        plt.close(fig)
    return buf.getvalue()


def write_svg(text: str, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    logger.info(f"Wrote {path}")
    return path


def figure_check(first: str, second: str, path) -> CheckResult:
    same = first == second
    return CheckResult(
        name="figure",
        status=verdict(same),
        value=float(len(first)),
        message="two renders are byte-identical" if same else "renders differ between runs",
        details={"path": str(path)},
    )
