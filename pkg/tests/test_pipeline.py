import asyncio
import json
from pathlib import Path

import pytest

from analysis import REPORT_KEYS
from config import RunConfig
from main import main
from pipeline import Laboratory

POLYGONS = Path(__file__).resolve().parent.parent / "polygons"


def square_config(tmp_path, **overrides):
    settings = dict(
        polygon=str(POLYGONS / "square.json"),
        h=1 / 24,
        p_ladder=(2, 4, 8),
        out=str(tmp_path),
        generic=4,
        max_iter=300,
        concavity_pairs=200,
        random_quads=4,
        rule_quads=3,
        trend_factors=(1.0,),
    )
    settings.update(overrides)
    return RunConfig(**settings)


@pytest.mark.slow
def test_full_run_on_square(tmp_path):
    lab = Laboratory(square_config(tmp_path))
    code = asyncio.run(lab.run("all"))

    for name in ("fields/u.txt", "fields/v.txt", "fields/U.txt", "ladder.csv", "potential.csv",
                 "trend.csv", "figure.svg", "streamlines/manifest.json", "report.json"):
        assert (tmp_path / name).exists(), name

    data = json.loads((tmp_path / "report.json").read_text())
    assert set(REPORT_KEYS) <= set(data)
    for key in ("eigenvalue_oracle", "gradient_upper_bound", "sandwich", "median_straightness", "figure"):
        assert data[key]["status"] == "PASS", key
    assert data["lambda_limit"]["status"] == "INFO"
    failed = [k for k in REPORT_KEYS if data[k]["status"] == "FAIL"]
    assert code == (1 if failed else 0)
    assert data["provenance"]["p_top"] == 8.0
    assert "report.json" in data["provenance"]["artifacts"]
    assert lab.limit.u.sup == pytest.approx(1.0)


@pytest.mark.slow
def test_solve_run_on_square_passes(tmp_path):
    lab = Laboratory(square_config(tmp_path, max_iter=1500))
    code = asyncio.run(lab.run("solve"))
    assert code == 0

    data = json.loads((tmp_path / "report.json").read_text())
    assert data["eigenvalue_oracle"]["status"] == "PASS"
    assert data["gradient_upper_bound"]["status"] == "PASS"
    assert not [k for k in REPORT_KEYS if data[k]["status"] == "FAIL"]
    assert all(state.p in (2, 4, 8) for state in lab.states)


def test_missing_polygon_is_an_input_error(tmp_path):
    code = asyncio.run(main(["solve", "--polygon", str(tmp_path / "nope.json"), "--out", str(tmp_path / "out")]))
    assert code == 2


def test_bad_flag_value_is_an_input_error():
    assert asyncio.run(main(["solve", "--h", "-1"])) == 2
