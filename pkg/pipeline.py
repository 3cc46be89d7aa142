import asyncio
import csv
import logging
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from analysis import (
    ContactEstimate,
    VerificationReport,
    area_zero_trend,
    arc_length_check,
    assemble_report,
    attracting_reference_check,
    contact_estimate,
    gauss_flux_check,
    level_arc_sweep_check,
    potential_as_limit,
    potential_counterpart_suite,
    quadrilateral_rule_check,
    strange_situation_candidates,
    theorem1_check,
)
from checks import INFO, CheckResult, LaboratoryError, combine, verdict
from config import RunConfig
from eigensolver import (
    EmptyRegion,
    GroundState,
    continuation_solve,
    eigenvalue_oracle,
    gradient_bound_check,
    lambda_limit_check,
    lower_gradient_check,
    superharmonicity_check,
)
from fields import GridSpec, log_field, midpoint_concavity_violations, rasterize, write_field_dump
from geometry import HighRidge, Polygon, chebyshev_set, load_polygon
from infinity import (
    GroundLimit,
    PotentialSolution,
    compare_u_U,
    exclusion_mask,
    extract_ground_limit,
    residual_check,
    sandwich_check,
    solve_infinity_potential,
)
from render import RenderOptions, figure_check, render_svg, write_svg
from streamlines import (
    StreamlineSuite,
    capture_check,
    level_crossing_check,
    speed_profile_checks,
    stability_check,
    trace_suite,
    write_manifest,
    write_streamline_csv,
)

logger = logging.getLogger(__name__)


class Laboratory:
    """Runs the stages for one polygon and keeps every intermediate result."""

    def __init__(self, config: RunConfig):
        self.config = config
        self.out = Path(config.out)
        self.polygon: Optional[Polygon] = None
        self.ridge: Optional[HighRidge] = None
        self.grid: Optional[GridSpec] = None
        self.states: List[GroundState] = []
        self.limit: Optional[GroundLimit] = None
        self.potential: Optional[PotentialSolution] = None
        self.contact: Optional[ContactEstimate] = None
        self.suite: Optional[StreamlineSuite] = None
        self.potential_suite: Optional[StreamlineSuite] = None
        self.results: Dict[str, CheckResult] = {}
        self.artifacts: List[str] = []
        self.rng = np.random.default_rng(config.seed)

    def _artifact(self, path) -> Path:
        path = Path(path)
        self.artifacts.append(str(path.relative_to(self.out)))
        return path

    async def prepare(self):
        self.polygon = await asyncio.to_thread(load_polygon, self.config.polygon)
        self.ridge = chebyshev_set(self.polygon)
        self.grid = await asyncio.to_thread(rasterize, self.polygon, self.config.h)
        logger.info(f"{self.polygon.name}: R={self.ridge.inradius:.5g}, Lambda={self.ridge.lambda_inf:.5g}")

    async def solve(self):
        self.states = await asyncio.to_thread(continuation_solve, self.polygon, self.config.ladder, self.grid)
        self.limit = extract_ground_limit(self.states, self.ridge, self.config.extrapolate)
        for state in self.states:
            write_field_dump(state.field, self._artifact(self.out / "fields" / f"u_p{state.p:g}.txt"))
        write_field_dump(self.limit.u, self._artifact(self.out / "fields" / "u.txt"))
        write_field_dump(self.limit.v, self._artifact(self.out / "fields" / "v.txt"))
        with self._artifact(self.out / "ladder.csv").open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["p", "iter", "lambda_p", "lambda_p_root", "residual"])
            for state in self.states:
                for it, lam, res in state.history:
                    writer.writerow([f"{state.p:g}", it, f"{lam:.12g}", f"{lam ** (1 / state.p):.12g}", f"{res:.6g}"])

    async def solve_potential(self):
        self.potential = await asyncio.to_thread(
            solve_infinity_potential, self.polygon, self.ridge, self.grid,
            self.config.potential_tol, self.config.max_sweeps,
        )
        write_field_dump(self.potential.field, self._artifact(self.out / "fields" / "U.txt"))
        with self._artifact(self.out / "potential.csv").open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["sweep", "sup_change"])
            for sweep, change in self.potential.history:
                writer.writerow([sweep, f"{change:.6g}"])

    async def solve_all(self):
        await asyncio.gather(self.solve(), self.solve_potential())

    async def trace(self):
        cfg = self.config.trace_config()
        self.contact = await asyncio.to_thread(
            contact_estimate, self.limit, self.ridge, self.config.epsilon,
            self.config.radii(), self.config.circle_samples,
        )
        total = 2 * self.polygon.n + self.config.generic
        self.suite = await trace_suite(self.limit, self.polygon, self.ridge, cfg, self.contact, total)
        self._write_suite(self.suite, self.out / "streamlines")
        if self.potential is not None:
            self.potential_suite = await trace_suite(
                potential_as_limit(self.potential), self.polygon, self.ridge, cfg, total=total
            )
            self._write_suite(self.potential_suite, self.out / "streamlines" / "potential")

    def _write_suite(self, suite: StreamlineSuite, folder: Path):
        for s in suite.all:
            write_streamline_csv(s, self._artifact(folder / f"{s.name}.csv"))
        write_manifest(suite.all, self._artifact(folder / "manifest.json"))

    async def coarse_contact(self, factor: float) -> Optional[ContactEstimate]:
        h = self.config.h * factor
        if factor == 1.0:
            return self.contact
        try:
            grid = await asyncio.to_thread(rasterize, self.polygon, h)
            states = await asyncio.to_thread(continuation_solve, self.polygon, self.config.ladder, grid)
            limit = extract_ground_limit(states, self.ridge, self.config.extrapolate)
        except LaboratoryError as e:
            logger.warning(f"trend grid h={h:.4g} dropped: {e.qualified_name}: {e}")
            return None
        return await asyncio.to_thread(
            contact_estimate, limit, self.ridge, self.config.epsilon, self.config.radii(h), self.config.circle_samples
        )

    def ladder_checks(self):
        lam = self.ridge.lambda_inf
        h = self.config.h
        self.results["eigenvalue_oracle"] = eigenvalue_oracle(self.polygon, self.states[0])
        self.results["lambda_limit"] = lambda_limit_check(self.states, lam)
        self.results["gradient_upper_bound"] = combine(
            "gradient_upper_bound", [gradient_bound_check(s, self.polygon) for s in self.states]
        )
        lower, concavity = [], []
        for state in self.states:
            if state.p < 32:
                continue
            try:
                lower.append(lower_gradient_check(state, self.polygon, self.config.lower_level))
            except EmptyRegion as e:
                lower.append(CheckResult(name=f"p={state.p:g}", status=INFO, message=str(e)))
            tol = self.config.concavity_tol_factor * h
            report = midpoint_concavity_violations(
                log_field(state.field), self.config.concavity_pairs, tol, self.config.seed
            )
            concavity.append(CheckResult(
                name=f"v_{state.p:g}",
                status=verdict(report.violations == 0),
                value=float(report.violations),
                threshold=0.0,
                details={"pairs": report.pairs, "worst_deficit": report.worst_deficit, "tol": tol},
            ))
        self.results["gradient_lower_bound"] = combine("gradient_lower_bound", lower)
        self.results["log_concavity"] = combine("log_concavity", concavity)
        self.results["superharmonicity"] = combine(
            "superharmonicity", [superharmonicity_check(s, lam) for s in self.states[-2:]]
        )
        self.results["richardson_gap"] = CheckResult(
            name="richardson_gap", status=INFO, value=self.limit.richardson_gap,
            message=f"sup |u_p{self.states[-1].p:g} - u_p{self.states[-2].p:g}|",
        )

    def structure_checks(self):
        h = self.config.h
        cfg = self.config.trace_config()
        suite, contact = self.suite, self.contact
        self.results["sandwich"] = combine("sandwich", [
            sandwich_check(self.limit, self.polygon, self.ridge),
            sandwich_check(self.potential, self.polygon, self.ridge),
        ])
        self.results["contact_confinement"] = combine("contact_confinement", [
            theorem1_check(contact, suite.attracting, h, cfg.seed_offset),
            attracting_reference_check(suite.attracting, self.polygon, self.ridge, h),
            level_arc_sweep_check(self.limit, contact, suite.attracting, h),
        ])
        self.results["median_straightness"] = combine("median_straightness", suite.straightness)
        self.results["arc_length"] = arc_length_check(self.limit, suite, contact, self.ridge.lambda_inf,
                                                      self.config.speed_tol)

        speed = [speed_profile_checks(s, contact, self.config.speed_tol, h, self.polygon) for s in suite.all]
        levels = np.array([0.25, 0.5, 0.75])
        crossings = [
            level_crossing_check(s, np.log(levels) if s.field_label == "v" else levels) for s in suite.all
        ]
        a, b = self.polygon.side(0)
        inward = self.polygon.inward_normal(0)
        x0 = a + 0.3 * (b - a) + 0.2 * self.ridge.inradius * inward
        y0 = x0 + 0.02 * (b - a)
        stability = stability_check(self.limit.v, x0, y0, np.inf, cfg, self.ridge)
        self.results["speed_laws"] = combine("speed_laws", [
            combine("speed_profiles", speed),
            combine("level_crossings", crossings),
            stability,
        ])
        self.results["contact_capture"] = capture_check(suite.attracting, contact, h)
        self.results["gauss_flux"] = gauss_flux_check(self.limit, contact, self.rng, self.config.random_quads)
        self.results["quadrilateral_rule"] = quadrilateral_rule_check(
            self.limit, suite, cfg, self.ridge, self.config.rule_quads, contact
        )
        self.results["strange_situation"] = strange_situation_candidates(suite, contact, self.ridge, h)
        self.results["u_vs_U"] = compare_u_U(self.limit, self.potential)

        excluded = exclusion_mask(self.grid, contact.nodes, 2.0 * h, self.ridge)
        residual = residual_check(self.limit.u, excluded)
        residual.status = INFO
        self.results["infinity_residual"] = residual

    async def trend_check(self):
        factors = sorted(set(self.config.trend_factors))
        estimates = await asyncio.gather(*[self.coarse_contact(f) for f in factors])
        by_h = {self.config.h * f: e for f, e in zip(factors, estimates) if e is not None}
        result = area_zero_trend(by_h, self.config.trend_eps)
        with self._artifact(self.out / "trend.csv").open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["h", "epsilon", "measure"])
            for row in result.details["table"]:
                writer.writerow([f"{row['h']:.8g}", f"{row['epsilon']:g}", f"{row['measure']:.8g}"])
        self.results["area_zero_trend"] = result

    async def counterpart(self):
        self.results["potential_counterpart"] = await potential_counterpart_suite(
            self.potential, self.polygon, self.ridge, self.config.trace_config(), suite=self.potential_suite
        )

    def render(self):
        options = RenderOptions(
            levels=self.config.levels,
            stroke_width=self.config.stroke_width,
            level_width=self.config.level_width,
        )
        lines = self.potential_suite.all if self.potential_suite else []
        first = render_svg(self.potential.field, lines, self.polygon, self.ridge, options)
        second = render_svg(self.potential.field, lines, self.polygon, self.ridge, options)
        path = write_svg(first, self._artifact(self.out / "figure.svg"))
        self.results["figure"] = figure_check(first, second, path.relative_to(self.out))

    def report(self) -> VerificationReport:
        provenance = {
            "config": self.config.echo(),
            "polygon": self.polygon.name if self.polygon else None,
            "h": self.config.h,
            "p_top": self.states[-1].p if self.states else None,
            "inradius": self.ridge.inradius if self.ridge else None,
            "seeds": [s.name for s in self.suite.all] if self.suite else [],
            "artifacts": sorted(self.artifacts + ["report.json"]),
        }
        report = assemble_report(self.results, provenance)
        report.to_json(self.out / "report.json")
        return report

    async def run(self, command: str = "all") -> int:
        self.out.mkdir(parents=True, exist_ok=True)
        await self.prepare()
        if command == "solve":
            await self.solve()
            self.ladder_checks()
        elif command == "potential":
            await self.solve_potential()
        elif command == "trace":
            await self.solve_all()
            await self.trace()
        elif command == "render":
            await self.solve_all()
            await self.trace()
            self.render()
        else:
            await self.solve_all()
            await self.trace()
            self.ladder_checks()
            self.structure_checks()
            await asyncio.gather(self.trend_check(), self.counterpart())
            if command == "all":
                self.render()
        report = self.report()
        logger.info(f"Report written to {self.out / 'report.json'} ({len(report.failed)} failed checks)")
        return report.exit_code


async def run_pipeline(config: RunConfig, command: str = "all") -> int:
    return await Laboratory(config).run(command)
