import argparse
import logging
import os
from dataclasses import asdict, dataclass, fields
from typing import Mapping, Optional, Sequence, Tuple

from checks import InputError
from eigensolver import InvalidLadder, LadderConfig
from streamlines import TraceConfig

logger = logging.getLogger(__name__)

ENV_PREFIX = "INFGROUND_"
COMMANDS = ("solve", "potential", "trace", "verify", "render", "all")


class InvalidConfig(InputError):
    pass


@dataclass
class RunConfig:
    polygon: str = "polygons/square.json"
    h: float = 1.0 / 128
    p_ladder: Tuple[float, ...] = (2, 4, 8, 16, 32, 64)
    epsilon: float = 0.05
    out: str = "out"
    levels: Tuple[float, ...] = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
    seed: int = 0
    log_level: str = "INFO"
    max_sweeps: int = 5000
    max_iter: int = 1500
    generic: int = 12
    potential_tol: float = 1e-10
    step_tol: float = 1e-7
    grad_tol: float = 1e-5
    radii_factors: Tuple[float, ...] = (8.0, 6.0, 4.0, 3.0)
    circle_samples: int = 256
    seed_offset_factor: float = 3.0
    join_factor: float = 2.0
    speed_tol: float = 0.05
    straightness_factor: float = 3.0
    lower_level: float = 0.5
    concavity_pairs: int = 10000
    concavity_tol_factor: float = 5.0
    random_quads: int = 20
    rule_quads: int = 5
    trend_eps: Tuple[float, ...] = (0.10, 0.05, 0.025)
    trend_factors: Tuple[float, ...] = (1.0, 2.0)
    extrapolate: bool = False
    stroke_width: float = 0.8
    level_width: float = 0.6

    def __post_init__(self):
        if self.h <= 0:
            raise InvalidConfig(f"h must be positive, got {self.h}")
        if self.epsilon < 0:
            raise InvalidConfig(f"epsilon must be non-negative, got {self.epsilon}")
        if not all(0.0 < c < 1.0 for c in self.levels):
            raise InvalidConfig(f"levels must lie in (0, 1), got {list(self.levels)}")
        if self.generic < 0:
            raise InvalidConfig("generic streamline count must be non-negative")
        try:
            self.ladder
        except InvalidLadder as e:
            raise InvalidConfig(str(e)) from e

    @property
    def ladder(self) -> LadderConfig:
        return LadderConfig(
            p_list=tuple(self.p_ladder),
            max_iter=self.max_iter,
            step_tol=self.step_tol,
            grad_tol=self.grad_tol,
        )

    def trace_config(self, h: Optional[float] = None) -> TraceConfig:
        return TraceConfig(
            h=self.h if h is None else h,
            seed_offset_factor=self.seed_offset_factor,
            join_factor=self.join_factor,
            speed_tol=self.speed_tol,
            straightness_factor=self.straightness_factor,
        )

    def radii(self, h: Optional[float] = None) -> Tuple[float, ...]:
        h = self.h if h is None else h
        return tuple(f * h for f in self.radii_factors)

    def echo(self) -> dict:
        return asdict(self)


def _parse_value(kind, raw: str, name: str):
    try:
        if kind is bool:
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind in (int, float, str):
            return kind(raw)
        return tuple(float(x) for x in raw.split(",") if x.strip())
    except ValueError as e:
        raise InvalidConfig(f"cannot parse {name}={raw!r}: {e}") from e


def _field_types():
    hints = {}
    for f in fields(RunConfig):
        default = f.default
        hints[f.name] = tuple if isinstance(default, tuple) else type(default)
    return hints


def from_environ(environ: Mapping[str, str]) -> dict:
    values = {}
    for name, kind in _field_types().items():
        raw = environ.get(ENV_PREFIX + name.upper())
        if raw is not None:
            values[name] = _parse_value(kind, raw, ENV_PREFIX + name.upper())
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="infinity ground states on convex polygons")
    parser.add_argument("command", nargs="?", default="all", choices=COMMANDS)
    parser.add_argument("--polygon", default=None, help="polygon JSON file")
    parser.add_argument("--h", type=float, default=None, help="grid spacing")
    parser.add_argument("--p-ladder", dest="p_ladder", default=None, help="comma separated exponents, first is 2")
    parser.add_argument("--epsilon", type=float, default=None, help="contact threshold")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--levels", default=None, help="comma separated render levels")
    parser.add_argument("--seed", type=int, default=None, help="rng seed")
    parser.add_argument("--log-level", dest="log_level", default=None)
    parser.add_argument("--max-sweeps", dest="max_sweeps", type=int, default=None)
    parser.add_argument("--max-iter", dest="max_iter", type=int, default=None)
    parser.add_argument("--generic", type=int, default=None, help="generic streamlines per polygon")
    return parser


def build_config(argv: Optional[Sequence[str]] = None,
                 environ: Optional[Mapping[str, str]] = None) -> Tuple[str, RunConfig]:
    """Defaults, overridden by INFGROUND_* variables, overridden by flags."""
    args = build_parser().parse_args(argv)
    values = from_environ(os.environ if environ is None else environ)
    types = _field_types()
    for name, raw in vars(args).items():
        if name == "command" or raw is None:
            continue
        values[name] = _parse_value(types[name], raw, f"--{name}") if isinstance(raw, str) and types[name] is tuple else raw
    return args.command, RunConfig(**values)
