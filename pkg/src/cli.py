"""
Command-line interface

Subcommands:
    study   convergence table for one manufactured problem over a level sweep
    verify  stability checks on one grid
    solve   one solve with per-unknown field dumps
    export  one solve written as legacy VTK (and Matrix Market blocks on request)

Settings are layered: config/minmix.yaml, then an optional key=value run file
(--config), then flags.
"""

import argparse
import logging
import re
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from src.assembly import assemble
from src.config import config as env_config
from src.config import load_defaults
from src.convergence import run_study
from src.exports import write_fields, write_matrix_market, write_study, write_verification, write_vtk
from src.failures import (
    FailureMonitor,
    MinmixError,
    OutputError,
    SolverError,
    Stage,
    VerificationError,
    exit_code_for,
    failure_context,
)
from src.physics import SOLUTION_TAGS, IsotropicMaterial, make_solution
from src.reference_element import SUPPORTED_ORDERS
from src.solver import SolveOptions, solve
from src.tensor_grid import build_grid, grid_for_level
from src.verify import run_verification

logger = logging.getLogger(__name__)

FORMATS = ("csv", "md", "vtk", "mtx")
LIST_FIELDS = ("levels", "grid", "formats")


class RunConfig(BaseModel):
    """One invocation of the command line"""
    model_config = ConfigDict(extra="forbid")

    subcommand: Literal["study", "verify", "solve", "export"]
    problem: str = "e1"
    dim: Optional[int] = Field(None, ge=1, le=4)
    levels: List[int] = Field(default_factory=list)
    grid: Optional[List[int]] = None
    lam: float = Field(1.0, gt=0.0)
    mu: float = Field(0.5, gt=0.0)
    tol: float = Field(1e-10, gt=0.0, lt=1.0)
    max_iters: Optional[int] = Field(None, gt=0)
    precond: Literal["none", "diagonal", "block"] = "block"
    pin: bool = True
    restarts: int = Field(8, ge=0)
    quad: int = 3
    load_rule: Literal["gauss", "midpoint"] = "midpoint"
    interp: Literal["center", "average"] = "center"
    out: str = "results"
    formats: List[Literal["csv", "md", "vtk", "mtx"]] = Field(default_factory=lambda: ["csv", "md"])
    threads: Optional[int] = Field(None, gt=0)
    dense_limit: int = Field(3000, gt=0)
    samples: int = Field(200, ge=0)
    seed: int = 0
    verbose: bool = False

    @field_validator(*LIST_FIELDS, mode="before")
    @classmethod
    def split_lists(cls, value):
        if isinstance(value, str):
            value = value.strip()
            return [item.strip() for item in value.split(",") if item.strip()] if value else []
        return value

    @field_validator("dim", "grid", "max_iters", "threads", mode="before")
    @classmethod
    def empty_is_none(cls, value):
        if isinstance(value, str) and not value.strip():
            return None
        return value

    @field_validator("problem")
    @classmethod
    def known_problem(cls, value: str) -> str:
        if value not in SOLUTION_TAGS:
            raise ValueError(f"unknown problem {value!r}; choose one of {', '.join(SOLUTION_TAGS)}")
        return value

    @field_validator("quad")
    @classmethod
    def supported_quadrature(cls, value: int) -> int:
        if value not in SUPPORTED_ORDERS:
            raise ValueError(f"quadrature order must be one of {SUPPORTED_ORDERS}")
        return value

    @model_validator(mode="after")
    def check_combination(self) -> "RunConfig":
        solution_dim = make_solution(self.problem).dim
        if self.subcommand == "verify":
            if self.grid is not None:
                if self.dim is not None and self.dim != len(self.grid):
                    raise ValueError(f"--dim {self.dim} contradicts a {len(self.grid)}D grid")
                self.dim = len(self.grid)
            elif self.dim is None:
                self.dim = 2
        else:
            if self.problem == "traction" and self.dim not in (None, 2):
                raise ValueError("the traction problem is defined in 2D only")
            if self.dim is not None and self.dim != solution_dim:
                raise ValueError(f"problem {self.problem} is {solution_dim}D, not {self.dim}D")
            self.dim = solution_dim
            if self.grid is not None and len(self.grid) != self.dim:
                raise ValueError(f"grid {self.grid} does not match the {self.dim}D problem {self.problem}")

        if self.grid is not None and any(n < 1 for n in self.grid):
            raise ValueError("grid cell counts must be positive")
        if self.levels != sorted(set(self.levels)) or any(level < 1 for level in self.levels):
            raise ValueError(f"levels must be distinct, positive and ascending, got {self.levels}")
        if self.subcommand == "study" and not self.levels:
            raise ValueError("a study needs at least one level")
        return self

    def solve_options(self) -> SolveOptions:
        return SolveOptions(
            tol=self.tol, max_iters=self.max_iters, precond=self.precond, pin=self.pin,
            restarts=self.restarts, dense_limit=self.dense_limit,
        )

    def material(self) -> IsotropicMaterial:
        return IsotropicMaterial(self.lam, self.mu, self.dim)

    def to_text(self) -> str:
        """key=value lines, one per field."""
        lines = []
        for name in type(self).model_fields:
            value = getattr(self, name)
            if value is None:
                text = ""
            elif isinstance(value, list):
                text = ",".join(str(v) for v in value)
            elif isinstance(value, bool):
                text = "true" if value else "false"
            elif isinstance(value, float):
                text = repr(value)
            else:
                text = str(value)
            lines.append(f"{name}={text}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        return cls.model_validate(parse_pairs(text))


def parse_pairs(text: str) -> Dict[str, str]:
    """key=value lines; blank lines and # comments are skipped."""
    pairs: Dict[str, str] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {number}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        pairs[key.strip().replace("-", "_")] = value.strip()
    return pairs


def parse_levels(text: str) -> List[int]:
    """'7' means 1..7, '2..7' a range, '1,3,5' a list."""
    text = text.strip()
    match = re.fullmatch(r"(\d+)\s*\.\.\s*(\d+)", text)
    if match:
        first, last = int(match.group(1)), int(match.group(2))
        if first > last:
            raise ValueError(f"empty level range {text}")
        return list(range(first, last + 1))
    if "," in text:
        return [int(item) for item in text.split(",") if item.strip()]
    return list(range(1, int(text) + 1))


def parse_grid(text: str) -> List[int]:
    """'4x4' or '4x4x2'."""
    return [int(item) for item in text.lower().split("x")]


def _default_levels(defaults: Dict[str, Any], problem: str) -> List[int]:
    entry = defaults.get("study", {}).get("levels", {}).get(problem)
    if entry is None:
        return []
    if isinstance(entry, int):
        return list(range(1, entry + 1))
    first, last = entry
    return list(range(int(first), int(last) + 1))


def _yaml_layer(defaults: Dict[str, Any]) -> Dict[str, Any]:
    material = defaults.get("material", {})
    solver = defaults.get("solver", {})
    quadrature = defaults.get("quadrature", {})
    output = defaults.get("output", {})
    verify = defaults.get("verify", {})
    layer = {
        "lam": material.get("lam"), "mu": material.get("mu"),
        "tol": solver.get("tol"), "precond": solver.get("precond"), "pin": solver.get("pin"),
        "restarts": solver.get("restarts"),
        "quad": quadrature.get("order"), "load_rule": quadrature.get("load_rule"),
        "interp": quadrature.get("interp"),
        "out": output.get("dir"), "formats": output.get("formats"),
        "dense_limit": verify.get("dense_limit"), "samples": verify.get("random_samples"),
        "seed": verify.get("seed"),
    }
    return {k: v for k, v in layer.items() if v is not None}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--problem", choices=SOLUTION_TAGS, help="manufactured solution")
    common.add_argument("--dim", type=int, help="spatial dimension")
    common.add_argument("--levels", help="N for 1..N, A..B, or a comma list")
    common.add_argument("--n", type=int, help="cells per axis")
    common.add_argument("--grid", help="cells per axis, e.g. 4x4")
    common.add_argument("--lambda", dest="lam", type=float, help="Lame lambda")
    common.add_argument("--mu", type=float, help="Lame mu")
    common.add_argument("--tol", type=float, help="relative residual tolerance")
    common.add_argument("--max-iters", type=int, help="MINRES iteration budget")
    common.add_argument("--precond", choices=["none", "diagonal", "block"])
    common.add_argument("--no-pin", dest="pin", action="store_false", default=None,
                        help="keep the frame checkerboard kernel")
    common.add_argument("--quad", type=int, help="Gauss points per axis")
    common.add_argument("--load-rule", choices=["gauss", "midpoint"])
    common.add_argument("--interp", choices=["center", "average"], help="normal stress interpolant")
    common.add_argument("--out", help="output directory")
    common.add_argument("--format", dest="formats", action="append", choices=FORMATS,
                        help="output format, repeatable")
    common.add_argument("--threads", type=int, help="worker threads for macro checks")
    common.add_argument("--samples", type=int, help="random fields for the witness suite")
    common.add_argument("--seed", type=int)
    common.add_argument("--config", dest="config_file", help="key=value run file")
    common.add_argument("--verbose", "-v", action="store_true", default=None)

    parser = argparse.ArgumentParser(prog="minmix", description="Mixed elasticity on uniform grids")
    subparsers = parser.add_subparsers(dest="subcommand", required=True)
    subparsers.add_parser("study", parents=[common], help="convergence study over levels")
    subparsers.add_parser("verify", parents=[common], help="stability checks on one grid")
    subparsers.add_parser("solve", parents=[common], help="solve once and dump fields")
    subparsers.add_parser("export", parents=[common], help="solve once and write VTK")
    return parser


def parse_args(argv: Optional[Sequence[str]] = None, defaults_path: Optional[Path] = None) -> RunConfig:
    """Merge defaults, the run file and flags into a validated RunConfig."""
    parser = build_parser()
    args = parser.parse_args(argv)

    defaults = load_defaults(defaults_path)
    values: Dict[str, Any] = _yaml_layer(defaults)
    if env_config.output_dir:
        values["out"] = env_config.output_dir

    try:
        if args.config_file:
            with open(args.config_file, "r") as f:
                values.update(parse_pairs(f.read()))

        flags = {k: v for k, v in vars(args).items() if v is not None and k != "config_file"}
        if "levels" in flags:
            flags["levels"] = parse_levels(flags["levels"])
        if "grid" in flags:
            flags["grid"] = parse_grid(flags["grid"])
        n = flags.pop("n", None)
        if n is not None:
            if "grid" in flags:
                parser.error("--n and --grid are mutually exclusive")
            dim = flags.get("dim") or (make_solution(flags.get("problem", values.get("problem", "e1"))).dim
                                       if args.subcommand != "verify" else 2)
            flags["grid"] = [n] * int(dim)
        values.update(flags)
    except (OSError, ValueError) as e:
        parser.error(str(e))

    values.setdefault("problem", "e1")
    if not values.get("levels") and values["subcommand"] == "study":
        values["levels"] = _default_levels(defaults, str(values["problem"]))

    try:
        return RunConfig.model_validate(values)
    except ValidationError as e:
        messages = "; ".join(f"{'.'.join(str(p) for p in err['loc']) or 'config'}: {err['msg']}"
                             for err in e.errors())
        parser.error(messages)


def _grid_of(config: RunConfig):
    if config.grid is not None:
        return build_grid(config.dim, config.grid)
    level = config.levels[-1] if config.levels else 3
    return grid_for_level(config.dim, level)


def _run_study(config: RunConfig, monitor: FailureMonitor) -> None:
    out = Path(config.out)
    formats = [f for f in config.formats if f in ("csv", "md")] or ["csv"]
    try:
        with failure_context(Stage.SOLVER, monitor, problem=config.problem, levels=config.levels):
            result = run_study(
                config.problem, config.levels, config.material(), config.solve_options(),
                load_rule=config.load_rule, interp=config.interp, g=config.quad,
            )
    except SolverError as e:
        if e.partial is not None and e.partial.records:
            with failure_context(Stage.OUTPUT, monitor):
                write_study(e.partial, out, formats)
            logger.warning(f"Partial table with {len(e.partial.records)} levels written to {out}")
        raise

    with failure_context(Stage.OUTPUT, monitor, out=str(out)):
        write_study(result, out, formats)
    for record in result.records:
        logger.info(
            f"level {record.level}: {record.err_u:.5f} {record.err_sigma:.5f} {record.err_div:.8f}"
        )


def _run_verify(config: RunConfig, monitor: FailureMonitor) -> None:
    grid = build_grid(config.dim, config.grid or [4] * config.dim)
    material = config.material()
    threads = config.threads or env_config.threads
    with failure_context(Stage.VERIFY, monitor, grid=grid.cells_per_axis):
        results = run_verification(
            grid, material, threads=threads, samples=config.samples, seed=config.seed,
            dense_limit=min(config.dense_limit, env_config.dense_limit),
        )
    with failure_context(Stage.OUTPUT, monitor, out=config.out):
        write_verification(results, config.out)

    failed = [r.name for r in results if not r.passed]
    if failed:
        with failure_context(Stage.VERIFY, monitor, grid=grid.cells_per_axis):
            raise VerificationError(f"{len(failed)} verification checks failed: {', '.join(failed)}", failed)


def _solve_once(config: RunConfig, monitor: FailureMonitor):
    solution = make_solution(config.problem)
    material = config.material()
    with failure_context(Stage.GRID, monitor):
        grid = _grid_of(config)
    with failure_context(Stage.ASSEMBLY, monitor, grid=grid.cells_per_axis):
        system = assemble(
            grid, material, solution.problem, load=lambda x: solution.load(x, material),
            load_rule=config.load_rule, g=config.quad,
        )
    with failure_context(Stage.SOLVER, monitor, grid=grid.cells_per_axis):
        sigma, u, report = solve(system, config.solve_options())
    return grid, system, sigma, u, report


def _stem(config: RunConfig, grid) -> str:
    return f"{config.problem}_{'x'.join(str(n) for n in grid.cells_per_axis)}"


def _run_solve(config: RunConfig, monitor: FailureMonitor) -> None:
    grid, system, sigma, u, report = _solve_once(config, monitor)
    stem = _stem(config, grid)
    with failure_context(Stage.OUTPUT, monitor, out=config.out):
        write_fields(sigma, u, config.out, stem)
        if "vtk" in config.formats:
            write_vtk(sigma, u, Path(config.out) / f"{stem}.vtk", title=stem)
        if "mtx" in config.formats:
            write_matrix_market(system, config.out, stem)
    logger.info(f"{stem}: {report.iterations} iterations, residual {report.residual:.2e}")


def _run_export(config: RunConfig, monitor: FailureMonitor) -> None:
    grid, system, sigma, u, _ = _solve_once(config, monitor)
    stem = _stem(config, grid)
    with failure_context(Stage.OUTPUT, monitor, out=config.out):
        write_vtk(sigma, u, Path(config.out) / f"{stem}.vtk", title=stem)
        if "mtx" in config.formats:
            write_matrix_market(system, config.out, stem)
        if "csv" in config.formats:
            write_fields(sigma, u, config.out, stem)


HANDLERS = {
    "study": _run_study,
    "verify": _run_verify,
    "solve": _run_solve,
    "export": _run_export,
}


def run(config: RunConfig, monitor: Optional[FailureMonitor] = None) -> int:
    """Execute a parsed configuration and return the process exit status."""
    monitor = monitor or FailureMonitor()
    logger.info(f"minmix {config.subcommand}: problem {config.problem}, dim {config.dim}")
    try:
        HANDLERS[config.subcommand](config, monitor)
    except (MinmixError, OSError) as e:
        if isinstance(e, OSError):
            e = OutputError(str(e))
        logger.error(f"{config.subcommand} failed: {e}")
        summary = monitor.summary()
        logger.debug(f"Failure summary: {summary}")
        return exit_code_for(e)
    return 0
