"""
Convergence studies

Error norms between discrete fields, level sweeps that solve each manufactured
problem and compare against the interpolated exact solution, and the
interpolation-order study for the stress interpolants.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Union

import numpy as np

from src.assembly import assemble
from src.failures import LayoutError, SolverError
from src.fem_spaces import (
    DisplacementField,
    DofLayout,
    StressField,
    discrete_divergence,
    interpolate_full,
    interpolate_shear,
    nodal_interp_displacement,
)
from src.physics import IsotropicMaterial, ManufacturedSolution, make_solution
from src.reference_element import frame_gradient, gauss_rule
from src.solver import SolveOptions, solve
from src.tensor_grid import grid_for_level

logger = logging.getLogger(__name__)

AnyField = Union[StressField, DisplacementField]


def _quadrature_points(layout: DofLayout, g: int):
    grid = layout.grid
    rule = gauss_rule(layout.dim, g)
    points = grid.cell_centers()[:, None, :] + grid.half_lengths * rule.points[None, :, :]
    return rule, points, float(np.prod(grid.half_lengths))


def _stress_square_integral(layout: DofLayout, values: np.ndarray, g: int) -> float:
    rule = gauss_rule(layout.dim, g)
    det = float(np.prod(layout.grid.half_lengths))
    squares = np.sum(values ** 2, axis=(-2, -1))
    return float(np.sum(squares @ rule.weights) * det)


def field_l2_error(a: AnyField, b: AnyField, g: int = 3) -> float:
    """L2 norm of a - b; stress off-diagonal components enter twice."""
    if type(a) is not type(b) or a.layout != b.layout:
        raise LayoutError("L2 error needs two fields of the same kind on the same layout")
    if isinstance(a, StressField):
        rule = gauss_rule(a.layout.dim, g)
        values = (a - b).evaluate_cells(rule.points)
        return math.sqrt(_stress_square_integral(a.layout, values, g))
    diff = a.values - b.values
    return math.sqrt(a.layout.grid.cell_volume * float(np.sum(diff ** 2)))


def div_l2_error(a: StressField, b: StressField) -> float:
    """L2 norm of the cellwise divergence of a - b."""
    if not isinstance(a, StressField) or not isinstance(b, StressField) or a.layout != b.layout:
        raise LayoutError("Divergence error needs two stress fields on the same layout")
    div = discrete_divergence(a - b)
    return math.sqrt(a.layout.grid.cell_volume * float(np.sum(div.values ** 2)))


def stress_error_to_exact(field: StressField, stress: Callable, g: int = 3) -> float:
    rule, points, _ = _quadrature_points(field.layout, g)
    values = field.evaluate_cells(rule.points) - stress(points)
    return math.sqrt(_stress_square_integral(field.layout, values, g))


def displacement_error_to_exact(field: DisplacementField, u: Callable, g: int = 3) -> float:
    rule, points, det = _quadrature_points(field.layout, g)
    diff = np.asarray(u(points)) - field.values[:, None, :]
    return math.sqrt(float(np.sum(np.sum(diff ** 2, axis=-1) @ rule.weights)) * det)


def divergence_error_to_exact(field: StressField, load: Callable, g: int = 3) -> float:
    rule, points, det = _quadrature_points(field.layout, g)
    div = discrete_divergence(field).values
    diff = np.asarray(load(points)) - div[:, None, :]
    return math.sqrt(float(np.sum(np.sum(diff ** 2, axis=-1) @ rule.weights)) * det)


def observed_order(previous: Optional[float], current: float) -> Optional[float]:
    """log2 of consecutive errors on uniformly halved grids."""
    if previous is None or previous <= 0.0 or current <= 0.0:
        return None
    return math.log2(previous / current)


@dataclass
class ErrorRecord:
    level: int
    cells: int
    err_u: float
    err_sigma: float
    err_div: float
    ord_u: Optional[float] = None
    ord_sigma: Optional[float] = None
    ord_div: Optional[float] = None
    true_u: Optional[float] = None
    true_sigma: Optional[float] = None
    iterations: int = 0
    residual: float = 0.0


@dataclass
class StudyResult:
    tag: str
    records: List[ErrorRecord] = field(default_factory=list)
    load_rule: str = "midpoint"
    interp: str = "center"

    def orders(self, column: str) -> List[Optional[float]]:
        return [getattr(r, f"ord_{column}") for r in self.records]


def solve_level(solution: ManufacturedSolution, level: int, material: IsotropicMaterial,
                options: Optional[SolveOptions] = None, load_rule: str = "midpoint",
                interp: str = "center", g: int = 3) -> ErrorRecord:
    """Assemble, solve and measure one level of a study."""
    grid = grid_for_level(solution.dim, level)
    system = assemble(
        grid, material, solution.problem,
        load=lambda x: solution.load(x, material), load_rule=load_rule, g=g,
    )
    sigma_h, u_h, report = solve(system, options)

    layout = system.layout
    exact_stress = lambda x: solution.stress(x, material)
    sigma_i = interpolate_full(layout, exact_stress, mode=interp, g=g)
    u_i = nodal_interp_displacement(layout, solution.u)

    record = ErrorRecord(
        level=level,
        cells=grid.cells_per_axis[0],
        err_u=field_l2_error(u_i, u_h, g),
        err_sigma=field_l2_error(sigma_i, sigma_h, g),
        err_div=div_l2_error(sigma_i, sigma_h),
        true_u=displacement_error_to_exact(u_h, solution.u, g),
        true_sigma=stress_error_to_exact(sigma_h, exact_stress, g),
        iterations=report.iterations,
        residual=report.residual,
    )
    logger.info(
        f"{solution.tag} level {level}: u {record.err_u:.5f}, sigma {record.err_sigma:.5f}, "
        f"div {record.err_div:.8f}"
    )
    return record


def run_study(tag: str, levels: Sequence[int], material: Optional[IsotropicMaterial] = None,
              options: Optional[SolveOptions] = None, load_rule: str = "midpoint",
              interp: str = "center", g: int = 3) -> StudyResult:
    """Sweep levels in ascending order, filling observed orders from the previous level."""
    solution = make_solution(tag)
    levels = list(levels)
    if levels != sorted(levels) or len(set(levels)) != len(levels):
        raise ValueError(f"Levels must be strictly ascending, got {levels}")
    material = material or IsotropicMaterial(dim=solution.dim)
    if material.dim != solution.dim:
        material = IsotropicMaterial(material.lam, material.mu, solution.dim)

    result = StudyResult(tag, load_rule=load_rule, interp=interp)
    previous: Optional[ErrorRecord] = None
    for level in levels:
        try:
            record = solve_level(solution, level, material, options, load_rule, interp, g)
        except SolverError as e:
            logger.error(f"Study {tag} aborted at level {level}: {e}")
            e.partial = result
            raise
        if previous is not None and previous.level == level - 1:
            record.ord_u = observed_order(previous.err_u, record.err_u)
            record.ord_sigma = observed_order(previous.err_sigma, record.err_sigma)
            record.ord_div = observed_order(previous.err_div, record.err_div)
        result.records.append(record)
        previous = record
    return result


def _frame_errors(layout: DofLayout, func: Callable, grad: Callable, g: int):
    """L2 and broken H1 errors of the pair-point interpolant of a scalar in 2D."""
    coefficients = np.zeros(layout.stress_size)
    block = layout.shear_block(0, 1)
    coefficients[block.offset:block.stop] = interpolate_shear(layout, (0, 1), func)
    field = StressField(layout, coefficients)

    rule, points, det = _quadrature_points(layout, g)
    values = field.evaluate_cells(rule.points)[..., 0, 1]
    l2 = math.sqrt(float(np.sum((values - func(points)) ** 2 @ rule.weights)) * det)

    local = field.local_coefficients()[:, 4:8]
    half = layout.grid.half_lengths
    gx = np.array([frame_gradient(k)[0] for k in range(4)]) / half[0]
    gy = np.array([frame_gradient(k)[1] for k in range(4)]) / half[1]
    discrete = np.stack([local @ gx, local @ gy], axis=-1)
    diff = np.asarray(grad(points)) - discrete[:, None, :]
    h1 = math.sqrt(float(np.sum(np.sum(diff ** 2, axis=-1) @ rule.weights)) * det)
    return l2, h1


def _sine(x):
    return np.sin(np.pi * x[..., 0]) * np.sin(np.pi * x[..., 1])


def _sine_grad(x):
    return np.pi * np.stack([
        np.cos(np.pi * x[..., 0]) * np.sin(np.pi * x[..., 1]),
        np.sin(np.pi * x[..., 0]) * np.cos(np.pi * x[..., 1]),
    ], axis=-1)


def interpolation_orders(levels: Sequence[int], material: Optional[IsotropicMaterial] = None,
                         tag: str = "e1", g: int = 3) -> List[Dict[str, Optional[float]]]:
    """Errors of the interpolants on a level sweep: pair-point interpolation of sin(pi x)sin(pi y)
    in L2 and broken H1, and the face-average stress interpolant in L2 and divergence."""
    solution = make_solution(tag)
    material = material or IsotropicMaterial(dim=solution.dim)
    rows: List[Dict[str, Optional[float]]] = []
    for level in levels:
        layout = DofLayout(grid_for_level(solution.dim, level))
        pi12_l2, pi12_h1 = _frame_errors(layout, _sine, _sine_grad, g) if layout.dim == 2 else (None, None)
        exact_stress = lambda x: solution.stress(x, material)
        pi_h = interpolate_full(layout, exact_stress, mode="average", g=g)
        row = {
            "level": level,
            "pi12_l2": pi12_l2,
            "pi12_h1": pi12_h1,
            "sigma_l2": stress_error_to_exact(pi_h, exact_stress, g),
            "sigma_div": divergence_error_to_exact(pi_h, lambda x: solution.load(x, material), g),
        }
        if rows:
            for key in ("pi12_l2", "pi12_h1", "sigma_l2", "sigma_div"):
                row[f"ord_{key}"] = observed_order(rows[-1][key], row[key]) if row[key] is not None else None
        rows.append(row)
    return rows
