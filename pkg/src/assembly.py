"""
Saddle point assembly

M = (A sigma, tau) over the stress unknowns, B = (div tau, v) coupling stresses
to cell displacements, the load F = (f, v), and for the pure traction problem
the bordering rows that impose zero boundary traction at edge midpoints and
orthogonality of the displacement to rigid motions.

Every cell of a grid has the same local matrices, so global blocks are
scattered from one local matrix through the cell-to-unknown map and summed in
canonical cell order.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Tuple, Union

import numpy as np
import scipy.sparse as sp

from src.failures import ProblemError
from src.fem_spaces import DofLayout
from src.physics import IsotropicMaterial, ProblemKind
from src.reference_element import (
    gauss_rule,
    local_compliance_gram,
    local_divergence_coupling,
    local_stress_gram,
)
from src.tensor_grid import EntityKind, TensorGrid

logger = logging.getLogger(__name__)

LOAD_RULES = ("gauss", "midpoint")


@dataclass(eq=False)
class SaddleSystem:
    """Blocks of the bordered system [[M, B^T, Cs^T], [B, 0, Cu^T], [Cs, Cu, 0]]"""
    layout: DofLayout
    material: IsotropicMaterial
    problem: ProblemKind
    M: sp.csr_matrix
    B: sp.csr_matrix
    F: np.ndarray
    C: sp.csr_matrix
    constraint_labels: List[str] = field(default_factory=list)
    pinned: Tuple[int, ...] = ()
    dropped_constraints: Tuple[str, ...] = ()

    @property
    def stress_size(self) -> int:
        return self.layout.stress_size

    @property
    def displacement_size(self) -> int:
        return self.layout.displacement_size

    @property
    def num_constraints(self) -> int:
        return self.C.shape[0]

    @property
    def size(self) -> int:
        return self.stress_size + self.displacement_size + self.num_constraints

    def with_blocks(self, **changes) -> "SaddleSystem":
        return replace(self, **changes)


def _scatter_square(layout: DofLayout, local: np.ndarray) -> sp.csr_matrix:
    dofs = layout.cell_stress_dofs
    ncells, nloc = dofs.shape
    rows = np.broadcast_to(dofs[:, :, None], (ncells, nloc, nloc)).ravel()
    cols = np.broadcast_to(dofs[:, None, :], (ncells, nloc, nloc)).ravel()
    data = np.broadcast_to(local[None, :, :], (ncells, nloc, nloc)).ravel()
    size = layout.stress_size
    matrix = sp.coo_matrix((data, (rows, cols)), shape=(size, size)).tocsr()
    # duplicate sums may differ in the last bit between (r, c) and (c, r)
    return ((matrix + matrix.T) * 0.5).tocsr()


def assemble_compliance(layout: DofLayout, material: IsotropicMaterial, g: int = 2) -> sp.csr_matrix:
    local = local_compliance_gram(layout.dim, layout.grid.half_lengths, material, g)
    return _scatter_square(layout, local)


def assemble_stress_gram(layout: DofLayout, g: int = 2) -> sp.csr_matrix:
    """L2 Gram of the stress unknowns, off-diagonal components counted twice."""
    local = local_stress_gram(layout.dim, layout.grid.half_lengths, g)
    return _scatter_square(layout, local)


def assemble_divergence(layout: DofLayout) -> sp.csr_matrix:
    """Rows cell * dim + component, columns stress unknowns."""
    local = local_divergence_coupling(layout.dim, layout.grid.half_lengths)
    dofs = layout.cell_stress_dofs
    ncells, nloc = dofs.shape
    dim = layout.dim
    rows = (np.arange(ncells)[:, None, None] * dim + np.arange(dim)[None, :, None])
    rows = np.broadcast_to(rows, (ncells, dim, nloc)).ravel()
    cols = np.broadcast_to(dofs[:, None, :], (ncells, dim, nloc)).ravel()
    data = np.broadcast_to(local[None, :, :], (ncells, dim, nloc)).ravel()
    return sp.coo_matrix(
        (data, (rows, cols)), shape=(layout.displacement_size, layout.stress_size)
    ).tocsr()


def displacement_mass(layout: DofLayout) -> sp.csr_matrix:
    """L2 Gram of cell-constant displacements."""
    return sp.identity(layout.displacement_size, format="csr") * layout.grid.cell_volume


def assemble_load(grid: TensorGrid, f: Callable[[np.ndarray], np.ndarray],
                  rule: str = "gauss", g: int = 3) -> np.ndarray:
    """Cell integrals of the load, cell-major with components fastest."""
    centers = grid.cell_centers()
    if rule == "midpoint":
        values = np.asarray(f(centers), dtype=float) * grid.cell_volume
    elif rule == "gauss":
        quad = gauss_rule(grid.dim, g)
        points = centers[:, None, :] + grid.half_lengths * quad.points[None, :, :]
        samples = np.asarray(f(points), dtype=float)
        values = np.einsum("cqa,q->ca", samples, quad.weights) * float(np.prod(grid.half_lengths))
    else:
        raise ProblemError(f"Unknown load rule {rule!r}; choose one of {LOAD_RULES}")
    return values.reshape(-1)


def boundary_edge_cycle(grid: TensorGrid) -> List[Tuple[Tuple[int, int], Tuple[int, int]]]:
    """Boundary edges of a 2D grid as vertex pairs, walked counter-clockwise from (0, 0)."""
    nx, ny = grid.cells_per_axis
    edges = [((a, 0), (a + 1, 0)) for a in range(nx)]
    edges += [((nx, b), (nx, b + 1)) for b in range(ny)]
    edges += [((a + 1, ny), (a, ny)) for a in reversed(range(nx))]
    edges += [((0, b + 1), (0, b)) for b in reversed(range(ny))]
    return edges


def traction_constraints(grid: TensorGrid, layout: Optional[DofLayout] = None) -> Tuple[sp.csr_matrix, List[str]]:
    """Zero traction at boundary edge midpoints and rigid-motion orthogonality.

    Rows act on the primal vector [sigma; u].
    """
    if grid.dim != 2:
        raise ProblemError(f"Traction constraints are defined in 2D only, got {grid.dim}D")
    layout = layout or DofLayout(grid)
    total = layout.stress_size + layout.displacement_size
    rows: List[np.ndarray] = []
    cols: List[np.ndarray] = []
    vals: List[np.ndarray] = []
    labels: List[str] = []

    def add_row(columns, values, label):
        rows.append(np.full(len(columns), len(labels)))
        cols.append(np.asarray(columns, dtype=int))
        vals.append(np.asarray(values, dtype=float))
        labels.append(label)

    for i in range(2):
        kind = EntityKind.axis_face(i)
        block = layout.block(kind)
        for flat, index in enumerate(grid.lattice_indices(kind)):
            if index[i] in (0, grid.cells_per_axis[i]):
                add_row([block.offset + flat], [1.0], f"normal{i} {tuple(int(c) for c in index)}")

    shear = EntityKind.pair_point(0, 1)
    for start, end in boundary_edge_cycle(grid):
        add_row(
            [layout.stress_dof(shear, start), layout.stress_dof(shear, end)],
            [1.0, 1.0],
            f"midpoint {start}-{end}",
        )

    volume = grid.cell_volume
    centers = grid.cell_centers()
    ncells = grid.num_cells
    ux = layout.stress_size + 2 * np.arange(ncells)
    uy = ux + 1
    add_row(ux, np.full(ncells, volume), "rigid translation x")
    add_row(uy, np.full(ncells, volume), "rigid translation y")
    add_row(np.concatenate([ux, uy]),
            np.concatenate([volume * centers[:, 1], -volume * centers[:, 0]]),
            "rigid rotation")

    C = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(len(labels), total),
    ).tocsr()
    return C, labels


def assemble(grid: TensorGrid, material: IsotropicMaterial,
             problem: Union[ProblemKind, str] = ProblemKind.DISPLACEMENT,
             load: Optional[Callable[[np.ndarray], np.ndarray]] = None,
             load_rule: str = "gauss", g: int = 3) -> SaddleSystem:
    """Assemble the mixed system; without a load the right-hand side is zero."""
    problem = ProblemKind(problem)
    if material.dim != grid.dim:
        raise ProblemError(f"Material is {material.dim}D but the grid is {grid.dim}D")
    if problem == ProblemKind.TRACTION:
        if grid.dim != 2:
            raise ProblemError("The pure traction problem is implemented in 2D only")
        if any(n % 2 for n in grid.cells_per_axis):
            logger.warning(f"Traction problem on odd grid {grid.cells_per_axis}: macro checks unavailable")

    layout = DofLayout(grid)
    M = assemble_compliance(layout, material)
    B = assemble_divergence(layout)
    F = assemble_load(grid, load, load_rule, g) if load is not None else np.zeros(layout.displacement_size)

    if problem == ProblemKind.TRACTION:
        C, labels = traction_constraints(grid, layout)
    else:
        C, labels = sp.csr_matrix((0, layout.stress_size + layout.displacement_size)), []

    logger.info(
        f"Assembled {problem.value} system on {grid.cells_per_axis}: "
        f"{layout.stress_size} stress, {layout.displacement_size} displacement, {len(labels)} constraints"
    )
    return SaddleSystem(layout, material, problem, M, B, F, C, labels)
