"""
Global degrees of freedom, fields and interpolation

Stress unknowns are laid out block by block: one block of face values per
normal component, then one block of frame coefficients per shear pair.
Displacements are cell constants stored cell-major. Frame coefficients are
redundant: per pair and per slab of the remaining axes, the checkerboard
coefficient vector represents the zero function.
"""

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Dict, Iterator, List, Tuple

import numpy as np

from src.failures import LayoutError
from src.reference_element import (
    FRAME_OFFSETS,
    gauss_rule,
    local_shapes,
    stress_shape_divergence,
    stress_shape_values,
)
from src.tensor_grid import EntityKind, TensorGrid

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Block:
    """A contiguous range of stress unknowns attached to one entity family"""
    name: str
    kind: EntityKind
    offset: int
    shape: Tuple[int, ...]

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def stop(self) -> int:
        return self.offset + self.size


class DofLayout:
    """Numbering of the stress and displacement unknowns of a grid"""

    def __init__(self, grid: TensorGrid):
        self.grid = grid
        self.dim = grid.dim
        self.blocks: List[Block] = []
        offset = 0
        for i in range(self.dim):
            kind = EntityKind.axis_face(i)
            block = Block(f"sigma{i}{i}", kind, offset, grid.lattice_shape(kind))
            self.blocks.append(block)
            offset = block.stop
        for i, j in grid.pairs:
            kind = EntityKind.pair_point(i, j)
            block = Block(f"sigma{i}{j}", kind, offset, grid.lattice_shape(kind))
            self.blocks.append(block)
            offset = block.stop
        self.stress_size = offset
        self.displacement_size = grid.num_cells * self.dim
        self._by_kind: Dict[EntityKind, Block] = {b.kind: b for b in self.blocks}

    @property
    def total_size(self) -> int:
        return self.stress_size + self.displacement_size

    def block(self, kind: EntityKind) -> Block:
        if kind not in self._by_kind:
            raise LayoutError(f"No stress block for {kind.label}")
        return self._by_kind[kind]

    def normal_block(self, i: int) -> Block:
        return self.block(EntityKind.axis_face(i))

    def shear_block(self, i: int, j: int) -> Block:
        return self.block(EntityKind.pair_point(i, j))

    def stress_dof(self, kind: EntityKind, index) -> int:
        block = self.block(kind)
        return block.offset + self.grid.flat_index(kind, index)

    def displacement_dof(self, cell, component: int) -> int:
        flat = self.grid.flat_index(EntityKind.cell(), cell)
        return flat * self.dim + component

    @cached_property
    def cell_stress_dofs(self) -> np.ndarray:
        """Global stress unknown of every local shape on every cell, (ncells, nloc)."""
        cells = self.grid.cell_indices()
        columns = []
        for shape in local_shapes(self.dim):
            idx = cells.copy()
            if shape.is_shear:
                i, j = shape.axes
                di, dj = FRAME_OFFSETS[shape.k]
                idx[:, i] += di
                idx[:, j] += dj
            else:
                idx[:, shape.axes[0]] += shape.k
            kind = EntityKind.pair_point(*shape.axes) if shape.is_shear else EntityKind.axis_face(shape.axes[0])
            block = self.block(kind)
            columns.append(block.offset + np.ravel_multi_index(tuple(idx.T), block.shape))
        dofs = np.stack(columns, axis=1)
        dofs.setflags(write=False)
        return dofs

    def slab_count(self, i: int, j: int) -> int:
        others = [n for a, n in enumerate(self.grid.cells_per_axis) if a not in (i, j)]
        return int(np.prod(others)) if others else 1

    def shear_space_dimension(self, i: int, j: int) -> int:
        """Dimension of the functions spanned by one pair's frame."""
        return self.shear_block(i, j).size - self.slab_count(i, j)

    def checkerboard_vectors(self) -> List[np.ndarray]:
        """Per pair and slab, the alternating frame vector that represents zero."""
        vectors = []
        for i, j in self.grid.pairs:
            block = self.shear_block(i, j)
            idx = self.grid.lattice_indices(block.kind)
            signs = np.where((idx[:, i] + idx[:, j]) % 2 == 0, 1.0, -1.0)
            others = [a for a in range(self.dim) if a not in (i, j)]
            if others:
                slab_ids = np.ravel_multi_index(
                    tuple(idx[:, others].T), tuple(self.grid.cells_per_axis[a] for a in others)
                )
            else:
                slab_ids = np.zeros(len(idx), dtype=int)
            for slab in range(self.slab_count(i, j)):
                vector = np.zeros(self.stress_size)
                mask = slab_ids == slab
                vector[block.offset + np.flatnonzero(mask)] = signs[mask]
                vectors.append(vector)
        return vectors

    def __eq__(self, other) -> bool:
        return isinstance(other, DofLayout) and other.grid == self.grid

    def __hash__(self) -> int:
        return hash(self.grid)


def _require_same_layout(a: "DofLayout", b: "DofLayout") -> None:
    if a != b:
        raise LayoutError("Fields live on different layouts")


@dataclass(eq=False)
class StressField:
    layout: DofLayout
    coefficients: np.ndarray

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        if self.coefficients.shape != (self.layout.stress_size,):
            raise LayoutError(
                f"Stress field needs {self.layout.stress_size} coefficients, got {self.coefficients.shape}"
            )

    @classmethod
    def zeros(cls, layout: DofLayout) -> "StressField":
        return cls(layout, np.zeros(layout.stress_size))

    def block_values(self, kind: EntityKind) -> np.ndarray:
        block = self.layout.block(kind)
        return self.coefficients[block.offset:block.stop].reshape(block.shape)

    def local_coefficients(self) -> np.ndarray:
        return self.coefficients[self.layout.cell_stress_dofs]

    def evaluate_cells(self, points: np.ndarray) -> np.ndarray:
        """Tensor values at reference points on every cell, (ncells, m, dim, dim)."""
        shapes = stress_shape_values(self.layout.dim, points)
        return np.einsum("ca,aqij->cqij", self.local_coefficients(), shapes)

    def __sub__(self, other: "StressField") -> "StressField":
        _require_same_layout(self.layout, other.layout)
        return StressField(self.layout, self.coefficients - other.coefficients)


@dataclass(eq=False)
class DisplacementField:
    layout: DofLayout
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.size != self.layout.displacement_size:
            raise LayoutError(
                f"Displacement field needs {self.layout.displacement_size} values, got {values.size}"
            )
        self.values = values.reshape(self.layout.grid.num_cells, self.layout.dim)

    @classmethod
    def zeros(cls, layout: DofLayout) -> "DisplacementField":
        return cls(layout, np.zeros((layout.grid.num_cells, layout.dim)))

    @property
    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    def __sub__(self, other: "DisplacementField") -> "DisplacementField":
        _require_same_layout(self.layout, other.layout)
        return DisplacementField(self.layout, self.values - other.values)


def evaluate_stress(field: StressField, cell, point) -> np.ndarray:
    """Symmetric stress tensor at a reference point of one cell."""
    layout = field.layout
    flat = layout.grid.flat_index(EntityKind.cell(), cell)
    local = field.coefficients[layout.cell_stress_dofs[flat]]
    shapes = stress_shape_values(layout.dim, np.asarray(point, dtype=float).reshape(1, -1))
    return np.einsum("a,aij->ij", local, shapes[:, 0])


def discrete_divergence(field: StressField) -> DisplacementField:
    """Cellwise divergence; constant per cell and hence a displacement field."""
    layout = field.layout
    div = stress_shape_divergence(layout.dim, layout.grid.half_lengths)
    return DisplacementField(layout, field.local_coefficients() @ div)


def _face_points(layout: DofLayout, i: int, mode: str, g: int) -> Tuple[np.ndarray, np.ndarray]:
    grid = layout.grid
    kind = EntityKind.axis_face(i)
    idx = grid.lattice_indices(kind).astype(float)
    h = grid.spacing
    tangential = [a for a in range(layout.dim) if a != i]

    if mode == "average":
        rule = gauss_rule(len(tangential), g)
        local, weights = rule.points, rule.weights / rule.weights.sum()
    elif mode == "center":
        local, weights = np.zeros((1, len(tangential))), np.ones(1)
    else:
        raise LayoutError(f"Unknown interpolation mode {mode!r}; use 'average' or 'center'")

    base = (idx + 0.5) * h
    base[:, i] = idx[:, i] * h[i]
    points = np.repeat(base[:, None, :], len(weights), axis=1)
    for t, a in enumerate(tangential):
        points[:, :, a] += 0.5 * h[a] * local[None, :, t]
    return points, weights


def interpolate_normal(layout: DofLayout, i: int, func: Callable[[np.ndarray], np.ndarray],
                       mode: str = "average", g: int = 3) -> np.ndarray:
    """Face values of a normal stress component: face averages or face-center values."""
    points, weights = _face_points(layout, i, mode, g)
    return np.asarray(func(points), dtype=float) @ weights


def interpolate_shear(layout: DofLayout, pair: Tuple[int, int],
                      func: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """Frame coefficients equal to point values at the pair points."""
    i, j = pair
    grid = layout.grid
    idx = grid.lattice_indices(EntityKind.pair_point(i, j)).astype(float)
    points = (idx + 0.5) * grid.spacing
    points[:, i] = idx[:, i] * grid.spacing[i]
    points[:, j] = idx[:, j] * grid.spacing[j]
    return np.asarray(func(points), dtype=float)


def interpolate_full(layout: DofLayout, stress: Callable[[np.ndarray], np.ndarray],
                     mode: str = "average", g: int = 3) -> StressField:
    """Interpolate a stress field: normal components per face, shear components per pair point."""
    coefficients = np.zeros(layout.stress_size)
    for i in range(layout.dim):
        block = layout.normal_block(i)
        coefficients[block.offset:block.stop] = interpolate_normal(
            layout, i, lambda x, i=i: stress(x)[..., i, i], mode, g
        )
    for i, j in layout.grid.pairs:
        block = layout.shear_block(i, j)
        coefficients[block.offset:block.stop] = interpolate_shear(
            layout, (i, j), lambda x, i=i, j=j: stress(x)[..., i, j]
        )
    return StressField(layout, coefficients)


def nodal_interp_displacement(layout: DofLayout, u: Callable[[np.ndarray], np.ndarray]) -> DisplacementField:
    """Cell-center values of a displacement."""
    return DisplacementField(layout, u(layout.grid.cell_centers()))


def cell_average_displacement(layout: DofLayout, u: Callable[[np.ndarray], np.ndarray],
                              g: int = 3) -> DisplacementField:
    """Cell means of a vector field by tensor Gauss quadrature."""
    grid = layout.grid
    rule = gauss_rule(layout.dim, g)
    points = grid.cell_centers()[:, None, :] + grid.half_lengths * rule.points[None, :, :]
    values = np.asarray(u(points), dtype=float)
    return DisplacementField(layout, np.einsum("cqa,q->ca", values, rule.weights) / rule.weights.sum())


def field_records(field) -> Iterator[Tuple[str, str, Tuple[int, ...], float]]:
    """(block, entity kind, multi-index, value) for every unknown of a field."""
    layout = field.layout
    if isinstance(field, StressField):
        for block in layout.blocks:
            values = field.block_values(block.kind)
            for index in np.ndindex(block.shape):
                yield block.name, block.kind.label, tuple(int(c) for c in index), float(values[index])
        return

    cells = layout.grid.cell_indices()
    for flat, cell in enumerate(cells):
        for component in range(layout.dim):
            yield (f"u{component}", "cell", tuple(int(c) for c in cell),
                   float(field.values[flat, component]))
