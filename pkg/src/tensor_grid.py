"""
Tensor-product grids of the unit box

Uniform rectangular grids with per-axis spacing, the affine cell maps from the
reference box [-1, 1]^n, and enumeration of the three entity families the
stress element attaches degrees of freedom to: cells, axis faces and pair
points (vertices in a coordinate plane, cell centered in the other axes).
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import List, Sequence, Tuple, Union

import numpy as np

from src.failures import GridError

logger = logging.getLogger(__name__)


class EntityType(Enum):
    CELL = "cell"
    AXIS_FACE = "axis_face"
    PAIR_POINT = "pair_point"


@dataclass(frozen=True)
class EntityKind:
    """Entity family; axes are () for cells, (i,) for faces and (i, j) for pair points"""
    type: EntityType
    axes: Tuple[int, ...] = ()

    @classmethod
    def cell(cls) -> "EntityKind":
        return cls(EntityType.CELL)

    @classmethod
    def axis_face(cls, i: int) -> "EntityKind":
        return cls(EntityType.AXIS_FACE, (i,))

    @classmethod
    def pair_point(cls, i: int, j: int) -> "EntityKind":
        return cls(EntityType.PAIR_POINT, (i, j))

    @property
    def label(self) -> str:
        if self.type == EntityType.CELL:
            return "cell"
        if self.type == EntityType.AXIS_FACE:
            return f"face{self.axes[0]}"
        return f"pair{self.axes[0]}{self.axes[1]}"


@dataclass(frozen=True)
class EntityIndex:
    kind: EntityKind
    index: Tuple[int, ...]
    boundary: bool


@dataclass(frozen=True)
class CellMap:
    """Affine map x = center + half_lengths * xhat of one cell"""
    center: Tuple[float, ...]
    half_lengths: Tuple[float, ...]

    def to_physical(self, xhat) -> np.ndarray:
        return np.asarray(self.center) + np.asarray(self.half_lengths) * np.asarray(xhat, dtype=float)

    def to_reference(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=float) - np.asarray(self.center)) / np.asarray(self.half_lengths)

    @property
    def lower(self) -> np.ndarray:
        return np.asarray(self.center) - np.asarray(self.half_lengths)

    @property
    def upper(self) -> np.ndarray:
        return np.asarray(self.center) + np.asarray(self.half_lengths)

    @property
    def jacobian_det(self) -> float:
        return float(np.prod(self.half_lengths))

    @property
    def volume(self) -> float:
        return float(np.prod(2.0 * np.asarray(self.half_lengths)))


@dataclass(frozen=True)
class TensorGrid:
    """Uniform grid of [0, 1]^dim with cells_per_axis[a] cells along axis a"""
    dim: int
    cells_per_axis: Tuple[int, ...]

    def __post_init__(self):
        if self.dim < 1:
            raise GridError(f"Grid dimension must be at least 1, got {self.dim}")
        if len(self.cells_per_axis) != self.dim:
            raise GridError(
                f"Expected {self.dim} cell counts, got {len(self.cells_per_axis)}"
            )
        if any(int(n) < 1 for n in self.cells_per_axis):
            raise GridError(f"Every axis needs at least one cell: {self.cells_per_axis}")

    @property
    def spacing(self) -> np.ndarray:
        return 1.0 / np.asarray(self.cells_per_axis, dtype=float)

    @property
    def half_lengths(self) -> np.ndarray:
        return 0.5 * self.spacing

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def num_cells(self) -> int:
        return int(np.prod(self.cells_per_axis))

    @property
    def num_vertices(self) -> int:
        return int(np.prod([n + 1 for n in self.cells_per_axis]))

    @property
    def pairs(self) -> List[Tuple[int, int]]:
        """Canonical shear pairs i < j in lexicographic order."""
        return [(i, j) for i in range(self.dim) for j in range(i + 1, self.dim)]

    def validate_kind(self, kind: EntityKind) -> None:
        if kind.type == EntityType.CELL:
            return
        if kind.type == EntityType.AXIS_FACE:
            (i,) = kind.axes
            if not 0 <= i < self.dim:
                raise GridError(f"Axis {i} out of range for a {self.dim}D grid")
            return
        i, j = kind.axes
        if i >= j:
            raise GridError(f"Pair points need a canonical pair i < j, got ({i}, {j})")
        if not (0 <= i and j < self.dim):
            raise GridError(f"Pair ({i}, {j}) out of range for a {self.dim}D grid")

    def lattice_shape(self, kind: EntityKind) -> Tuple[int, ...]:
        """Index ranges of an entity family; grid-line axes get N + 1 entries."""
        self.validate_kind(kind)
        shape = list(self.cells_per_axis)
        for axis in kind.axes:
            shape[axis] += 1
        return tuple(int(n) for n in shape)

    def entity_count(self, kind: EntityKind) -> int:
        return int(np.prod(self.lattice_shape(kind)))

    def lattice_indices(self, kind: EntityKind) -> np.ndarray:
        """All multi-indices of a family as a (count, dim) array, last axis fastest."""
        shape = self.lattice_shape(kind)
        return np.indices(shape).reshape(self.dim, -1).T

    def cell_indices(self) -> np.ndarray:
        return self.lattice_indices(EntityKind.cell())

    def cell_centers(self) -> np.ndarray:
        return (self.cell_indices() + 0.5) * self.spacing

    def flat_index(self, kind: EntityKind, index: Sequence[int]) -> int:
        shape = self.lattice_shape(kind)
        self._check_index(shape, index)
        return int(np.ravel_multi_index(tuple(index), shape))

    def is_boundary(self, kind: EntityKind, index: Sequence[int]) -> bool:
        """Faces and pair points lie on the boundary when a grid-line coordinate is 0 or N;
        cells when they touch the boundary."""
        self._check_index(self.lattice_shape(kind), index)
        if kind.type == EntityType.CELL:
            return any(c == 0 or c == n - 1 for c, n in zip(index, self.cells_per_axis))
        return any(index[a] in (0, self.cells_per_axis[a]) for a in kind.axes)

    def incident_cells(self, kind: EntityKind, index: Sequence[int]) -> List[Tuple[int, ...]]:
        """Cells whose closure contains the entity, in lexicographic order."""
        self._check_index(self.lattice_shape(kind), index)
        choices = []
        for a, c in enumerate(index):
            if a in kind.axes:
                choices.append([k for k in (c - 1, c) if 0 <= k < self.cells_per_axis[a]])
            else:
                choices.append([c])

        cells = [()]
        for options in choices:
            cells = [cell + (k,) for cell in cells for k in options]
        return cells

    def _check_index(self, shape: Tuple[int, ...], index: Sequence[int]) -> None:
        if len(index) != len(shape) or any(not 0 <= c < n for c, n in zip(index, shape)):
            raise GridError(f"Index {tuple(index)} outside lattice {shape}")


def build_grid(dim: int, cells_per_axis: Union[int, Sequence[int]]) -> TensorGrid:
    """Build a grid; a single count is used on every axis."""
    if isinstance(cells_per_axis, (int, np.integer)):
        counts = (int(cells_per_axis),) * max(dim, 0)
    else:
        counts = tuple(int(n) for n in cells_per_axis)
    grid = TensorGrid(dim, counts)
    logger.debug(f"Built {dim}D grid {counts}: {grid.num_cells} cells")
    return grid


def level_cells(level: int) -> int:
    """Level one is the whole box; each level halves the spacing."""
    if level < 1:
        raise GridError(f"Levels start at 1, got {level}")
    return 2 ** (level - 1)


def grid_for_level(dim: int, level: int) -> TensorGrid:
    return build_grid(dim, level_cells(level))


def cell_corners_and_map(grid: TensorGrid, cell: Sequence[int]) -> CellMap:
    """Affine map of a cell: center and half-lengths."""
    grid._check_index(tuple(grid.cells_per_axis), cell)
    h = grid.spacing
    center = (np.asarray(cell, dtype=float) + 0.5) * h
    return CellMap(tuple(float(c) for c in center), tuple(float(x) for x in 0.5 * h))


def enumerate_entities(grid: TensorGrid, kind: EntityKind) -> List[EntityIndex]:
    """Entities of one family in lexicographic order with boundary classification."""
    indices = grid.lattice_indices(kind)
    entities = []
    for row in indices:
        index = tuple(int(c) for c in row)
        entities.append(EntityIndex(kind, index, grid.is_boundary(kind, index)))
    return entities
