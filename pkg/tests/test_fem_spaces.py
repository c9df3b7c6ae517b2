import numpy as np
import pytest

from src.failures import LayoutError
from src.fem_spaces import (
    DisplacementField,
    DofLayout,
    StressField,
    cell_average_displacement,
    discrete_divergence,
    evaluate_stress,
    field_records,
    interpolate_full,
    interpolate_shear,
    nodal_interp_displacement,
)
from src.reference_element import gauss_rule
from src.tensor_grid import EntityKind, build_grid


def linear_stress(x):
    """Affine stress reproduced exactly by the element."""
    s11 = 1.0 + 2.0 * x[..., 0]
    s22 = 4.0 - x[..., 1]
    s12 = 3.0 - x[..., 0] + 2.0 * x[..., 1]
    return np.stack([np.stack([s11, s12], axis=-1), np.stack([s12, s22], axis=-1)], axis=-2)


class TestDofLayout:
    """Numbering of unknowns."""

    def test_sizes(self, grid2):
        """2x2 grid: 12 face values, 9 frame coefficients, 8 displacements."""
        layout = DofLayout(grid2)
        assert layout.stress_size == 21
        assert layout.displacement_size == 8
        assert layout.total_size == 29
        assert [b.name for b in layout.blocks] == ["sigma00", "sigma11", "sigma01"]

    def test_stress_dof_lookup(self, grid2):
        """Block offsets plus flat lattice index."""
        layout = DofLayout(grid2)
        assert layout.stress_dof(EntityKind.axis_face(0), (0, 0)) == 0
        assert layout.stress_dof(EntityKind.axis_face(1), (0, 0)) == 6
        assert layout.stress_dof(EntityKind.pair_point(0, 1), (2, 2)) == 20
        assert layout.displacement_dof((1, 0), 1) == 5
        with pytest.raises(LayoutError):
            layout.block(EntityKind.pair_point(0, 2))

    def test_cell_dofs_read_only(self, grid2):
        """One row per cell, one column per local shape."""
        layout = DofLayout(grid2)
        dofs = layout.cell_stress_dofs
        assert dofs.shape == (4, 8)
        with pytest.raises(ValueError):
            dofs[0, 0] = 1

    def test_neighbouring_cells_share_face(self, grid2):
        """Right face of cell (0, 0) is the left face of cell (1, 0)."""
        layout = DofLayout(grid2)
        dofs = layout.cell_stress_dofs
        left = layout.grid.flat_index(EntityKind.cell(), (0, 0))
        right = layout.grid.flat_index(EntityKind.cell(), (1, 0))
        assert dofs[left, 1] == dofs[right, 0]

    def test_checkerboard_count(self):
        """One kernel vector per pair and slab."""
        assert len(DofLayout(build_grid(2, 3)).checkerboard_vectors()) == 1
        assert len(DofLayout(build_grid(3, 2)).checkerboard_vectors()) == 6
        assert DofLayout(build_grid(1, 4)).checkerboard_vectors() == []
        assert DofLayout(build_grid(2, 2)).shear_space_dimension(0, 1) == 8

    @pytest.mark.parametrize("dim, n", [(2, 3), (3, 2)])
    def test_checkerboard_represents_zero(self, dim, n):
        """Checkerboard coefficients evaluate to zero everywhere with zero divergence."""
        layout = DofLayout(build_grid(dim, n))
        points = np.random.default_rng(0).uniform(-1, 1, size=(5, dim))
        for vector in layout.checkerboard_vectors():
            field = StressField(layout, vector)
            assert np.allclose(field.evaluate_cells(points), 0.0, atol=1e-14)
            assert np.allclose(discrete_divergence(field).values, 0.0, atol=1e-12)


class TestFields:
    """Stress and displacement fields."""

    def test_size_checks(self, grid2):
        """Wrong lengths raise LayoutError."""
        layout = DofLayout(grid2)
        with pytest.raises(LayoutError):
            StressField(layout, np.zeros(5))
        with pytest.raises(LayoutError):
            DisplacementField(layout, np.zeros(7))

    def test_layout_mismatch(self, grid2, grid4):
        """Fields on different grids cannot be subtracted."""
        with pytest.raises(LayoutError):
            StressField.zeros(DofLayout(grid2)) - StressField.zeros(DofLayout(grid4))

    def test_displacement_shape(self, grid2):
        """Cell-major storage with components fastest."""
        layout = DofLayout(grid2)
        field = DisplacementField(layout, np.arange(8.0))
        assert field.values.shape == (4, 2)
        assert field.values[1].tolist() == [2.0, 3.0]
        assert np.array_equal(field.flat, np.arange(8.0))

    def test_linear_stress_reproduced(self, grid4):
        """Interpolating an affine stress is exact in both face modes."""
        layout = DofLayout(grid4)
        rule = gauss_rule(2, 3)
        points = grid4.cell_centers()[:, None, :] + grid4.half_lengths * rule.points[None, :, :]
        for mode in ("average", "center"):
            field = interpolate_full(layout, linear_stress, mode=mode)
            assert np.allclose(field.evaluate_cells(rule.points), linear_stress(points), atol=1e-13)

    def test_divergence_of_linear_stress(self, grid4):
        """Cellwise divergence of the interpolant equals div of the affine stress."""
        field = interpolate_full(DofLayout(grid4), linear_stress)
        div = discrete_divergence(field).values
        assert np.allclose(div[:, 0], 4.0)
        assert np.allclose(div[:, 1], -2.0)

    def test_pointwise_evaluation(self, grid4):
        """evaluate_stress agrees with batched evaluation."""
        field = interpolate_full(DofLayout(grid4), linear_stress)
        point = np.array([0.3, -0.6])
        cell = (2, 1)
        flat = grid4.flat_index(EntityKind.cell(), cell)
        assert np.allclose(evaluate_stress(field, cell, point), field.evaluate_cells(point[None])[flat, 0])

    def test_shear_interpolant_continuous_at_midpoints(self, grid4):
        """Pair-point interpolation agrees across edges at edge midpoints."""
        layout = DofLayout(grid4)
        coefficients = np.zeros(layout.stress_size)
        block = layout.shear_block(0, 1)
        coefficients[block.offset:block.stop] = interpolate_shear(
            layout, (0, 1), lambda x: np.sin(3 * x[..., 0]) * np.exp(x[..., 1]))
        field = StressField(layout, coefficients)
        left = evaluate_stress(field, (1, 2), [1.0, 0.0])[0, 1]
        right = evaluate_stress(field, (2, 2), [-1.0, 0.0])[0, 1]
        assert left == pytest.approx(right, abs=1e-14)
        below = evaluate_stress(field, (1, 1), [0.0, 1.0])[0, 1]
        above = evaluate_stress(field, (1, 2), [0.0, -1.0])[0, 1]
        assert below == pytest.approx(above, abs=1e-14)

    def test_displacement_interpolants(self, grid4):
        """Center values and cell means agree for affine displacements."""
        layout = DofLayout(grid4)
        u = lambda x: np.stack([1.0 + x[..., 0], 2.0 * x[..., 1]], axis=-1)  # noqa: E731
        centers = grid4.cell_centers()
        assert np.allclose(nodal_interp_displacement(layout, u).values, u(centers))
        assert np.allclose(cell_average_displacement(layout, u).values, u(centers))

    def test_field_records(self, grid2):
        """One record per unknown."""
        layout = DofLayout(grid2)
        stress = list(field_records(StressField.zeros(layout)))
        assert len(stress) == layout.stress_size
        assert stress[0] == ("sigma00", "face0", (0, 0), 0.0)
        displacement = list(field_records(DisplacementField.zeros(layout)))
        assert len(displacement) == layout.displacement_size
        assert displacement[1][:3] == ("u1", "cell", (0, 0))
