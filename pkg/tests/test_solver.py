import numpy as np
import pytest
from pydantic import ValidationError

from src.assembly import assemble
from src.failures import LayoutError, SolverError
from src.fem_spaces import discrete_divergence, evaluate_stress
from src.physics import IsotropicMaterial, make_solution
from src.solver import (
    SolveOptions,
    apply_kkt,
    block_preconditioner,
    diagonal_preconditioner,
    kkt_matrix,
    kkt_operator,
    pin_frame_kernel,
    solve,
)
from src.tensor_grid import build_grid


def e1_system(n, rule="midpoint"):
    solution = make_solution("e1")
    material = IsotropicMaterial()
    return assemble(build_grid(2, n), material, "displacement",
                    load=lambda x: solution.load(x, material), load_rule=rule)


def traction_system(n):
    solution = make_solution("traction")
    material = IsotropicMaterial()
    return assemble(build_grid(2, n), material, "traction",
                    load=lambda x: solution.load(x, material), load_rule="midpoint")


class TestSolveOptions:
    """Validated solver settings."""

    def test_defaults(self):
        """Tolerance 1e-10 with the block preconditioner and pinning."""
        options = SolveOptions()
        assert options.tol == 1e-10
        assert options.precond == "block"
        assert options.pin is True
        assert options.method == "minres"

    def test_rejects_bad_values(self):
        """Unknown keys, non-positive tolerances and unpinned dense solves are rejected."""
        with pytest.raises(ValidationError):
            SolveOptions(tolerance=1e-8)
        with pytest.raises(ValidationError):
            SolveOptions(tol=0.0)
        with pytest.raises(ValidationError):
            SolveOptions(method="dense", pin=False)


class TestKKT:
    """Bordered operator."""

    def test_operator_matches_matrix(self):
        """Blockwise matvec equals the assembled matrix, which is symmetric."""
        system, _ = pin_frame_kernel(traction_system(2))
        K = kkt_matrix(system)
        assert abs(K - K.T).max() < 1e-15
        x = np.random.default_rng(0).standard_normal(system.size)
        assert np.allclose(kkt_operator(system).matvec(x), K @ x)
        assert np.allclose(apply_kkt(system, x), K @ x)

    def test_apply_shape_check(self):
        """Vectors of the wrong size raise LayoutError."""
        with pytest.raises(LayoutError):
            apply_kkt(e1_system(2), np.zeros(3))

    def test_pinning(self):
        """One frame coefficient per pair is pinned in 2D; traction drops one midpoint row."""
        system, pinned = pin_frame_kernel(e1_system(2))
        assert len(pinned) == 1
        assert system.M[pinned[0], pinned[0]] == 1.0
        traction, _ = pin_frame_kernel(traction_system(2))
        assert len(traction.dropped_constraints) == 1
        assert traction.dropped_constraints[0].startswith("midpoint")
        assert traction.num_constraints == 18

    def test_pinning_is_idempotent(self):
        """Pinning a pinned system returns it unchanged."""
        system, pinned = pin_frame_kernel(e1_system(2))
        again, pinned_again = pin_frame_kernel(system)
        assert again is system
        assert pinned_again == pinned

    def test_preconditioner_positive(self):
        """The diagonal preconditioner is SPD."""
        system, _ = pin_frame_kernel(traction_system(2))
        assert np.all(diagonal_preconditioner(system).diagonal() > 0.0)

    def test_block_preconditioner_inverts_stress_gram(self):
        """The stress block is the exact inverse of M + B^T B / |K|; the operator is SPD."""
        system, _ = pin_frame_kernel(traction_system(4))
        precond = block_preconditioner(system)
        ns = system.stress_size
        volume = system.layout.grid.cell_volume
        rng = np.random.default_rng(7)
        y = rng.standard_normal(system.size)
        x = precond.matvec(y)
        hdiv = system.M + (system.B.T @ system.B) / volume
        assert np.allclose(hdiv @ x[:ns], y[:ns], atol=1e-10)
        dense = np.column_stack([precond.matvec(e) for e in np.eye(system.size)])
        assert np.allclose(dense, dense.T, atol=1e-10)
        assert np.linalg.eigvalsh(0.5 * (dense + dense.T)).min() > 0.0

    def test_unpinned_block_falls_back(self):
        """Without pinning the solve still converges through the diagonal preconditioner."""
        _, _, report = solve(e1_system(2), SolveOptions(pin=False, precond="block"))
        assert report.converged
        assert report.pinned == []


class TestSolve:
    """Solves on small grids."""

    def test_single_cell_e1(self):
        """The one-cell solution for e1 with the midpoint load: sigma12 = 1.25 (x - y)."""
        sigma, u, report = solve(e1_system(1))
        assert report.converged
        assert np.allclose(u.values, [[5.0 / 24.0, -5.0 / 24.0]], atol=1e-9)
        assert np.allclose(sigma.block_values(sigma.layout.normal_block(0).kind), [[1.875], [-1.875]], atol=1e-8)
        frame = sigma.block_values(sigma.layout.shear_block(0, 1).kind)
        assert frame[1, 0] == pytest.approx(1.25, abs=1e-8)
        assert np.allclose(frame, [[0.0, -1.25], [1.25, 0.0]], atol=1e-8)
        corner = evaluate_stress(sigma, (0, 0), [1.0, -1.0])
        assert corner[0, 1] == pytest.approx(1.25, abs=1e-8)
        assert evaluate_stress(sigma, (0, 0), [0.0, 0.0])[0, 1] == pytest.approx(0.0, abs=1e-8)

    def test_minres_matches_dense(self):
        """Krylov and dense paths agree on a 4x4 grid."""
        system = e1_system(4)
        sigma_k, u_k, report = solve(system)
        sigma_d, u_d, _ = solve(system, SolveOptions(method="dense"))
        assert report.residual <= 1e-10
        assert np.allclose(u_k.values, u_d.values, atol=1e-8)
        assert np.allclose(sigma_k.coefficients, sigma_d.coefficients, atol=1e-8)

    def test_pin_corner_does_not_change_stress(self):
        """Different pinned corners give the same stress function."""
        system = e1_system(4)
        first, _, _ = solve(system, SolveOptions(pin_corner="first"))
        last, _, _ = solve(system, SolveOptions(pin_corner="last"))
        points = np.array([[0.0, 0.0], [0.5, -0.5]])
        assert np.allclose(first.evaluate_cells(points), last.evaluate_cells(points), atol=1e-7)

    def test_zero_load(self):
        """A zero right-hand side returns zero fields without iterating."""
        system = assemble(build_grid(2, 2), IsotropicMaterial())
        sigma, u, report = solve(system)
        assert report.iterations == 0
        assert not sigma.coefficients.any()
        assert not u.values.any()

    def test_traction_constraints_hold(self):
        """The traction solution has zero boundary traction and is orthogonal to rigid motions."""
        system = traction_system(4)
        sigma, u, report = solve(system)
        assert report.converged
        primal = np.concatenate([sigma.coefficients, u.flat])
        assert np.abs(system.C @ primal).max() < 1e-8

    def test_history_recorded(self):
        """One residual entry per MINRES iteration."""
        _, _, report = solve(e1_system(2), SolveOptions(record_history=True))
        assert len(report.history) == report.iterations
        assert report.history[-1] < report.history[0]

    def test_failure_raises_with_best_iterate(self, mocker):
        """A stalled Krylov solve raises SolverError carrying the report and best fields."""
        system = e1_system(2)
        size = pin_frame_kernel(system)[0].size
        mocker.patch("src.solver.minres", return_value=(np.zeros(size), 1))
        with pytest.raises(SolverError) as info:
            solve(system, SolveOptions(restarts=0))
        assert info.value.report.converged is False
        sigma, u = info.value.best
        assert sigma.coefficients.shape == (system.stress_size,)
        assert info.value.exit_code == 2


class TestKKTProperties:
    """Operator identities."""

    def test_zero_and_symmetry(self):
        """Zero maps to zero and <Kx, y> = <x, Ky> on random pairs."""
        system, _ = pin_frame_kernel(e1_system(4))
        assert not apply_kkt(system, np.zeros(system.size)).any()
        rng = np.random.default_rng(5)
        worst = 0.0
        for _ in range(50):
            x, y = rng.standard_normal((2, system.size))
            worst = max(worst, abs(apply_kkt(system, x) @ y - x @ apply_kkt(system, y)))
        assert worst < 1e-12

    def test_checkerboard_not_in_pinned_kernel(self):
        """After pinning the checkerboard vector is no longer annihilated."""
        system, _ = pin_frame_kernel(e1_system(4))
        (vector,) = system.layout.checkerboard_vectors()
        x = np.concatenate([vector, np.zeros(system.size - system.stress_size)])
        assert np.abs(apply_kkt(system, x)).max() > 0.0

    def test_three_dimensional_pinning(self):
        """Two slabs per pair on a 2x2x2 grid, six pinned in total."""
        material = IsotropicMaterial(dim=3)
        system = assemble(build_grid(3, 2), material)
        _, pinned = pin_frame_kernel(system)
        assert len(pinned) == 6
        assert len(set(pinned)) == 6

    @pytest.mark.parametrize("dim", [1, 2])
    @pytest.mark.parametrize("n", [1, 2])
    def test_pinned_kkt_is_nonsingular(self, dim, n):
        """The pinned bordered matrix has full rank on the smallest grids."""
        system, _ = pin_frame_kernel(assemble(build_grid(dim, n), IsotropicMaterial(dim=dim)))
        K = kkt_matrix(system).toarray()
        assert np.linalg.matrix_rank(K) == system.size
        assert np.linalg.svd(K, compute_uv=False).min() > 1e-8

    def test_pinned_traction_kkt_is_nonsingular(self):
        """Pinning and the dropped midpoint row leave the 2x2 traction matrix invertible."""
        system, _ = pin_frame_kernel(traction_system(2))
        K = kkt_matrix(system).toarray()
        assert np.linalg.matrix_rank(K) == system.size


class TestLoadBalance:
    """Discrete equilibrium."""

    def test_divergence_matches_cell_means(self):
        """The cellwise divergence of sigma_h equals the cell values of the load."""
        solution = make_solution("e1")
        material = IsotropicMaterial()
        grid = build_grid(2, 4)
        system = assemble(grid, material, "displacement",
                          load=lambda x: solution.load(x, material), load_rule="midpoint")
        sigma, _, _ = solve(system)
        div = discrete_divergence(sigma).values
        expected = solution.load(grid.cell_centers(), material)
        assert np.abs(div - expected).max() < 1e-8
