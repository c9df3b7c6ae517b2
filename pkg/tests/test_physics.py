import numpy as np
import pytest

from src.failures import MaterialError, ProblemError
from src.physics import (
    SOLUTION_TAGS,
    IsotropicMaterial,
    ProblemKind,
    compliance_apply,
    make_solution,
    rigid_motions,
    rigid_rotation,
    stiffness_apply,
    validate_solution,
)
from src.reference_element import gauss_rule


def random_symmetric(rng, count, dim):
    a = rng.standard_normal((count, dim, dim))
    return 0.5 * (a + np.swapaxes(a, -1, -2))


class TestIsotropicMaterial:
    """Compliance and stiffness."""

    def test_compliance_of_identity(self):
        """A I = I/3 in 2D and I/4 in 3D for lambda = 1, mu = 1/2."""
        assert np.allclose(compliance_apply(IsotropicMaterial(1.0, 0.5, 2), np.eye(2)), np.eye(2) / 3.0)
        assert np.allclose(compliance_apply(IsotropicMaterial(1.0, 0.5, 3), np.eye(3)), np.eye(3) / 4.0)

    def test_trace_free_stress(self):
        """Trace-free stresses are scaled by 1/(2 mu)."""
        material = IsotropicMaterial(2.0, 1.5, 2)
        sigma = np.array([[1.0, 2.0], [2.0, -1.0]])
        assert np.allclose(material.compliance_apply(sigma), sigma / 3.0)

    def test_stiffness_of_identity(self):
        """A^-1 I = 3 I in 2D."""
        assert np.allclose(stiffness_apply(IsotropicMaterial(), np.eye(2)), 3.0 * np.eye(2))
        assert np.allclose(stiffness_apply(IsotropicMaterial(), np.zeros((2, 2))), 0.0)

    def test_round_trip(self):
        """Compliance inverts stiffness on random symmetric tensors."""
        rng = np.random.default_rng(1)
        for dim in (2, 3):
            material = IsotropicMaterial(1.0, 0.5, dim)
            strains = random_symmetric(rng, 100, dim)
            assert np.allclose(material.compliance_apply(material.stiffness_apply(strains)), strains,
                               atol=1e-13)

    def test_eigen_bounds(self):
        """Rayleigh quotients of A lie in [1/(2 mu + n lambda), 1/(2 mu)]."""
        rng = np.random.default_rng(2)
        material = IsotropicMaterial(1.0, 0.5, 2)
        sigmas = random_symmetric(rng, 200, 2)
        quotients = (np.einsum("kij,kij->k", material.compliance_apply(sigmas), sigmas)
                     / np.einsum("kij,kij->k", sigmas, sigmas))
        assert quotients.min() >= material.min_compliance_eigenvalue - 1e-14
        assert quotients.max() <= material.max_compliance_eigenvalue + 1e-14
        assert material.min_compliance_eigenvalue == pytest.approx(1.0 / 3.0)

    def test_inadmissible_parameters(self):
        """Non-positive Lame parameters raise MaterialError."""
        with pytest.raises(MaterialError):
            IsotropicMaterial(1.0, 0.0)
        with pytest.raises(MaterialError):
            IsotropicMaterial(-1.0, 0.5)
        with pytest.raises(MaterialError):
            IsotropicMaterial(1.0, 0.5, 2).compliance_apply(np.eye(3))


class TestManufacturedSolutions:
    """Closed-form test problems."""

    def test_point_values(self):
        """Values quoted for the test problems."""
        assert np.allclose(make_solution("e1").u(np.array([0.5, 0.5])), [0.25, -0.25])
        assert np.allclose(make_solution("traction").u(np.array([0.0, 0.0])), [-1.0 / 9.0, 1.0 / 9.0])
        boundary = np.array([[0.0, 0.3, 0.7], [0.2, 1.0, 0.4], [0.5, 0.5, 0.0]])
        assert np.allclose(make_solution("e3").u(boundary), 0.0)

    def test_problem_kinds(self):
        """Dimensions and boundary conditions of each tag."""
        assert make_solution("e3").dim == 3
        assert make_solution("traction").problem == ProblemKind.TRACTION
        assert set(SOLUTION_TAGS) == {"e1", "e2", "e3", "traction"}

    def test_unknown_tag(self):
        """Unknown tags raise ProblemError."""
        with pytest.raises(ProblemError):
            make_solution("e4")

    @pytest.mark.parametrize("tag", ["e1", "e2", "e3", "traction"])
    def test_finite_difference_audit(self, tag):
        """Hand-derived gradients and loads agree with central differences."""
        check = validate_solution(make_solution(tag), samples=20, h_fd=1e-4)
        assert check.passed, check.failures

    def test_e1_gradient_accuracy(self):
        """The e1 gradient matches differences to 1e-6."""
        assert validate_solution(make_solution("e1"), h_fd=1e-4).gradient_error < 1e-6

    def test_rigid_rotation_is_stress_free(self):
        """(y, -x) has zero strain, stress and load."""
        rotation = rigid_rotation()
        x = np.random.default_rng(4).uniform(0, 1, size=(10, 2))
        material = IsotropicMaterial()
        assert np.allclose(rotation.strain(x), 0.0)
        assert np.allclose(rotation.stress(x, material), 0.0)
        assert np.allclose(rotation.load(x, material), 0.0)

    def test_traction_compatibility(self):
        """Load and displacement of the traction problem are orthogonal to rigid motions."""
        solution = make_solution("traction")
        material = IsotropicMaterial()
        rule = gauss_rule(2, 4)
        points = 0.5 + 0.5 * rule.points
        motions = rigid_motions(points)
        load = solution.load(points, material)
        u = solution.u(points)
        for w in motions:
            assert abs(0.25 * rule.integrate(np.sum(load * w, axis=-1))) < 1e-12
            assert abs(0.25 * rule.integrate(np.sum(u * w, axis=-1))) < 1e-12

    def test_traction_stress_vanishes_on_boundary(self):
        """Zero traction on the whole boundary."""
        solution = make_solution("traction")
        t = np.linspace(0, 1, 9)
        edges = np.concatenate([
            np.stack([t, 0 * t], axis=1), np.stack([t, 0 * t + 1], axis=1),
            np.stack([0 * t, t], axis=1), np.stack([0 * t + 1, t], axis=1),
        ])
        assert np.allclose(solution.stress(edges, IsotropicMaterial()), 0.0)
