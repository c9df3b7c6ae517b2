"""
Isotropic elasticity and manufactured solutions

The compliance A sigma = (sigma - lam/(2 mu + n lam) tr(sigma) I) / (2 mu), its
inverse, and closed-form test solutions whose stresses and loads are derived
from hand-coded gradients and Hessians.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List

import numpy as np

from src.failures import MaterialError, ProblemError

logger = logging.getLogger(__name__)


class ProblemKind(Enum):
    DISPLACEMENT = "displacement"
    TRACTION = "traction"


@dataclass(frozen=True)
class IsotropicMaterial:
    """Lame parameters for an n-dimensional isotropic body"""
    lam: float = 1.0
    mu: float = 0.5
    dim: int = 2

    def __post_init__(self):
        if not np.isfinite(self.lam) or self.lam <= 0.0:
            raise MaterialError(f"Lame lambda must be positive, got {self.lam}")
        if not np.isfinite(self.mu) or self.mu <= 0.0:
            raise MaterialError(f"Lame mu must be positive, got {self.mu}")
        if self.dim < 1:
            raise MaterialError(f"Material dimension must be at least 1, got {self.dim}")

    @property
    def trace_coupling(self) -> float:
        return self.lam / (2.0 * self.mu + self.dim * self.lam)

    @property
    def min_compliance_eigenvalue(self) -> float:
        return 1.0 / (2.0 * self.mu + self.dim * self.lam)

    @property
    def max_compliance_eigenvalue(self) -> float:
        return 1.0 / (2.0 * self.mu)

    def _check_tensor(self, tensor) -> np.ndarray:
        tensor = np.asarray(tensor, dtype=float)
        if tensor.shape[-2:] != (self.dim, self.dim):
            raise MaterialError(
                f"Expected {self.dim}x{self.dim} tensors, got trailing shape {tensor.shape[-2:]}"
            )
        return tensor

    def compliance_apply(self, sigma) -> np.ndarray:
        sigma = self._check_tensor(sigma)
        trace = np.trace(sigma, axis1=-2, axis2=-1)
        identity = np.eye(self.dim)
        return (sigma - self.trace_coupling * trace[..., None, None] * identity) / (2.0 * self.mu)

    def stiffness_apply(self, strain) -> np.ndarray:
        strain = self._check_tensor(strain)
        trace = np.trace(strain, axis1=-2, axis2=-1)
        return 2.0 * self.mu * strain + self.lam * trace[..., None, None] * np.eye(self.dim)


def compliance_apply(material: IsotropicMaterial, sigma) -> np.ndarray:
    return material.compliance_apply(sigma)


def stiffness_apply(material: IsotropicMaterial, strain) -> np.ndarray:
    return material.stiffness_apply(strain)


@dataclass(frozen=True)
class ManufacturedSolution:
    """Closed-form displacement with its derivatives; gradient[a, b] = d u_a / d x_b"""
    tag: str
    dim: int
    problem: ProblemKind
    displacement: Callable[[np.ndarray], np.ndarray]
    gradient: Callable[[np.ndarray], np.ndarray]
    hessian: Callable[[np.ndarray], np.ndarray]
    description: str = ""

    def u(self, x) -> np.ndarray:
        return self.displacement(np.asarray(x, dtype=float))

    def grad_u(self, x) -> np.ndarray:
        return self.gradient(np.asarray(x, dtype=float))

    def strain(self, x) -> np.ndarray:
        grad = self.grad_u(x)
        return 0.5 * (grad + np.swapaxes(grad, -1, -2))

    def stress(self, x, material: IsotropicMaterial) -> np.ndarray:
        return material.stiffness_apply(self.strain(x))

    def load(self, x, material: IsotropicMaterial) -> np.ndarray:
        """f = div sigma from second derivatives."""
        hess = self.hessian(np.asarray(x, dtype=float))
        laplacian = np.einsum("...abb->...a", hess)
        grad_div = np.einsum("...bab->...a", hess)
        trace_grad = np.einsum("...cca->...a", hess)
        return material.mu * (laplacian + grad_div) + material.lam * trace_grad


def _bubble_factors(t: np.ndarray):
    """t(1 - t) with first and second derivatives."""
    return t * (1.0 - t), 1.0 - 2.0 * t, -2.0 * np.ones_like(t)


def _e1_parts(x):
    X, dX, ddX = _bubble_factors(x[..., 0])
    Y, dY, ddY = _bubble_factors(x[..., 1])
    g = 4.0 * X * Y
    gx, gy = 4.0 * dX * Y, 4.0 * X * dY
    gxx, gyy, gxy = 4.0 * ddX * Y, 4.0 * X * ddY, 4.0 * dX * dY
    return g, gx, gy, gxx, gxy, gyy


def _e1_u(x):
    g = _e1_parts(x)[0]
    return np.stack([g, -g], axis=-1)


def _e1_grad(x):
    _, gx, gy, _, _, _ = _e1_parts(x)
    row = np.stack([gx, gy], axis=-1)
    return np.stack([row, -row], axis=-2)


def _e1_hess(x):
    _, _, _, gxx, gxy, gyy = _e1_parts(x)
    block = np.stack([np.stack([gxx, gxy], axis=-1), np.stack([gxy, gyy], axis=-1)], axis=-2)
    return np.stack([block, -block], axis=-3)


def _e2_parts(x):
    X, Y = x[..., 0], x[..., 1]
    e = np.exp(X - Y)
    p, dp, ddp = _bubble_factors(X)
    q, dq, ddq = _bubble_factors(Y)
    s = np.pi
    sx, cx, sy, cy = np.sin(s * X), np.cos(s * X), np.sin(s * Y), np.cos(s * Y)
    first = {
        "u": e * p * q,
        "x": e * (p + dp) * q,
        "y": e * p * (dq - q),
        "xx": e * (p + 2.0 * dp + ddp) * q,
        "yy": e * p * (q - 2.0 * dq + ddq),
        "xy": e * (p + dp) * (dq - q),
    }
    second = {
        "u": sx * sy,
        "x": s * cx * sy,
        "y": s * sx * cy,
        "xx": -s * s * sx * sy,
        "yy": -s * s * sx * sy,
        "xy": s * s * cx * cy,
    }
    return first, second


def _e2_u(x):
    first, second = _e2_parts(x)
    return np.stack([first["u"], second["u"]], axis=-1)


def _e2_grad(x):
    rows = [np.stack([c["x"], c["y"]], axis=-1) for c in _e2_parts(x)]
    return np.stack(rows, axis=-2)


def _e2_hess(x):
    blocks = []
    for c in _e2_parts(x):
        blocks.append(np.stack([np.stack([c["xx"], c["xy"]], axis=-1),
                                np.stack([c["xy"], c["yy"]], axis=-1)], axis=-2))
    return np.stack(blocks, axis=-3)


E3_SCALES = np.array([16.0, 32.0, 64.0])


def _e3_bubble(x):
    X, dX, ddX = _bubble_factors(x[..., 0])
    Y, dY, ddY = _bubble_factors(x[..., 1])
    Z, dZ, ddZ = _bubble_factors(x[..., 2])
    b = X * Y * Z
    grad = np.stack([dX * Y * Z, X * dY * Z, X * Y * dZ], axis=-1)
    bxy, bxz, byz = dX * dY * Z, dX * Y * dZ, X * dY * dZ
    hess = np.stack([
        np.stack([ddX * Y * Z, bxy, bxz], axis=-1),
        np.stack([bxy, X * ddY * Z, byz], axis=-1),
        np.stack([bxz, byz, X * Y * ddZ], axis=-1),
    ], axis=-2)
    return b, grad, hess


def _e3_u(x):
    return _e3_bubble(x)[0][..., None] * E3_SCALES


def _e3_grad(x):
    return E3_SCALES[:, None] * _e3_bubble(x)[1][..., None, :]


def _e3_hess(x):
    return E3_SCALES[:, None, None] * _e3_bubble(x)[2][..., None, :, :]


def _traction_parts(x):
    X, dX, ddX = _bubble_factors(x[..., 0])
    Y, dY, ddY = _bubble_factors(x[..., 1])
    phi = 100.0 * X * X * Y * Y - 1.0 / 9.0
    px = 200.0 * X * dX * Y * Y
    py = 200.0 * X * X * Y * dY
    pxx = 200.0 * (dX * dX + X * ddX) * Y * Y
    pyy = 200.0 * X * X * (dY * dY + Y * ddY)
    pxy = 400.0 * X * dX * Y * dY
    return phi, px, py, pxx, pxy, pyy


def _traction_u(x):
    phi = _traction_parts(x)[0]
    return np.stack([phi, -phi], axis=-1)


def _traction_grad(x):
    _, px, py, _, _, _ = _traction_parts(x)
    row = np.stack([px, py], axis=-1)
    return np.stack([row, -row], axis=-2)


def _traction_hess(x):
    _, _, _, pxx, pxy, pyy = _traction_parts(x)
    block = np.stack([np.stack([pxx, pxy], axis=-1), np.stack([pxy, pyy], axis=-1)], axis=-2)
    return np.stack([block, -block], axis=-3)


def _rotation_u(x):
    return np.stack([x[..., 1], -x[..., 0]], axis=-1)


def _rotation_grad(x):
    return np.broadcast_to(np.array([[0.0, 1.0], [-1.0, 0.0]]), x.shape[:-1] + (2, 2)).copy()


def _rotation_hess(x):
    return np.zeros(x.shape[:-1] + (2, 2, 2))


SOLUTIONS: Dict[str, ManufacturedSolution] = {
    "e1": ManufacturedSolution(
        "e1", 2, ProblemKind.DISPLACEMENT, _e1_u, _e1_grad, _e1_hess,
        "u = 4x(1-x)y(1-y) (1, -1)",
    ),
    "e2": ManufacturedSolution(
        "e2", 2, ProblemKind.DISPLACEMENT, _e2_u, _e2_grad, _e2_hess,
        "u = (exp(x-y) x(1-x)y(1-y), sin(pi x) sin(pi y))",
    ),
    "e3": ManufacturedSolution(
        "e3", 3, ProblemKind.DISPLACEMENT, _e3_u, _e3_grad, _e3_hess,
        "u = (16, 32, 64) x(1-x)y(1-y)z(1-z)",
    ),
    "traction": ManufacturedSolution(
        "traction", 2, ProblemKind.TRACTION, _traction_u, _traction_grad, _traction_hess,
        "u = (100 x^2(1-x)^2 y^2(1-y)^2 - 1/9) (1, -1)",
    ),
}

SOLUTION_TAGS = tuple(SOLUTIONS)


def make_solution(tag: str) -> ManufacturedSolution:
    if tag not in SOLUTIONS:
        raise ProblemError(f"Unknown solution tag {tag!r}; choose one of {', '.join(SOLUTION_TAGS)}")
    return SOLUTIONS[tag]


def rigid_rotation() -> ManufacturedSolution:
    """The infinitesimal rotation (y, -x), strain free."""
    return ManufacturedSolution(
        "rotation", 2, ProblemKind.TRACTION, _rotation_u, _rotation_grad, _rotation_hess, "u = (y, -x)"
    )


def rigid_motions(x) -> np.ndarray:
    """Rigid motion basis {(1,0), (0,1), (y,-x)} at points, shape (3, ..., 2)."""
    x = np.asarray(x, dtype=float)
    ones, zeros = np.ones(x.shape[:-1]), np.zeros(x.shape[:-1])
    return np.stack([
        np.stack([ones, zeros], axis=-1),
        np.stack([zeros, ones], axis=-1),
        _rotation_u(x),
    ])


@dataclass
class SolutionCheck:
    """Finite-difference audit of a manufactured solution"""
    tag: str
    h_fd: float
    gradient_error: float
    load_error: float
    tolerance: float
    samples: int
    failures: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures


def validate_solution(solution: ManufacturedSolution, samples: int = 20, h_fd: float = 1e-4,
                      material: IsotropicMaterial = None, seed: int = 0,
                      tol_factor: float = 100.0) -> SolutionCheck:
    """Compare hand-derived gradients and loads against central differences."""
    material = material or IsotropicMaterial(dim=solution.dim)
    rng = np.random.default_rng(seed)
    points = rng.uniform(0.1, 0.9, size=(samples, solution.dim))
    eye = np.eye(solution.dim) * h_fd

    fd_grad = np.stack([
        (solution.u(points + eye[b]) - solution.u(points - eye[b])) / (2.0 * h_fd)
        for b in range(solution.dim)
    ], axis=-1)
    exact_grad = solution.grad_u(points)

    fd_div = sum(
        (solution.stress(points + eye[b], material)[..., :, b]
         - solution.stress(points - eye[b], material)[..., :, b]) / (2.0 * h_fd)
        for b in range(solution.dim)
    )
    exact_load = solution.load(points, material)

    gradient_error = float(np.max(np.abs(fd_grad - exact_grad)))
    load_error = float(np.max(np.abs(fd_div - exact_load)))
    scale = max(1.0, float(np.max(np.abs(exact_grad))), float(np.max(np.abs(exact_load))))
    tolerance = tol_factor * h_fd ** 2 * scale

    check = SolutionCheck(solution.tag, h_fd, gradient_error, load_error, tolerance, samples)
    if gradient_error > tolerance:
        check.failures.append(f"gradient mismatch {gradient_error:.3e}")
    if load_error > tolerance:
        check.failures.append(f"load mismatch {load_error:.3e}")
    if check.failures:
        logger.warning(f"Solution {solution.tag} failed its FD audit: {check.failures}")
    return check
