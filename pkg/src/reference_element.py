"""
Reference box shape functions and local element matrices

Normal stresses use the hat pair along their own axis; each shear pair uses
the four-member corner frame, which is linearly dependent (the alternating sum
vanishes). Local matrices are integrated with tensor Gauss rules and pulled
back through the diagonal affine cell map.
"""

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, List, Tuple

import numpy as np

from src.failures import GridError, QuadratureError

logger = logging.getLogger(__name__)

# Reference corner of frame member k, counter-clockwise from (-1, -1)
FRAME_CORNERS = ((-1, -1), (1, -1), (1, 1), (-1, 1))
# Lattice offset of that corner from the cell's lower pair point
FRAME_OFFSETS = ((0, 0), (1, 0), (1, 1), (0, 1))
FRAME_ALTERNATING = np.array([1.0, -1.0, 1.0, -1.0])

SUPPORTED_ORDERS = (1, 2, 3, 4)


def _check_reference(*coords) -> None:
    for c in coords:
        assert np.all(np.abs(np.asarray(c)) <= 1.0 + 1e-12), "reference coordinate outside [-1, 1]"


def eval_hat(k: int, xhat):
    """psi_0 = (1 - x)/2, psi_1 = (1 + x)/2."""
    if k not in (0, 1):
        raise ValueError(f"Hat index must be 0 or 1, got {k}")
    _check_reference(xhat)
    return 0.5 * (1.0 + (2 * k - 1) * np.asarray(xhat, dtype=float))


def hat_slope(k: int) -> float:
    """Reference derivative of hat k."""
    if k not in (0, 1):
        raise ValueError(f"Hat index must be 0 or 1, got {k}")
    return 0.5 * (2 * k - 1)


def eval_frame(k: int, xhat, yhat):
    """Frame member k = (1 + sx*x + sy*y)/4 with (sx, sy) its corner."""
    if k not in (0, 1, 2, 3):
        raise ValueError(f"Frame index must be in 0..3, got {k}")
    _check_reference(xhat, yhat)
    sx, sy = FRAME_CORNERS[k]
    return 0.25 * (1.0 + sx * np.asarray(xhat, dtype=float) + sy * np.asarray(yhat, dtype=float))


def frame_gradient(k: int) -> Tuple[float, float]:
    if k not in (0, 1, 2, 3):
        raise ValueError(f"Frame index must be in 0..3, got {k}")
    sx, sy = FRAME_CORNERS[k]
    return 0.25 * sx, 0.25 * sy


@dataclass(frozen=True)
class QuadratureRule:
    """Tensor Gauss rule on [-1, 1]^d"""
    points: np.ndarray   # (m, d)
    weights: np.ndarray  # (m,)
    order: int

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def integrate(self, values: np.ndarray) -> float:
        return float(np.dot(self.weights, values))


@lru_cache(maxsize=None)
def _gauss_rule_cached(d: int, g: int) -> QuadratureRule:
    nodes, weights = np.polynomial.legendre.leggauss(g)
    if d == 0:
        return QuadratureRule(np.zeros((1, 0)), np.ones(1), g)

    grids = np.meshgrid(*([nodes] * d), indexing="ij")
    points = np.stack([axis.ravel() for axis in grids], axis=1)
    weight_grids = np.meshgrid(*([weights] * d), indexing="ij")
    w = np.prod(np.stack([axis.ravel() for axis in weight_grids], axis=1), axis=1)
    points.setflags(write=False)
    w.setflags(write=False)
    return QuadratureRule(points, w, g)


def gauss_rule(d: int, g: int) -> QuadratureRule:
    """Tensor Gauss rule with g points per axis, exact through per-axis degree 2g - 1."""
    if g not in SUPPORTED_ORDERS:
        raise QuadratureError(f"Unsupported Gauss order {g}; choose one of {SUPPORTED_ORDERS}")
    if d < 0:
        raise QuadratureError(f"Quadrature dimension must be non-negative, got {d}")
    return _gauss_rule_cached(int(d), int(g))


@dataclass(frozen=True)
class LocalShape:
    """One stress shape function on a cell: a hat on axis (i,) or a frame member on pair (i, j)"""
    axes: Tuple[int, ...]
    k: int

    @property
    def is_shear(self) -> bool:
        return len(self.axes) == 2


def local_shapes(dim: int) -> List[LocalShape]:
    """Local ordering: two hats per axis, then four frame members per pair."""
    shapes = [LocalShape((i,), k) for i in range(dim) for k in (0, 1)]
    for i in range(dim):
        for j in range(i + 1, dim):
            shapes.extend(LocalShape((i, j), k) for k in range(4))
    return shapes


def element_dof_counts(dim: int) -> Tuple[int, int, int]:
    """(independent stress dimension, frame-inclusive stress members, displacement dimension)."""
    pairs = dim * (dim - 1) // 2
    return 2 * dim + 3 * pairs, 2 * dim + 4 * pairs, dim


def stress_shape_values(dim: int, points: np.ndarray) -> np.ndarray:
    """Symmetric tensor values of every local shape at reference points, (nloc, m, dim, dim)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    shapes = local_shapes(dim)
    values = np.zeros((len(shapes), points.shape[0], dim, dim))
    for a, shape in enumerate(shapes):
        if shape.is_shear:
            i, j = shape.axes
            phi = eval_frame(shape.k, points[:, i], points[:, j])
            values[a, :, i, j] = phi
            values[a, :, j, i] = phi
        else:
            (i,) = shape.axes
            values[a, :, i, i] = eval_hat(shape.k, points[:, i])
    return values


def _check_half_lengths(dim: int, half_lengths) -> np.ndarray:
    half = np.asarray(half_lengths, dtype=float).reshape(-1)
    if half.shape != (dim,):
        raise GridError(f"Expected {dim} half-lengths, got {half.shape[0]}")
    if np.any(half <= 0.0):
        raise GridError(f"Degenerate cell with half-lengths {tuple(half)}")
    return half


def stress_shape_divergence(dim: int, half_lengths) -> np.ndarray:
    """Constant physical divergence of every local shape, (nloc, dim)."""
    half = _check_half_lengths(dim, half_lengths)
    shapes = local_shapes(dim)
    div = np.zeros((len(shapes), dim))
    for a, shape in enumerate(shapes):
        if shape.is_shear:
            i, j = shape.axes
            gx, gy = frame_gradient(shape.k)
            div[a, i] += gy / half[j]
            div[a, j] += gx / half[i]
        else:
            (i,) = shape.axes
            div[a, i] = hat_slope(shape.k) / half[i]
    return div


def _local_gram(dim: int, half_lengths, transform: Callable[[np.ndarray], np.ndarray], g: int) -> np.ndarray:
    half = _check_half_lengths(dim, half_lengths)
    rule = gauss_rule(dim, g)
    values = stress_shape_values(dim, rule.points)
    transformed = transform(values)
    gram = np.einsum("aqij,bqij,q->ab", transformed, values, rule.weights) * float(np.prod(half))
    return 0.5 * (gram + gram.T)


def local_stress_gram(dim: int, half_lengths, g: int = 2) -> np.ndarray:
    """L2 Gram of the local shapes under the Frobenius product."""
    return _local_gram(dim, half_lengths, lambda values: values, g)


def local_compliance_gram(dim: int, half_lengths, material, g: int = 2) -> np.ndarray:
    """Cell contribution of (A sigma, tau) over all local shapes."""
    return _local_gram(dim, half_lengths, material.compliance_apply, g)


def local_divergence_coupling(dim: int, half_lengths) -> np.ndarray:
    """(div tau, v) on one cell: rows are displacement components, columns local shapes."""
    half = _check_half_lengths(dim, half_lengths)
    volume = float(np.prod(2.0 * half))
    return stress_shape_divergence(dim, half).T * volume
