"""
Saddle point solver

Restarted preconditioned MINRES on the bordered symmetric system, with the
frame checkerboard kernel removed by pinning one coefficient per pair and
slab. The default preconditioner factors the H(div) Gram of the stress block;
a diagonal one is kept for comparison. A dense path serves as an oracle on
small grids.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import List, Literal, Optional, Tuple

import numpy as np
import scipy.sparse as sp
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.sparse.linalg import LinearOperator, minres, splu

from src.assembly import SaddleSystem
from src.failures import LayoutError, SolverError, ensure_dense_fits
from src.fem_spaces import DisplacementField, StressField

logger = logging.getLogger(__name__)


class SolveOptions(BaseModel):
    """Linear solver settings"""
    model_config = ConfigDict(extra="forbid")

    tol: float = Field(1e-10, gt=0.0, lt=1.0)
    max_iters: Optional[int] = Field(None, gt=0)
    precond: Literal["none", "diagonal", "block"] = "block"
    pin: bool = True
    pin_corner: Literal["first", "last"] = "first"
    method: Literal["minres", "dense"] = "minres"
    restarts: int = Field(8, ge=0)
    record_history: bool = False
    dense_limit: int = Field(3000, gt=0)

    @model_validator(mode="after")
    def check_kernel_handling(self) -> "SolveOptions":
        if self.method == "dense" and not self.pin:
            raise ValueError("the dense solve needs pinning; an unpinned system is singular")
        return self


@dataclass
class SolveReport:
    iterations: int
    residual: float
    pinned: List[int]
    wall_time: float
    converged: bool
    method: str
    cycles: int = 0
    dropped_constraints: List[str] = field(default_factory=list)
    history: List[float] = field(default_factory=list)


def _pinned_dofs(system: SaddleSystem, corner: str) -> List[int]:
    layout = system.layout
    grid = layout.grid
    pinned = []
    for i, j in grid.pairs:
        block = layout.shear_block(i, j)
        others = [a for a in range(grid.dim) if a not in (i, j)]
        slab_shape = tuple(grid.cells_per_axis[a] for a in others)
        for slab in np.ndindex(slab_shape):
            index = [0] * grid.dim
            if corner == "last":
                index[i], index[j] = grid.cells_per_axis[i], grid.cells_per_axis[j]
            for a, c in zip(others, slab):
                index[a] = c
            pinned.append(layout.stress_dof(block.kind, index))
    return pinned


def pin_frame_kernel(system: SaddleSystem, corner: str = "first") -> Tuple[SaddleSystem, List[int]]:
    """Replace one frame coefficient per pair and slab by the equation p = 0.

    The pinned rows and columns are zeroed with a unit diagonal so the system
    stays symmetric. For the traction problem the boundary midpoint rows form
    an even cycle with one dependency; the last of them is dropped.
    """
    if system.pinned:
        return system, list(system.pinned)

    pinned = _pinned_dofs(system, corner)
    ns = system.stress_size
    keep = np.ones(ns)
    keep[pinned] = 0.0
    D = sp.diags(keep)
    M = (D @ system.M @ D + sp.diags(1.0 - keep)).tocsr()
    B = (system.B @ D).tocsr()

    C = system.C
    labels = list(system.constraint_labels)
    dropped: List[str] = []
    if C.shape[0]:
        primal_keep = sp.diags(np.concatenate([keep, np.ones(system.displacement_size)]))
        C = (C @ primal_keep).tocsr()
        midpoint_rows = [r for r, label in enumerate(labels) if label.startswith("midpoint")]
        if midpoint_rows:
            drop = midpoint_rows[-1]
            rows = [r for r in range(C.shape[0]) if r != drop]
            dropped.append(labels[drop])
            C = C[rows]
            labels = [labels[r] for r in rows]

    logger.debug(f"Pinned {len(pinned)} frame coefficients, dropped {dropped}")
    pinned_system = system.with_blocks(
        M=M, B=B, C=C, constraint_labels=labels,
        pinned=tuple(pinned), dropped_constraints=tuple(dropped),
    )
    return pinned_system, pinned


def kkt_matrix(system: SaddleSystem) -> sp.csr_matrix:
    """Assembled bordered matrix."""
    ns = system.stress_size
    if system.num_constraints == 0:
        return sp.bmat([[system.M, system.B.T], [system.B, None]], format="csr")
    Cs, Cu = system.C[:, :ns], system.C[:, ns:]
    return sp.bmat(
        [[system.M, system.B.T, Cs.T], [system.B, None, Cu.T], [Cs, Cu, None]], format="csr"
    )


def kkt_operator(system: SaddleSystem) -> LinearOperator:
    """Bordered operator applied block by block."""
    ns, nu, nc = system.stress_size, system.displacement_size, system.num_constraints
    M, B, C = system.M, system.B, system.C
    CT = C.T.tocsr()

    def matvec(x):
        x = np.asarray(x, dtype=float).reshape(-1)
        sigma, u, lam = x[:ns], x[ns:ns + nu], x[ns + nu:]
        out = np.empty_like(x)
        primal_back = CT @ lam if nc else np.zeros(ns + nu)
        out[:ns] = M @ sigma + B.T @ u + primal_back[:ns]
        out[ns:ns + nu] = B @ sigma + primal_back[ns:]
        if nc:
            out[ns + nu:] = C @ x[:ns + nu]
        return out

    size = ns + nu + nc
    return LinearOperator((size, size), matvec=matvec, rmatvec=matvec, dtype=float)


def apply_kkt(system: SaddleSystem, vector) -> np.ndarray:
    vector = np.asarray(vector, dtype=float)
    if vector.shape != (system.size,):
        raise LayoutError(f"KKT operator has size {system.size}, got vector of shape {vector.shape}")
    return kkt_operator(system).matvec(vector)


def diagonal_preconditioner(system: SaddleSystem) -> sp.dia_matrix:
    """Inverse of diag(M), diag(B diag(M)^-1 B^T) and the same Schur estimate for constraints."""
    d_sigma = np.abs(system.M.diagonal())
    d_sigma[d_sigma == 0.0] = 1.0
    d_u = system.B.multiply(system.B) @ (1.0 / d_sigma)
    d_u[d_u == 0.0] = 1.0
    primal = np.concatenate([d_sigma, d_u])
    diagonal = primal
    if system.num_constraints:
        d_c = system.C.multiply(system.C) @ (1.0 / primal)
        d_c[d_c == 0.0] = 1.0
        diagonal = np.concatenate([primal, d_c])
    return sp.diags(1.0 / diagonal)


def block_preconditioner(system: SaddleSystem) -> LinearOperator:
    """Inverse of blockdiag(M + B^T B / |K|, |K| I, S_c).

    The stress block is the H(div) Gram built from M and is factored exactly;
    S_c is the dense Schur complement of the constraints against the first two
    blocks. Needs a pinned system: the frame kernel makes the stress block singular.
    """
    ns, nu, nc = system.stress_size, system.displacement_size, system.num_constraints
    volume = system.layout.grid.cell_volume
    hdiv = (system.M + (system.B.T @ system.B) / volume).tocsc()
    try:
        lu = splu(hdiv)
    except RuntimeError as e:
        raise SolverError(f"Factorization of the stress block failed: {e}")

    schur = None
    if nc:
        Cs, Cu = system.C[:, :ns], system.C[:, ns:]
        S = Cs @ lu.solve(Cs.T.toarray()) + (Cu @ Cu.T).toarray() / volume
        try:
            schur = cho_factor(0.5 * (S + S.T))
        except LinAlgError as e:
            raise SolverError(f"Constraint Schur complement is not positive definite: {e}")

    def matvec(x):
        x = np.asarray(x, dtype=float).reshape(-1)
        out = np.empty_like(x)
        out[:ns] = lu.solve(x[:ns])
        out[ns:ns + nu] = x[ns:ns + nu] / volume
        if nc:
            out[ns + nu:] = cho_solve(schur, x[ns + nu:])
        return out

    size = ns + nu + nc
    return LinearOperator((size, size), matvec=matvec, rmatvec=matvec, dtype=float)


def _preconditioner(system: SaddleSystem, options: SolveOptions):
    if options.precond == "none":
        return None
    if options.precond == "block":
        if system.pinned or system.layout.dim == 1:
            return block_preconditioner(system)
        logger.warning("Block preconditioner needs a pinned system; using the diagonal one")
    return diagonal_preconditioner(system)


def _fields(system: SaddleSystem, x: np.ndarray) -> Tuple[StressField, DisplacementField]:
    ns, nu = system.stress_size, system.displacement_size
    return StressField(system.layout, x[:ns].copy()), DisplacementField(system.layout, x[ns:ns + nu].copy())


def solve(system: SaddleSystem, options: Optional[SolveOptions] = None
          ) -> Tuple[StressField, DisplacementField, SolveReport]:
    """Solve the bordered system to a relative residual below options.tol."""
    options = options or SolveOptions()
    start = time.perf_counter()
    if options.pin:
        system, _ = pin_frame_kernel(system, options.pin_corner)

    ns, nu, nc = system.stress_size, system.displacement_size, system.num_constraints
    b = np.concatenate([np.zeros(ns), system.F, np.zeros(nc)])
    b_norm = float(np.linalg.norm(b))
    report = SolveReport(0, 0.0, list(system.pinned), 0.0, True, options.method,
                         dropped_constraints=list(system.dropped_constraints))

    if b_norm == 0.0:
        report.wall_time = time.perf_counter() - start
        sigma, u = _fields(system, np.zeros(system.size))
        return sigma, u, report

    if options.method == "dense":
        x = _solve_dense(system, b, options)
        report.iterations = 1
    else:
        x = _solve_minres(system, b, options, report)

    residual = float(np.linalg.norm(kkt_operator(system).matvec(x) - b)) / b_norm
    report.residual = residual
    report.converged = residual <= options.tol
    report.wall_time = time.perf_counter() - start
    sigma, u = _fields(system, x)

    if not report.converged:
        logger.warning(
            f"Solve stopped at residual {residual:.3e} after {report.iterations} iterations"
        )
        raise SolverError(
            f"Residual {residual:.3e} above tolerance {options.tol:.1e} after {report.iterations} iterations",
            report=report, best=(sigma, u),
        )

    logger.info(
        f"Solved {system.size} unknowns: {report.iterations} iterations, residual {residual:.2e}, "
        f"{report.wall_time:.2f}s"
    )
    return sigma, u, report


def _solve_dense(system: SaddleSystem, b: np.ndarray, options: SolveOptions) -> np.ndarray:
    ensure_dense_fits(system.size, options.dense_limit, matrices=1)
    try:
        return np.linalg.solve(kkt_matrix(system).toarray(), b)
    except np.linalg.LinAlgError as e:
        raise SolverError(f"Dense KKT factorization failed: {e}")


def _solve_minres(system: SaddleSystem, b: np.ndarray, options: SolveOptions,
                  report: SolveReport) -> np.ndarray:
    operator = kkt_operator(system)
    precond = _preconditioner(system, options)
    max_iters = options.max_iters or 20 * system.size
    b_norm = float(np.linalg.norm(b))

    def weighted_norm(r):
        return float(np.sqrt(r @ (precond @ r))) if precond is not None else float(np.linalg.norm(r))

    def callback(xk):
        report.iterations += 1
        if options.record_history:
            report.history.append(weighted_norm(b - operator.matvec(xk)))

    # Each cycle starts from the true residual of the previous iterate.
    x = np.zeros(system.size)
    inner_tol = options.tol
    for cycle in range(options.restarts + 1):
        remaining = max_iters - report.iterations
        if remaining <= 0:
            break
        x, info = minres(operator, b, x0=x, rtol=inner_tol, maxiter=remaining, M=precond, callback=callback)
        report.cycles = cycle + 1
        residual = float(np.linalg.norm(operator.matvec(x) - b)) / b_norm
        logger.debug(f"MINRES cycle {cycle}: info {info}, residual {residual:.3e}")
        if residual <= options.tol:
            break
        inner_tol = max(inner_tol * 0.1, 1e-15)
    return x
