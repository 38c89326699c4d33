"""P1 assembly, constraint elimination and sparse solves.

Volume integrals use the three edge midpoints of each triangle (exact for
quadratics); interface integrals use two Gauss points per twin edge. Every
form is assembled over the full vertex numbering of the mesh; constraints are
applied afterwards through a prolongation matrix P so that the reduced system
is P^T A P.
"""
import logging
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np
import scipy.sparse as sp
from scipy.linalg import eigvalsh_tridiagonal
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import LinearOperator, bicgstab, spsolve

from src.coefficients import evaluate_scalar, evaluate_tensor
from src.config import DIRECT_SOLVE_CAP, MAX_ITER, SOLVER_TOL
from src.errors import ConstraintError, SolverError
from src.expression import Expression

logger = logging.getLogger(__name__)

# PHI[m, p]: value of basis p at the midpoint of the edge opposite vertex m
_PHI_MID = 0.5 * (1.0 - np.eye(3))

IDENTITY = np.eye(2)


def _scope(coefficient) -> str:
    if isinstance(coefficient, Expression):
        return coefficient.scope
    if isinstance(coefficient, tuple):
        return coefficient[0][0].scope
    return "cell"


def _select(mesh, phase):
    if phase is None:
        return np.arange(mesh.n_triangles)
    return np.flatnonzero(mesh.tri_phase == phase)


def _coo(n, rows, cols, vals) -> sp.csr_matrix:
    mat = sp.coo_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=(n, n)).tocsr()
    mat.sum_duplicates()
    mat.sort_indices()
    return mat


def _symmetrize(mat: sp.csr_matrix) -> sp.csr_matrix:
    out = ((mat + mat.T) * 0.5).tocsr()
    out.sort_indices()
    return out


def _element_matrix(mesh, tris, local) -> sp.csr_matrix:
    conn = mesh.triangles[tris]
    rows = np.repeat(conn[:, :, None], 3, axis=2)
    cols = np.repeat(conn[:, None, :], 3, axis=1)
    return _coo(mesh.n_vertices, rows, cols, local)


def is_symmetric_tensor(A) -> bool:
    if isinstance(A, np.ndarray):
        return bool(A[0, 1] == A[1, 0])
    return A[0][1] == A[1][0]


def midpoint_tensor(mesh, A, tris) -> np.ndarray:
    """Mean of A over the three edge midpoints of each selected triangle, (nt, 2, 2)."""
    mids = mesh.midpoints[tris].reshape(-1, 2)
    vals = evaluate_tensor(A, mesh.coefficient_points(mids, _scope(A)))
    return vals.reshape(len(tris), 3, 2, 2).mean(axis=1)


def assemble_stiffness(mesh, A=IDENTITY, phase: Optional[int] = None) -> sp.csr_matrix:
    """K[p, q] = sum over phase triangles of area * grad(phi_p) . Abar grad(phi_q)."""
    tris = _select(mesh, phase)
    G = mesh.gradients[tris]
    Abar = midpoint_tensor(mesh, A, tris)
    local = mesh.areas[tris][:, None, None] * np.einsum("tpa,tab,tqb->tpq", G, Abar, G)
    K = _element_matrix(mesh, tris, local)
    return _symmetrize(K) if is_symmetric_tensor(A) else K


def assemble_mass(mesh, a=1.0, phase: Optional[int] = None) -> sp.csr_matrix:
    tris = _select(mesh, phase)
    mids = mesh.midpoints[tris].reshape(-1, 2)
    vals = evaluate_scalar(a, mesh.coefficient_points(mids, _scope(a))).reshape(len(tris), 3)
    local = (mesh.areas[tris] / 3.0)[:, None, None] * np.einsum("tm,mp,mq->tpq", vals, _PHI_MID, _PHI_MID)
    return _symmetrize(_element_matrix(mesh, tris, local))


def assemble_load(mesh, f, phase: Optional[int] = None) -> np.ndarray:
    tris = _select(mesh, phase)
    mids = mesh.midpoints[tris].reshape(-1, 2)
    vals = evaluate_scalar(f, mesh.coefficient_points(mids, _scope(f))).reshape(len(tris), 3)
    local = (mesh.areas[tris] / 3.0)[:, None] * (vals @ _PHI_MID)
    return np.bincount(mesh.triangles[tris].ravel(), weights=local.ravel(), minlength=mesh.n_vertices)


def assemble_convection(mesh, B) -> sp.csr_matrix:
    """C[p, q] = integral of (B . grad phi_q) phi_p for a constant vector B."""
    tris = np.arange(mesh.n_triangles)
    bg = mesh.gradients @ np.asarray(B, dtype=float)                # (nt, 3)
    local = (mesh.areas / 3.0)[:, None, None] * np.broadcast_to(bg[:, None, :], (len(tris), 3, 3))
    return _element_matrix(mesh, tris, local)


def _interface_alpha(mesh, quad, alpha) -> np.ndarray:
    if not mesh.iface_side1.shape[0]:
        raise ConstraintError("mesh has no interface twin edges")
    return evaluate_scalar(alpha, mesh.coefficient_points(quad.points, _scope(alpha)))


def assemble_interface_coupling(mesh, alpha=1.0) -> sp.csr_matrix:
    """Jump form: integral over Sigma of alpha (w1 - w2)(v1 - v2), unweighted surface measure."""
    quad = mesh.interface_quadrature()
    a = _interface_alpha(mesh, quad, alpha) * quad.weights
    dofs = np.hstack([quad.dofs1, quad.dofs2])                      # (ng, 4)
    vec = np.hstack([quad.shape, -quad.shape])                      # (ng, 4)
    local = a[:, None, None] * vec[:, :, None] * vec[:, None, :]
    rows = np.repeat(dofs[:, :, None], 4, axis=2)
    cols = np.repeat(dofs[:, None, :], 4, axis=1)
    return _symmetrize(_coo(mesh.n_vertices, rows, cols, local))


def assemble_interface_load(mesh, alpha, phase: int, sign: float = 1.0) -> np.ndarray:
    """L[p] = sign * integral over Sigma of alpha phi_p on the phase-side trace."""
    quad = mesh.interface_quadrature()
    a = _interface_alpha(mesh, quad, alpha) * quad.weights
    dofs = quad.dofs1 if phase == 1 else quad.dofs2
    local = sign * a[:, None] * quad.shape
    return np.bincount(dofs.ravel(), weights=local.ravel(), minlength=mesh.n_vertices)


def interface_mean(mesh, alpha) -> float:
    quad = mesh.interface_quadrature()
    a = _interface_alpha(mesh, quad, alpha)
    return float(np.dot(quad.weights, a) / quad.weights.sum())


# -------- constraints --------

@dataclass
class ConstraintRecord:
    n_full: int
    free: np.ndarray                 # full ids kept as reduced unknowns
    prolongation: sp.csr_matrix      # (n_full, n_free)
    dirichlet: np.ndarray
    periodic: np.ndarray
    multiplier: bool = False


@dataclass
class LinearSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    symmetric: bool = True
    constraints: Optional[ConstraintRecord] = None

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    @property
    def augmented(self) -> bool:
        return self.constraints is not None and self.constraints.multiplier

    def expand(self, x: np.ndarray) -> np.ndarray:
        """Full nodal vector from a solution of the (possibly reduced) system."""
        if self.constraints is None:
            return np.asarray(x, dtype=float)
        c = self.constraints
        n_free = c.prolongation.shape[1]
        return c.prolongation @ np.asarray(x, dtype=float)[:n_free]


@dataclass
class SolveReport:
    iterations: int
    residual: float
    method: str
    breakdown: bool = False
    ritz_min: Optional[float] = None
    ritz_max: Optional[float] = None

    def describe(self) -> str:
        text = f"{self.method}: {self.iterations} it, residual {self.residual:.3e}"
        if self.ritz_min is not None:
            text += f", ritz min {self.ritz_min:.3e}"
        if self.breakdown:
            text += ", breakdown"
        return text


def _roots(n: int, periodic) -> np.ndarray:
    """Smallest vertex index of each periodic class, per vertex."""
    pairs = np.asarray(periodic, dtype=np.int64).reshape(-1, 2)
    graph = sp.coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, labels = connected_components(graph, directed=False)
    first = np.full(labels.max() + 1 if n else 0, n, dtype=np.int64)
    np.minimum.at(first, labels, np.arange(n))
    return first[labels]


def apply_constraints(system: LinearSystem, dirichlet: Iterable[int] = (), periodic=None,
                      zero_mean: Optional[np.ndarray] = None, eliminated: Iterable[int] = ()) -> LinearSystem:
    """Fold periodic members into roots, drop Dirichlet/eliminated dofs, optionally add a mean multiplier.

    ``zero_mean`` is the full-length weight vector w; the multiplier row holds P^T w.
    """
    n = system.dimension
    periodic = np.asarray(periodic if periodic is not None else np.zeros((0, 2)), dtype=np.int64).reshape(-1, 2)
    dirichlet = np.unique(np.asarray(list(dirichlet), dtype=np.int64))
    removed = np.zeros(n, dtype=bool)
    removed[dirichlet] = True
    removed[np.asarray(list(eliminated), dtype=np.int64)] = True

    if periodic.size:
        members = periodic[:, 1]
        clash = np.intersect1d(members, dirichlet)
        if clash.size:
            raise ConstraintError(f"periodic member vertex {int(clash[0])} is also a Dirichlet vertex")
    root = _roots(n, periodic)
    class_removed = np.zeros(n, dtype=bool)
    np.logical_or.at(class_removed, root, removed)

    is_root = root == np.arange(n)
    free = np.flatnonzero(is_root & ~class_removed)
    column = -np.ones(n, dtype=np.int64)
    column[free] = np.arange(free.size)
    rows = np.flatnonzero(column[root] >= 0)
    P = sp.csr_matrix((np.ones(rows.size), (rows, column[root[rows]])), shape=(n, free.size))

    A = (P.T @ system.matrix @ P).tocsr()
    b = P.T @ system.rhs
    multiplier = zero_mean is not None
    if multiplier:
        c = P.T @ np.asarray(zero_mean, dtype=float)
        A = sp.bmat([[A, sp.csr_matrix(c.reshape(-1, 1))],
                     [sp.csr_matrix(c.reshape(1, -1)), None]], format="csr")
        b = np.append(b, 0.0)
    A.sort_indices()
    record = ConstraintRecord(n_full=n, free=free, prolongation=P, dirichlet=dirichlet,
                              periodic=periodic, multiplier=multiplier)
    return LinearSystem(A, np.asarray(b, dtype=float), system.symmetric, record)


# -------- solvers --------

def _jacobi(matrix) -> np.ndarray:
    d = np.abs(matrix.diagonal())
    d[d == 0.0] = 1.0
    return 1.0 / d


def _ritz(alphas, betas):
    """Extreme eigenvalues of the Lanczos tridiagonal built from CG coefficients."""
    k = len(alphas)
    if k == 0:
        return None, None
    diag = np.empty(k)
    off = np.empty(max(k - 1, 0))
    for i in range(k):
        diag[i] = 1.0 / alphas[i] + (betas[i - 1] / alphas[i - 1] if i > 0 else 0.0)
        if i < k - 1:
            off[i] = np.sqrt(max(betas[i], 0.0)) / alphas[i]
    eig = eigvalsh_tridiagonal(diag, off) if k > 1 else diag
    return float(eig.min()), float(eig.max())


def conjugate_gradient(A, b, tol: float = SOLVER_TOL, max_iter: int = MAX_ITER):
    """Jacobi-preconditioned CG; raises SolverError on breakdown or non-convergence."""
    n = b.size
    x = np.zeros(n)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return x, SolveReport(0, 0.0, "cg")
    minv = _jacobi(A)
    r = b.copy()
    z = minv * r
    p = z.copy()
    rz = float(r @ z)
    alphas, betas = [], []
    it = 0
    while it < max_iter:
        Ap = A @ p
        curvature = float(p @ Ap)
        if curvature <= 0.0 or not np.isfinite(curvature):
            lo, hi = _ritz(alphas, betas)
            ratio = curvature / float(p @ p)
            lo = ratio if lo is None else min(lo, ratio)
            report = SolveReport(it, float(np.linalg.norm(b - A @ x)) / bnorm, "cg", True, lo, hi)
            raise SolverError(f"CG breakdown after {it} iterations (p.Ap = {curvature:.3e})", report)
        alpha = rz / curvature
        x += alpha * p
        r -= alpha * Ap
        alphas.append(alpha)
        it += 1
        if float(np.linalg.norm(r)) <= tol * bnorm:
            break
        z = minv * r
        rz_new = float(r @ z)
        beta = rz_new / rz
        betas.append(beta)
        rz = rz_new
        p = z + beta * p
    lo, hi = _ritz(alphas, betas)
    residual = float(np.linalg.norm(b - A @ x)) / bnorm
    report = SolveReport(it, residual, "cg", False, lo, hi)
    if it >= max_iter and residual > tol:
        raise SolverError(f"CG did not converge in {max_iter} iterations (residual {residual:.3e})", report)
    return x, report


def _direct(A, b):
    if b.size == 0:
        return np.zeros(0), SolveReport(0, 0.0, "direct")
    x = np.atleast_1d(spsolve(A.tocsc(), b))
    bnorm = float(np.linalg.norm(b))
    if not np.all(np.isfinite(x)):
        report = SolveReport(1, float("inf"), "direct", True)
        raise SolverError("direct factorization failed: matrix is singular", report)
    residual = float(np.linalg.norm(b - A @ x)) / bnorm if bnorm > 0 else 0.0
    return x, SolveReport(1, residual, "direct")


def _bicgstab(A, b, tol, max_iter):
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros(b.size), SolveReport(0, 0.0, "bicgstab")
    minv = _jacobi(A)
    M = LinearOperator(A.shape, matvec=lambda v: minv * v, dtype=float)
    count = [0]

    def tick(_):
        count[0] += 1

    x, info = bicgstab(A, b, rtol=tol, atol=0.0, maxiter=max_iter, M=M, callback=tick)
    residual = float(np.linalg.norm(b - A @ x)) / bnorm
    report = SolveReport(count[0], residual, "bicgstab", info < 0)
    if info != 0:
        what = "breakdown" if info < 0 else f"no convergence in {max_iter} iterations"
        raise SolverError(f"BiCGSTAB {what} (residual {residual:.3e})", report)
    return x, report


def solve(system: LinearSystem, tol: float = SOLVER_TOL, max_iter: int = MAX_ITER, method: str = None):
    """Solve a finalized system; returns the solution in the system's own unknowns and a SolveReport.

    Symmetric systems go to CG; non-symmetric or multiplier-augmented ones to a
    direct factorization up to DIRECT_SOLVE_CAP unknowns and BiCGSTAB above.
    """
    if not 0.0 < tol <= 1e-2:
        raise SolverError(f"solver tolerance must lie in (0, 1e-2], got {tol}")
    A, b = system.matrix, system.rhs
    if method is None:
        if system.symmetric and not system.augmented:
            method = "cg"
        else:
            method = "direct" if system.dimension <= DIRECT_SOLVE_CAP else "bicgstab"
    if system.dimension == 0:
        return np.zeros(0), SolveReport(0, 0.0, method)
    if method == "cg":
        x, report = conjugate_gradient(A, b, tol, max_iter)
    elif method == "direct":
        x, report = _direct(A, b)
    elif method == "bicgstab":
        x, report = _bicgstab(A, b, tol, max_iter)
    else:
        raise SolverError(f"unknown solve method {method!r}")
    logger.debug("solve n=%d %s", system.dimension, report.describe())
    return x, report


def solve_full(system: LinearSystem, tol: float = SOLVER_TOL, max_iter: int = MAX_ITER, method: str = None):
    x, report = solve(system, tol, max_iter, method)
    return system.expand(x), report
