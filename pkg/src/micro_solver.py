"""Direct simulation of the epsilon-periodic transmission problem.

One unknown per micro vertex; u_i is the restriction to phase-i vertices.
The interface coupling carries no epsilon weight.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import ArpackError, ArpackNoConvergence, eigsh

from src.config import MAX_ITER, MICRO_SIZE_CAP, SOLVER_TOL, WORKERS
from src.errors import CoercivityError, SolverError
from src.fem import (
    LinearSystem,
    SolveReport,
    apply_constraints,
    assemble_interface_coupling,
    assemble_load,
    assemble_mass,
    assemble_stiffness,
    solve,
)
from src.geometry import MicroMesh, build_micro_mesh

logger = logging.getLogger(__name__)

DENSE_EIG_CAP = 400


@dataclass
class MicroSystem:
    mesh: MicroMesh
    system: LinearSystem
    gram: sp.csr_matrix            # full-size V-norm Gram matrix
    fnorm: float


@dataclass
class MicroSolution:
    mesh: MicroMesh
    u1: np.ndarray
    u2: np.ndarray
    epsilon: float
    report: SolveReport
    energy_norm: float
    fnorm: float
    coercivity: Optional[float] = None

    @property
    def u(self) -> np.ndarray:
        return self.u1 + self.u2

    def field(self, phase: int) -> np.ndarray:
        return self.u1 if phase == 1 else self.u2


def vnorm_gram(mesh) -> sp.csr_matrix:
    """Unit-coefficient H1 forms on both phases plus the unweighted jump form."""
    G = assemble_stiffness(mesh) + assemble_mass(mesh, 1.0)
    if mesh.iface_side1.shape[0]:
        G = G + assemble_interface_coupling(mesh, 1.0)
    return G.tocsr()


def source_norm(mesh, coeffs) -> float:
    """Discrete L2 norm of (f1, f2) with the midpoint rule used for the load."""
    total = 0.0
    for phase in (1, 2):
        tris = np.flatnonzero(mesh.tri_phase == phase)
        f = coeffs.source(phase).evaluate_many(mesh.midpoints[tris].reshape(-1, 2)).reshape(-1, 3)
        total += float(np.dot(mesh.areas[tris] / 3.0, (f * f).sum(axis=1)))
    return float(np.sqrt(total))


def assemble_micro(mesh: MicroMesh, coeffs) -> MicroSystem:
    K = (assemble_stiffness(mesh, coeffs.A1, 1) + assemble_stiffness(mesh, coeffs.A2, 2)
         + assemble_mass(mesh, coeffs.a1, 1) + assemble_mass(mesh, coeffs.a2, 2))
    if mesh.iface_side1.shape[0]:
        K = K + assemble_interface_coupling(mesh, coeffs.alpha)
    symmetric = coeffs.is_symmetric(1) and coeffs.is_symmetric(2)
    b = assemble_load(mesh, coeffs.f1, 1) + assemble_load(mesh, coeffs.f2, 2)
    dirichlet = np.concatenate([mesh.dirichlet_nodes_1, mesh.dirichlet_nodes_2])
    system = apply_constraints(LinearSystem(K.tocsr(), b, symmetric=symmetric), dirichlet=dirichlet)
    return MicroSystem(mesh, system, vnorm_gram(mesh), source_norm(mesh, coeffs))


def vnorm(sol: MicroSolution, gram: sp.csr_matrix = None) -> float:
    u = sol.u
    G = gram if gram is not None else vnorm_gram(sol.mesh)
    return float(np.sqrt(max(u @ (G @ u), 0.0)))


def estimate_coercivity(problem: MicroSystem) -> Optional[float]:
    """Smallest generalized eigenvalue of (system matrix, V-norm Gram) on the free dofs."""
    A = problem.system.matrix
    if A.shape[0] == 0:
        return None
    P = problem.system.constraints.prolongation
    G = (P.T @ problem.gram @ P).tocsc()
    A = (0.5 * (A + A.T)).tocsc()
    if A.shape[0] <= DENSE_EIG_CAP:
        return float(scipy.linalg.eigh(A.toarray(), G.toarray(), eigvals_only=True)[0])
    try:
        vals = eigsh(A, k=1, M=G, sigma=0.0, which="LM", return_eigenvectors=False)
    except (ArpackNoConvergence, ArpackError, RuntimeError) as e:
        logger.warning("coercivity estimate failed: %s", e)
        return None
    return float(vals.min())


def solve_micro(problem: MicroSystem, tol: float = SOLVER_TOL, max_iter: int = MAX_ITER,
                coercivity_check: bool = False) -> MicroSolution:
    mesh = problem.mesh
    method = "cg" if problem.system.symmetric else None
    try:
        x, report = solve(problem.system, tol, max_iter, method)
    except SolverError as e:
        ritz = e.report.ritz_min if e.report is not None else None
        raise CoercivityError(f"micro system at eps={mesh.epsilon:g} is not numerically coercive: {e.message}",
                              e.report, ritz) from e
    if report.ritz_min is not None and report.ritz_min <= 0.0:
        raise CoercivityError(f"micro system at eps={mesh.epsilon:g} has Ritz estimate {report.ritz_min:.3e} <= 0",
                              report, report.ritz_min)
    u = problem.system.expand(x)
    phase1 = mesh.vertex_phase == 1
    sol = MicroSolution(
        mesh=mesh,
        u1=np.where(phase1, u, 0.0),
        u2=np.where(phase1, 0.0, u),
        epsilon=mesh.epsilon,
        report=report,
        energy_norm=0.0,
        fnorm=problem.fnorm,
    )
    sol.energy_norm = vnorm(sol, problem.gram)
    if coercivity_check:
        sol.coercivity = estimate_coercivity(problem)
        if sol.coercivity is not None:
            if sol.coercivity <= 0.0:
                raise CoercivityError(
                    f"micro system at eps={mesh.epsilon:g} has coercivity estimate {sol.coercivity:.3e} <= 0",
                    report, sol.coercivity)
            bound = problem.fnorm / sol.coercivity
            if sol.energy_norm > bound * (1.0 + 1e-8) + 1e-14:
                logger.warning("eps=%g: V-norm %.6g exceeds the a priori bound %.6g",
                               mesh.epsilon, sol.energy_norm, bound)
    logger.info("micro eps=%g: %d dofs, %s, V-norm %.6g", mesh.epsilon, problem.system.dimension,
                report.describe(), sol.energy_norm)
    return sol


def trace_ratio(mesh, u: np.ndarray, phase: int) -> float:
    """|v|^2 on Sigma over (|v|^2 / eps + eps |grad v|^2) on the phase, for the phase-i part of u."""
    quad = mesh.interface_quadrature()
    dofs = quad.dofs1 if phase == 1 else quad.dofs2
    trace = np.einsum("nk,nk->n", quad.shape, u[dofs])
    numerator = float(np.dot(quad.weights, trace * trace))
    eps = getattr(mesh, "epsilon", 1.0)
    M = assemble_mass(mesh, 1.0, phase)
    S = assemble_stiffness(mesh, phase=phase)
    denominator = float(u @ (M @ u)) / eps + eps * float(u @ (S @ u))
    return numerator / denominator if denominator > 0 else 0.0


@dataclass
class AprioriRow:
    epsilon: float
    vnorm: float
    fnorm: float
    ratio: float
    ritz_min: Optional[float]
    coercivity: Optional[float] = None


@dataclass
class AprioriSweep:
    rows: List[AprioriRow]
    solutions: List[MicroSolution] = field(default_factory=list)

    @property
    def band(self) -> float:
        """max ratio / min ratio over the sweep (1 when all norms vanish)."""
        ratios = [r.ratio for r in self.rows if r.ratio > 0]
        if not ratios:
            return 1.0
        return max(ratios) / min(ratios)


def run_micro_case(coeffs, geometry, n: int, epsilon: float, tol: float = SOLVER_TOL,
                   max_iter: int = MAX_ITER, coercivity_check: bool = False,
                   size_cap: int = MICRO_SIZE_CAP) -> MicroSolution:
    mesh = build_micro_mesh(geometry, n, epsilon, size_cap)
    return solve_micro(assemble_micro(mesh, coeffs), tol, max_iter, coercivity_check)


def apriori_sweep(coeffs, geometry, n: int, eps_list, tol: float = SOLVER_TOL, max_iter: int = MAX_ITER,
                  workers: int = WORKERS, coercivity_check: bool = False,
                  size_cap: int = MICRO_SIZE_CAP) -> AprioriSweep:
    """Micro solves over the epsilon list, rows sorted by decreasing epsilon."""
    eps_sorted = sorted(eps_list, reverse=True)

    def one(eps):
        return run_micro_case(coeffs, geometry, n, eps, tol, max_iter, coercivity_check, size_cap)

    if workers > 1 and len(eps_sorted) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            solutions = list(pool.map(one, eps_sorted))
    else:
        solutions = [one(eps) for eps in eps_sorted]

    rows = []
    for sol in solutions:
        ratio = sol.energy_norm / sol.fnorm if sol.fnorm > 0 else 0.0
        rows.append(AprioriRow(sol.epsilon, sol.energy_norm, sol.fnorm, ratio,
                               sol.report.ritz_min, sol.coercivity))
    return AprioriSweep(rows, solutions)
