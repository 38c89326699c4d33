"""Homogenized coupled system on the unit square with homogeneous Dirichlet data.

Unknowns are ordered [u1 on all macro vertices, u2 on all macro vertices].
"""
import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from src.config import MAX_ITER, SOLVER_TOL
from src.errors import MacroSolveError, SolverError
from src.fem import (
    LinearSystem,
    SolveReport,
    apply_constraints,
    assemble_convection,
    assemble_load,
    assemble_mass,
    assemble_stiffness,
    solve,
)
from src.geometry import MacroMesh, build_square_mesh

logger = logging.getLogger(__name__)


@dataclass
class MacroSolution:
    mesh: MacroMesh
    u1: np.ndarray
    u2: np.ndarray
    report: SolveReport

    def field(self, phase: int) -> np.ndarray:
        return self.u1 if phase == 1 else self.u2

    def gradients(self, phase: int) -> np.ndarray:
        """Elementwise-constant gradient per macro triangle, (nt, 2)."""
        u = self.field(phase)
        return np.einsum("tp,tpa->ta", u[self.mesh.triangles], self.mesh.gradients)

    def evaluate(self, points):
        """P1 values (u1, u2) and the containing triangles at physical points."""
        tri, bary = self.mesh.locate(points)
        conn = self.mesh.triangles[tri]
        u1 = np.einsum("nk,nk->n", bary, self.u1[conn])
        u2 = np.einsum("nk,nk->n", bary, self.u2[conn])
        return u1, u2, tri


def peclet_numbers(mesh: MacroMesh, eff) -> dict:
    """Mesh Peclet number |B| h / (2 min eig Aeff) per phase with a nondegenerate tensor."""
    h = math.sqrt(2.0) / mesh.resolution
    out = {}
    for phase in (1, 2):
        lam = float(np.linalg.eigvalsh(0.5 * (eff.Aeff[phase] + eff.Aeff[phase].T)).min())
        if lam > 1e-10:
            out[phase] = float(np.linalg.norm(eff.B[phase])) * h / (2.0 * lam)
    return out


def assemble_macro(mesh: MacroMesh, eff, g1, g2) -> LinearSystem:
    S = {i: assemble_stiffness(mesh, np.asarray(eff.Aeff[i], dtype=float)) for i in (1, 2)}
    C = {i: assemble_convection(mesh, eff.B[i]) for i in (1, 2)}
    M = assemble_mass(mesh, 1.0)
    d = float(eff.d)
    A = sp.bmat([
        [S[1] + C[1] + eff.c[1] * M, -C[2] - d * M],
        [-C[1] - d * M, S[2] + C[2] + eff.c[2] * M],
    ], format="csr")
    rhs = np.concatenate([assemble_load(mesh, g1), assemble_load(mesh, g2)])
    n = mesh.n_vertices
    boundary = np.flatnonzero(mesh.boundary_mask)
    system = apply_constraints(LinearSystem(A, rhs, symmetric=False),
                               dirichlet=np.concatenate([boundary, boundary + n]))
    for phase, pe in peclet_numbers(mesh, eff).items():
        if pe > 1.0:
            logger.warning("macro mesh Peclet number %.3g > 1 for phase %d; Galerkin convection may oscillate",
                           pe, phase)
    return system


def solve_macro(system: LinearSystem, mesh: MacroMesh, eff=None, tol: float = SOLVER_TOL,
                max_iter: int = MAX_ITER, method: str = None) -> MacroSolution:
    try:
        x, report = solve(system, tol, max_iter, method)
    except SolverError as e:
        raise MacroSolveError(_coercivity_message(eff, e), e.report) from e
    u = system.expand(x)
    n = mesh.n_vertices
    logger.info("macro solve on %d vertices: %s", n, report.describe())
    return MacroSolution(mesh, u[:n].copy(), u[n:].copy(), report)


def _coercivity_message(eff, cause) -> str:
    if eff is None:
        return f"homogenized system could not be solved ({cause.message})"
    mins = [float(np.linalg.eigvalsh(0.5 * (eff.Aeff[i] + eff.Aeff[i].T)).min()) for i in (1, 2)]
    return (f"homogenized system could not be solved, possible loss of coercivity: "
            f"|d|={abs(eff.d):.4g}, |B1|={np.linalg.norm(eff.B[1]):.4g}, |B2|={np.linalg.norm(eff.B[2]):.4g}, "
            f"c1={eff.c[1]:.4g}, c2={eff.c[2]:.4g}, min eig Aeff1={mins[0]:.4g}, min eig Aeff2={mins[1]:.4g} "
            f"({cause.message})")


def run_macro(eff, g1, g2, n: int, tol: float = SOLVER_TOL, max_iter: int = MAX_ITER) -> MacroSolution:
    mesh = build_square_mesh(n)
    return solve_macro(assemble_macro(mesh, eff, g1, g2), mesh, eff, tol, max_iter)
