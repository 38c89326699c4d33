"""Periodic cell problems for the correctors xi_i^k and gamma_i.

Each problem lives on one phase of the unit cell: vertices of the other phase
are eliminated, outer edges are identified periodically and the additive
constant is fixed by a zero-mean multiplier.
"""
import logging
import threading
from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np

from src.config import COMPAT_TOL, GAMMA_SIGNS, MAX_ITER, REMARK_CONSISTENT, SOLVER_TOL
from src.errors import CompatibilityError, ConfigError, GeometryError
from src.fem import (
    LinearSystem,
    SolveReport,
    apply_constraints,
    assemble_interface_load,
    assemble_mass,
    assemble_stiffness,
    interface_mean,
    solve,
)
from src.geometry import TriangleLocator

logger = logging.getLogger(__name__)


@dataclass
class CellSolutions:
    mesh: object
    xi: Dict[Tuple[int, int], np.ndarray]
    gamma: Dict[int, np.ndarray]
    reports: Dict[str, SolveReport] = field(default_factory=dict)
    gamma_sign: str = REMARK_CONSISTENT
    _locators: dict = field(default_factory=dict, init=False, repr=False, compare=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, init=False, repr=False, compare=False)

    def field_names(self):
        names = [(f"xi_{i}_{k}", self.xi[(i, k)]) for i in (1, 2) for k in (1, 2)]
        names += [(f"gamma_{i}", self.gamma[i]) for i in (1, 2)]
        return names

    def max_residual(self) -> float:
        return max((r.residual for r in self.reports.values()), default=0.0)

    def sample(self, phase: int, points):
        """P1 values (xi^1, xi^2, gamma) of phase ``phase`` at cell points in [0, 1)^2."""
        with self._lock:
            locator = self._locators.get(phase)
            if locator is None:
                locator = TriangleLocator(self.mesh, np.flatnonzero(self.mesh.tri_phase == phase))
                self._locators[phase] = locator
        pts = np.array(points, dtype=float).reshape(-1, 2)
        tri, bary = locator.locate(pts, strict=False)
        # phase vertices on a cell edge may sit on the opposite, periodically identified edge
        for shift in ((0.0, 1.0), (1.0, 0.0), (1.0, 1.0)):
            miss = np.flatnonzero(tri < 0)
            if not miss.size:
                break
            moved = pts[miss] + np.array(shift) * (pts[miss] < 1e-9)
            tri[miss], bary[miss] = locator.locate(moved, strict=False)
        if np.any(tri < 0):
            raise GeometryError(f"{int((tri < 0).sum())} points could not be located in phase {phase} of the cell")
        conn = self.mesh.triangles[tri]
        fields = (self.xi[(phase, 1)], self.xi[(phase, 2)], self.gamma[phase])
        return tuple(np.einsum("nk,nk->n", bary, f[conn]) for f in fields)


def _phase_weights(cell, phase: int) -> np.ndarray:
    """Row sums of the unit phase mass matrix: w . u is the phase integral of u."""
    return np.asarray(assemble_mass(cell, 1.0, phase).sum(axis=1)).ravel()


def _solve_phase(cell, phase: int, K, rhs, tol, max_iter, tag: str, method=None):
    other = cell.phase_vertices(3 - phase)
    weights = _phase_weights(cell, phase)
    system = apply_constraints(
        LinearSystem(K, rhs, symmetric=True),
        periodic=cell.periodic_pairs,
        zero_mean=weights,
        eliminated=other,
    )
    x, report = solve(system, tol, max_iter, method)
    u = system.expand(x)
    own = cell.vertex_phase == phase
    u[own] -= np.dot(weights, u) / weights.sum()
    u[~own] = 0.0
    logger.debug("%s: %s", tag, report.describe())
    return u, report


def solve_xi(cell, A, phase: int, k: int, tol: float = SOLVER_TOL, max_iter: int = MAX_ITER, method=None):
    """Corrector of direction e^k on phase ``phase``; zero Neumann data on Sigma is natural."""
    K = assemble_stiffness(cell, A, phase)
    rhs = -(K @ cell.vertices[:, k - 1])
    return _solve_phase(cell, phase, K, rhs, tol, max_iter, f"xi_{phase}_{k}", method)


def gamma_flux_sign(phase: int, gamma_sign: str = REMARK_CONSISTENT) -> float:
    if gamma_sign not in GAMMA_SIGNS:
        raise ConfigError(f"unknown gamma_sign {gamma_sign!r}; expected one of {tuple(GAMMA_SIGNS)}")
    return GAMMA_SIGNS[gamma_sign][phase - 1]


def check_compatibility(cell, alpha, compat_tol: float = COMPAT_TOL) -> float:
    mean = interface_mean(cell, alpha)
    if abs(mean) > compat_tol:
        raise CompatibilityError(
            f"compatibility condition violated: the integral of alpha over the interface Sigma must vanish "
            f"for the gamma cell problems to be solvable, but its mean is {mean:.6g} "
            f"(tolerance {compat_tol:g})")
    return mean


def solve_gamma(cell, A, alpha, phase: int, gamma_sign: str = REMARK_CONSISTENT,
                compat_tol: float = COMPAT_TOL, tol: float = SOLVER_TOL, max_iter: int = MAX_ITER,
                method=None):
    """Cell response to the interface flux s_i * alpha, normal taken outward from Y1."""
    check_compatibility(cell, alpha, compat_tol)
    K = assemble_stiffness(cell, A, phase)
    rhs = assemble_interface_load(cell, alpha, phase, gamma_flux_sign(phase, gamma_sign))
    return _solve_phase(cell, phase, K, rhs, tol, max_iter, f"gamma_{phase}", method)


def solve_all(cell, coeffs, gamma_sign: str = REMARK_CONSISTENT, compat_tol: float = COMPAT_TOL,
              tol: float = SOLVER_TOL, max_iter: int = MAX_ITER, method=None) -> CellSolutions:
    check_compatibility(cell, coeffs.alpha, compat_tol)
    xi, gamma, reports = {}, {}, {}
    for phase in (1, 2):
        A = coeffs.tensor(phase)
        for k in (1, 2):
            xi[(phase, k)], reports[f"xi_{phase}_{k}"] = solve_xi(cell, A, phase, k, tol, max_iter, method)
        gamma[phase], reports[f"gamma_{phase}"] = solve_gamma(
            cell, A, coeffs.alpha, phase, gamma_sign, compat_tol, tol, max_iter, method)
    sols = CellSolutions(cell, xi, gamma, reports, gamma_sign)
    logger.info("cell problems solved on %d vertices, max residual %.3e", cell.n_vertices, sols.max_residual())
    return sols

