"""Homogenized coefficients from the cell correctors."""
import logging
from dataclasses import dataclass, field, replace
from typing import Dict, Optional

import numpy as np

from src.cell_problems import solve_gamma
from src.config import (
    COMPAT_TOL,
    D_EXTRAPOLATIONS,
    MAX_ITER,
    MIN_RESOLUTION,
    PAPER_LITERAL,
    REMARK_CONSISTENT,
    RICHARDSON,
    SIGN_CONVENTIONS,
    SOLVER_TOL,
)
from src.errors import CompatibilityError, ConfigError, GeometryError
from src.fem import assemble_interface_load, assemble_mass, assemble_stiffness, midpoint_tensor
from src.geometry import build_unit_cell_mesh

logger = logging.getLogger(__name__)

IDENTITY_TOL = 1e-8
DEGENERATE_EIG = 1e-10


@dataclass
class EffectiveCoefficients:
    Aeff: Dict[int, np.ndarray]
    B: Dict[int, np.ndarray]
    d: float
    c: Dict[int, float]
    vol: Dict[int, float]
    sign_convention: str = REMARK_CONSISTENT
    resolution: int = 0
    geometry_key: str = ""
    tol: float = SOLVER_TOL
    flux_form: Dict[int, np.ndarray] = field(default_factory=dict)
    bound_ok: Dict[int, bool] = field(default_factory=dict)
    d_discrete: Optional[float] = None   # d on the cell mesh itself when d is extrapolated

    def rows(self):
        """(name, indices, value) triples in a fixed order."""
        out = []
        for i in (1, 2):
            for k in range(2):
                for j in range(2):
                    out.append((f"Aeff{i}", f"{k + 1}{j + 1}", float(self.Aeff[i][k, j])))
        for i in (1, 2):
            for k in range(2):
                out.append((f"B{i}", f"{k + 1}", float(self.B[i][k])))
        out.append(("d", "", float(self.d)))
        for i in (1, 2):
            out.append((f"c{i}", "", float(self.c[i])))
        for i in (1, 2):
            out.append((f"vol{i}", "", float(self.vol[i])))
        return out

    def swapped(self) -> "EffectiveCoefficients":
        """Same data with the phase labels exchanged."""
        flip = {1: 2, 2: 1}
        return EffectiveCoefficients(
            Aeff={i: self.Aeff[flip[i]] for i in (1, 2)},
            B={i: self.B[flip[i]] for i in (1, 2)},
            d=self.d,
            c={i: self.c[flip[i]] for i in (1, 2)},
            vol={i: self.vol[flip[i]] for i in (1, 2)},
            sign_convention=self.sign_convention,
            resolution=self.resolution,
            geometry_key=self.geometry_key,
            tol=self.tol,
            d_discrete=self.d_discrete,
        )

    def with_coupling(self, d: float) -> "EffectiveCoefficients":
        """Replace d; c_i keeps its reaction part."""
        return replace(self, d=d, c={i: self.c[i] - self.d + d for i in (1, 2)},
                       d_discrete=self.d if self.d_discrete is None else self.d_discrete)


def _corrected(cell, sols, phase):
    return [cell.vertices[:, k] + sols.xi[(phase, k + 1)] for k in range(2)]


def compute_Aeff(cell, sols, A, phase: int):
    """Energy form a^{kj} = W_j^T K W_k with W_k = y_k + xi^k, and the flux form y_j^T K W_k."""
    K = assemble_stiffness(cell, A, phase)
    W = _corrected(cell, sols, phase)
    Y = [cell.vertices[:, k] for k in range(2)]
    energy = np.empty((2, 2))
    flux = np.empty((2, 2))
    for k in range(2):
        KW = K @ W[k]
        for j in range(2):
            energy[k, j] = W[j] @ KW
            flux[k, j] = Y[j] @ KW
    gap = float(np.abs(energy - flux).max())
    if gap > IDENTITY_TOL:
        logger.warning("phase %d: energy and flux forms of Aeff differ by %.3e", phase, gap)
    eig = np.linalg.eigvalsh(0.5 * (energy + energy.T))
    if eig.min() < DEGENERATE_EIG * max(1.0, eig.max()):
        logger.warning("phase %d: effective tensor is degenerate (eigenvalues %.3e, %.3e)", phase, eig[0], eig[1])
    return energy, flux


def variational_bound(cell, A, phase: int) -> np.ndarray:
    """Diagonal of the phase integral of A, the upper bound for a^{kk}."""
    tris = np.flatnonzero(cell.tri_phase == phase)
    Abar = midpoint_tensor(cell, A, tris)
    total = np.einsum("t,tab->ab", cell.areas[tris], Abar)
    return np.diag(total)


def _sigma(phase: int, convention: str) -> float:
    if convention not in SIGN_CONVENTIONS:
        raise ConfigError(f"unknown sign_convention {convention!r}; expected one of {SIGN_CONVENTIONS}")
    if convention == PAPER_LITERAL:
        return (-1.0) ** (phase - 1)
    return (-1.0) ** phase


def gamma_flux_integral(cell, A, gamma, phase: int) -> np.ndarray:
    """Phase integral of A grad(gamma), elementwise with the midpoint-averaged tensor."""
    tris = np.flatnonzero(cell.tri_phase == phase)
    G = cell.gradients[tris]
    grad = np.einsum("tp,tpa->ta", gamma[cell.triangles[tris]], G)
    Abar = midpoint_tensor(cell, A, tris)
    return np.einsum("t,tab,tb->a", cell.areas[tris], Abar, grad)


def interface_xi_integral(cell, sols, alpha, phase: int) -> np.ndarray:
    L = assemble_interface_load(cell, alpha, phase)
    return np.array([L @ sols.xi[(phase, k)] for k in (1, 2)])


def compute_B(cell, sols, A, alpha, phase: int, convention: str = REMARK_CONSISTENT) -> np.ndarray:
    flux = gamma_flux_integral(cell, A, sols.gamma[phase], phase)
    return _sigma(phase, convention) * flux + interface_xi_integral(cell, sols, alpha, phase)


def coupling_integral(cell, gamma, alpha) -> float:
    """Integral over Sigma of alpha (gamma_1 - gamma_2), each trace from its own side."""
    return float(assemble_interface_load(cell, alpha, 1) @ gamma[1]
                 - assemble_interface_load(cell, alpha, 2) @ gamma[2])


def compute_d_c(cell, sols, alpha, a1, a2):
    """d = integral over Sigma of alpha (gamma_1 - gamma_2); c_i = d + integral of a_i over Y_i."""
    d = coupling_integral(cell, sols.gamma, alpha)
    c = {}
    for phase, a in ((1, a1), (2, a2)):
        ones = np.ones(cell.n_vertices)
        c[phase] = d + float(ones @ (assemble_mass(cell, a, phase) @ ones))
    return d, c[1], c[2]


def extrapolate_d(cell, sols, coeffs, d: float, compat_tol: float = COMPAT_TOL, tol: float = SOLVER_TOL,
                  max_iter: int = MAX_ITER) -> Optional[float]:
    """(4 d_N - d_{N/2}) / 3 from the gamma problems on the half-resolution cell.

    The discrete d converges at second order in the cell mesh size. Returns
    None when the coarse cell cannot be built or solved.
    """
    geometry = getattr(cell, "geometry", None)
    n = getattr(cell, "resolution", 0)
    if geometry is None or n % 2 or n // 2 < MIN_RESOLUTION:
        logger.debug("no Richardson step for d at resolution %d", n)
        return None
    try:
        coarse = build_unit_cell_mesh(geometry, n // 2)
        gamma = {phase: solve_gamma(coarse, coeffs.tensor(phase), coeffs.alpha, phase, sols.gamma_sign,
                                    compat_tol, tol, max_iter)[0]
                 for phase in (1, 2)}
    except (GeometryError, CompatibilityError) as e:
        logger.debug("no Richardson step for d: %s", e)
        return None
    d_coarse = coupling_integral(coarse, gamma, coeffs.alpha)
    extrapolated = (4.0 * d - d_coarse) / 3.0
    logger.info("d at N=%d: %.8g, at N=%d: %.8g, extrapolated %.8g", n, d, n // 2, d_coarse, extrapolated)
    return extrapolated


def compute_g(f, vol: float):
    """Macro source g_i = |Y_i| f_i for y-independent f_i."""
    return f.scaled(vol)


def compute_effective(cell, sols, coeffs, convention: str = REMARK_CONSISTENT, tol: float = SOLVER_TOL,
                      d_extrapolation: str = RICHARDSON, compat_tol: float = COMPAT_TOL,
                      max_iter: int = MAX_ITER) -> EffectiveCoefficients:
    if d_extrapolation not in D_EXTRAPOLATIONS:
        raise ConfigError(f"unknown d_extrapolation {d_extrapolation!r}; expected one of {D_EXTRAPOLATIONS}")
    vol = dict(zip((1, 2), cell.phase_areas))
    Aeff, flux, B, bound_ok = {}, {}, {}, {}
    for phase in (1, 2):
        A = coeffs.tensor(phase)
        Aeff[phase], flux[phase] = compute_Aeff(cell, sols, A, phase)
        B[phase] = compute_B(cell, sols, A, coeffs.alpha, phase, convention)
        bound_ok[phase] = bool(np.all(np.diag(Aeff[phase]) <= variational_bound(cell, A, phase) + IDENTITY_TOL))
        if not bound_ok[phase]:
            logger.warning("phase %d: Aeff diagonal exceeds the variational upper bound", phase)
    d, c1, c2 = compute_d_c(cell, sols, coeffs.alpha, coeffs.a1, coeffs.a2)
    geometry = getattr(cell, "geometry", None)
    eff = EffectiveCoefficients(
        Aeff=Aeff, B=B, d=d, c={1: c1, 2: c2}, vol=vol,
        sign_convention=convention,
        resolution=getattr(cell, "resolution", 0),
        geometry_key=geometry.key() if geometry is not None else "",
        tol=tol,
        flux_form=flux,
        bound_ok=bound_ok,
    )
    if d_extrapolation == RICHARDSON:
        extrapolated = extrapolate_d(cell, sols, coeffs, d, compat_tol, tol, max_iter)
        if extrapolated is not None:
            eff = eff.with_coupling(extrapolated)
    logger.info("effective coefficients: d=%.6g c1=%.6g c2=%.6g", eff.d, eff.c[1], eff.c[2])
    return eff
