"""Material data of the two-phase cell and the macro sources.

A CoefficientSet is built from the text block of a run configuration; cell
data (A1, A2, a1, a2, alpha) may reference y1, y2 and the sources f1, f2 may
reference x1, x2.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Mapping, Tuple

import numpy as np

from src.config import ALPHA_QUAD_N, DEFAULT_COEFFICIENTS, PERIODICITY_TOL, VALIDATION_GRID
from src.errors import CoefficientError, ConfigError
from src.expression import CELL_SYMBOLS, MACRO_SYMBOLS, Expression, parse_expression

logger = logging.getLogger(__name__)

TENSOR_KEYS = ("11", "12", "21", "22")
COEFFICIENT_KEYS = tuple(
    [f"A1_{k}" for k in TENSOR_KEYS] + [f"A2_{k}" for k in TENSOR_KEYS] + ["a1", "a2", "alpha", "f1", "f2"]
)

Tensor = Tuple[Tuple[Expression, Expression], Tuple[Expression, Expression]]


@dataclass(frozen=True)
class CoefficientSet:
    A1: Tensor
    A2: Tensor
    a1: Expression
    a2: Expression
    alpha: Expression
    f1: Expression
    f2: Expression

    @classmethod
    def from_texts(cls, texts: Mapping[str, str] = None) -> "CoefficientSet":
        """Parse a {key: expression text} mapping; missing keys take the defaults."""
        merged = dict(DEFAULT_COEFFICIENTS)
        for key, value in (texts or {}).items():
            if key not in COEFFICIENT_KEYS:
                raise ConfigError(f"unknown coefficient {key!r}")
            merged[key] = value

        def cell(key):
            return parse_expression(merged[key], CELL_SYMBOLS)

        def tensor(prefix):
            return ((cell(f"{prefix}_11"), cell(f"{prefix}_12")),
                    (cell(f"{prefix}_21"), cell(f"{prefix}_22")))

        return cls(
            A1=tensor("A1"),
            A2=tensor("A2"),
            a1=cell("a1"),
            a2=cell("a2"),
            alpha=cell("alpha"),
            f1=parse_expression(merged["f1"], MACRO_SYMBOLS),
            f2=parse_expression(merged["f2"], MACRO_SYMBOLS),
        )

    def to_texts(self) -> dict:
        out = {}
        for prefix, tensor in (("A1", self.A1), ("A2", self.A2)):
            for key, (r, c) in zip(TENSOR_KEYS, ((0, 0), (0, 1), (1, 0), (1, 1))):
                out[f"{prefix}_{key}"] = tensor[r][c].text
        for name in ("a1", "a2", "alpha", "f1", "f2"):
            out[name] = getattr(self, name).text
        return out

    def tensor(self, phase: int) -> Tensor:
        return self.A1 if phase == 1 else self.A2

    def reaction(self, phase: int) -> Expression:
        return self.a1 if phase == 1 else self.a2

    def source(self, phase: int) -> Expression:
        return self.f1 if phase == 1 else self.f2

    def is_symmetric(self, phase: int) -> bool:
        A = self.tensor(phase)
        return A[0][1] == A[1][0]

    def with_alpha(self, alpha: Expression) -> "CoefficientSet":
        return CoefficientSet(self.A1, self.A2, self.a1, self.a2, alpha, self.f1, self.f2)

    def with_sources(self, f1: Expression, f2: Expression) -> "CoefficientSet":
        return CoefficientSet(self.A1, self.A2, self.a1, self.a2, self.alpha, f1, f2)


def evaluate_tensor(A, points) -> np.ndarray:
    """Values of a 2x2 expression tensor (or a constant array) at (n, 2) points, shape (n, 2, 2)."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if isinstance(A, np.ndarray):
        return np.broadcast_to(A, (pts.shape[0], 2, 2)).copy()
    out = np.empty((pts.shape[0], 2, 2))
    for r in range(2):
        for c in range(2):
            out[:, r, c] = A[r][c].evaluate_many(pts)
    return out


def evaluate_scalar(a, points) -> np.ndarray:
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if isinstance(a, Expression):
        return a.evaluate_many(pts)
    return np.full(pts.shape[0], float(a))


@dataclass
class ValidationReport:
    m1: float
    M1: float
    m2: float
    M2: float
    eta1: float
    eta2: float
    grid_n: int
    periodicity_warnings: List[str] = field(default_factory=list)

    def bounds(self, phase: int):
        if phase == 1:
            return self.m1, self.M1, self.eta1
        return self.m2, self.M2, self.eta2


def _phase_samples(geometry, grid_n: int, phase: int) -> np.ndarray:
    s = (np.arange(grid_n) + 0.5) / grid_n
    gx, gy = np.meshgrid(s, s)
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    pts = pts[geometry.phase_of(pts) == phase]
    if pts.shape[0] == 0:
        pts = geometry.interior_point(phase).reshape(1, 2)
    return pts


def validate_coefficients(coeffs: CoefficientSet, geometry, grid_n: int = VALIDATION_GRID) -> ValidationReport:
    """Sample ellipticity, boundedness and reaction positivity on each phase."""
    if grid_n < 8:
        raise CoefficientError(f"validation grid must be at least 8, got {grid_n}")
    values = {}
    for phase in (1, 2):
        pts = _phase_samples(geometry, grid_n, phase)
        A = evaluate_tensor(coeffs.tensor(phase), pts)
        sym = 0.5 * (A + np.transpose(A, (0, 2, 1)))
        m = float(np.linalg.eigvalsh(sym)[:, 0].min())
        M = float(np.linalg.svd(A, compute_uv=False)[:, 0].max())
        eta = float(evaluate_scalar(coeffs.reaction(phase), pts).min())
        if m <= 0:
            raise CoefficientError(
                f"A{phase} is not uniformly elliptic: smallest eigenvalue of its symmetric part is {m:.6g}")
        if eta <= 0:
            raise CoefficientError(f"a{phase} is not positive: minimum sampled value is {eta:.6g}")
        values[phase] = (m, M, eta)
        logger.debug("phase %d: m=%.6g M=%.6g eta=%.6g over %d samples", phase, m, M, eta, pts.shape[0])

    report = ValidationReport(
        m1=values[1][0], M1=values[1][1], m2=values[2][0], M2=values[2][1],
        eta1=values[1][2], eta2=values[2][2], grid_n=grid_n,
    )
    report.periodicity_warnings = check_periodicity(coeffs, grid_n)
    return report


def check_periodicity(coeffs: CoefficientSet, grid_n: int = VALIDATION_GRID, tol: float = PERIODICITY_TOL) -> List[str]:
    """Compare cell data on opposite edges of the unit cell; mismatches are logged, not raised."""
    s = np.linspace(0.0, 1.0, grid_n + 1)
    zeros, ones = np.zeros_like(s), np.ones_like(s)
    pairs = (
        (np.column_stack([zeros, s]), np.column_stack([ones, s])),
        (np.column_stack([s, zeros]), np.column_stack([s, ones])),
    )
    named = {key: expr for key, expr in _cell_expressions(coeffs)}
    mismatched = []
    for key, expr in named.items():
        if expr.is_constant:
            continue
        gap = max(float(np.abs(expr.evaluate_many(lo) - expr.evaluate_many(hi)).max()) for lo, hi in pairs)
        if gap > tol:
            mismatched.append(key)
            logger.warning("%s = %s is not numerically Y-periodic (edge mismatch %.3e)", key, expr.text, gap)
    return mismatched


def _cell_expressions(coeffs: CoefficientSet):
    for prefix, tensor in (("A1", coeffs.A1), ("A2", coeffs.A2)):
        for key, (r, c) in zip(TENSOR_KEYS, ((0, 0), (0, 1), (1, 0), (1, 1))):
            yield f"{prefix}_{key}", tensor[r][c]
    yield "a1", coeffs.a1
    yield "a2", coeffs.a2
    yield "alpha", coeffs.alpha


@dataclass
class AlphaDiagnostics:
    mean_on_sigma: float
    alpha_plus_min_on_support: float
    alpha_minus_sup: float
    sigma_measure: float
    quad_n: int


def alpha_diagnostics(alpha: Expression, geometry, quad_n: int = ALPHA_QUAD_N) -> AlphaDiagnostics:
    """Mean of alpha over the exact interface and the sampled split alpha = alpha+ - alpha-."""
    if quad_n < 16:
        raise CoefficientError(f"alpha quadrature needs at least 16 pieces per component, got {quad_n}")
    pts, weights, breaks = geometry.sigma_quadrature(quad_n)
    at_gauss = alpha.evaluate_many(pts)
    measure = float(weights.sum())
    mean = float(np.dot(weights, at_gauss) / measure)

    samples = np.concatenate([at_gauss, alpha.evaluate_many(breaks)])
    plus = np.maximum(samples, 0.0)
    minus = np.maximum(-samples, 0.0)
    positive = plus[plus > 0]
    return AlphaDiagnostics(
        mean_on_sigma=mean,
        alpha_plus_min_on_support=float(positive.min()) if positive.size else 0.0,
        alpha_minus_sup=float(minus.max()),
        sigma_measure=measure,
        quad_n=quad_n,
    )
