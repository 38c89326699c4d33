"""Run configuration and the validate -> cell -> effective -> macro -> micro pipeline."""
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from src.cell_problems import CellSolutions, solve_all
from src.coefficients import COEFFICIENT_KEYS, AlphaDiagnostics, CoefficientSet, ValidationReport
from src.coefficients import alpha_diagnostics, validate_coefficients
from src.config import (
    ALPHA_QUAD_N,
    APRIORI_BAND,
    COMPAT_TOL,
    D_EXTRAPOLATIONS,
    DEFAULT_COEFFICIENTS,
    ERROR_FLOOR,
    MAX_ITER,
    MICRO_SIZE_CAP,
    MIN_RESOLUTION,
    REMARK_CONSISTENT,
    RICHARDSON,
    RUNS_DIR,
    SIGN_CONVENTIONS,
    SOLVER_TOL,
    VALIDATION_GRID,
    WORKERS,
)
from src.effective import EffectiveCoefficients, compute_effective, compute_g
from src.errors import ConfigError, ExpressionError, HomogenizationError, StageError
from src.expression import CELL_SYMBOLS, MACRO_SYMBOLS, parse_expression
from src.fem import assemble_mass, assemble_stiffness
from src.geometry import DISK, LAMINATE, GeometrySpec, build_unit_cell_mesh, reciprocal_integer
from src.macro_solver import MacroSolution, run_macro
from src.micro_solver import AprioriSweep, MicroSolution, apriori_sweep
from src import outputs

logger = logging.getLogger(__name__)

SECTIONS = ("geometry", "cell", "macro", "micro", "coefficients", "solver", "output")


@dataclass(frozen=True)
class RunConfig:
    geometry: GeometrySpec = GeometrySpec()
    n_cell: int = 32
    gamma_sign: str = REMARK_CONSISTENT
    compat_tol: float = COMPAT_TOL
    validation_grid: int = VALIDATION_GRID
    d_extrapolation: str = RICHARDSON
    n_macro: int = 32
    n_micro: int = 8
    eps_k: Tuple[int, ...] = (4, 8, 16)
    size_cap: int = MICRO_SIZE_CAP
    coefficients: Tuple[Tuple[str, str], ...] = tuple(sorted(DEFAULT_COEFFICIENTS.items()))
    tol: float = SOLVER_TOL
    max_iter: int = MAX_ITER
    sign_convention: str = REMARK_CONSISTENT
    workers: int = WORKERS
    coercivity_check: bool = True
    output_dir: str = RUNS_DIR
    excel: bool = False

    @property
    def eps_list(self) -> List[float]:
        return [1.0 / k for k in self.eps_k]

    @property
    def coefficient_texts(self) -> Dict[str, str]:
        return dict(self.coefficients)

    def coefficient_set(self) -> CoefficientSet:
        return CoefficientSet.from_texts(self.coefficient_texts)

    def to_text(self) -> str:
        """Resolved configuration in the input format; parse_config(to_text()) == self."""
        g = self.geometry
        texts = self.coefficient_texts
        lines = [
            "[geometry]",
            f"kind = {g.kind}",
            f"theta = {g.theta!r}",
            f"radius = {g.radius!r}",
            f"n_seg = {g.n_seg}",
            "",
            "[cell]",
            f"n = {self.n_cell}",
            f"gamma_sign = {self.gamma_sign}",
            f"compat_tol = {self.compat_tol!r}",
            f"validation_grid = {self.validation_grid}",
            f"d_extrapolation = {self.d_extrapolation}",
            "",
            "[macro]",
            f"n = {self.n_macro}",
            "",
            "[micro]",
            f"n = {self.n_micro}",
            "epsilons = " + ", ".join(f"1/{k}" for k in self.eps_k),
            f"size_cap = {self.size_cap}",
            "",
            "[coefficients]",
        ]
        lines += [f"{key} = {texts[key]}" for key in COEFFICIENT_KEYS]
        lines += [
            "",
            "[solver]",
            f"tol = {self.tol!r}",
            f"max_iter = {self.max_iter}",
            f"sign_convention = {self.sign_convention}",
            f"workers = {self.workers}",
            f"coercivity_check = {'true' if self.coercivity_check else 'false'}",
            "",
            "[output]",
            f"directory = {self.output_dir}",
            f"excel = {'true' if self.excel else 'false'}",
            "",
        ]
        return "\n".join(lines)


# -------- parsing --------

def _int(text: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ValueError(f"expected an integer, got {text!r}")


def _float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ValueError(f"expected a number, got {text!r}")
    if not np.isfinite(value):
        raise ValueError(f"expected a finite number, got {text!r}")
    return value


def _bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in ("true", "yes", "on", "1"):
        return True
    if lowered in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"expected true/false, got {text!r}")


def _choice(options):
    def parse(text: str) -> str:
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {text!r}")
        return text
    return parse


def _epsilon(text: str) -> int:
    item = text.strip()
    if "/" in item:
        num, _, den = item.partition("/")
        if num.strip() != "1":
            raise ValueError(f"epsilon {item!r} must be written as 1/K")
        k = _int(den.strip())
        if k < 1:
            raise ValueError(f"epsilon {item!r} needs a positive integer K")
        return k
    value = _float(item)
    try:
        return reciprocal_integer(value)
    except HomogenizationError:
        raise ValueError(f"epsilon {item} is not the reciprocal of an integer")


def _epsilons(text: str) -> Tuple[int, ...]:
    items = [s for s in text.split(",") if s.strip()]
    if not items:
        raise ValueError("epsilon list is empty")
    ks = [_epsilon(s) for s in items]
    if len(set(ks)) != len(ks):
        raise ValueError("epsilon list has duplicates")
    return tuple(sorted(ks))


_KEYS: Dict[str, Dict[str, Tuple[str, Callable]]] = {
    "geometry": {
        "kind": ("geometry.kind", _choice((LAMINATE, DISK))),
        "theta": ("geometry.theta", _float),
        "radius": ("geometry.radius", _float),
        "n_seg": ("geometry.n_seg", _int),
    },
    "cell": {
        "n": ("n_cell", _int),
        "gamma_sign": ("gamma_sign", _choice(SIGN_CONVENTIONS)),
        "compat_tol": ("compat_tol", _float),
        "validation_grid": ("validation_grid", _int),
        "d_extrapolation": ("d_extrapolation", _choice(D_EXTRAPOLATIONS)),
    },
    "macro": {"n": ("n_macro", _int)},
    "micro": {
        "n": ("n_micro", _int),
        "epsilons": ("eps_k", _epsilons),
        "epsilon": ("eps_k", _epsilons),
        "size_cap": ("size_cap", _int),
    },
    "solver": {
        "tol": ("tol", _float),
        "max_iter": ("max_iter", _int),
        "sign_convention": ("sign_convention", _choice(SIGN_CONVENTIONS)),
        "workers": ("workers", _int),
        "coercivity_check": ("coercivity_check", _bool),
    },
    "output": {
        "directory": ("output_dir", str),
        "excel": ("excel", _bool),
    },
}


def parse_config(text: str) -> RunConfig:
    """Parse the sectioned ``key = value`` format; every error names its 1-based line."""
    values: Dict[str, object] = {}
    geometry: Dict[str, object] = {}
    coefficients = dict(DEFAULT_COEFFICIENTS)
    lines_of: Dict[str, int] = {}
    section = None
    seen = set()
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"malformed section header {raw.strip()!r}", number)
            section = line[1:-1].strip()
            if section not in SECTIONS:
                raise ConfigError(f"unknown section [{section}]", number)
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", number)
        if section is None:
            raise ConfigError("key outside of any section", number)
        key, _, value = (part.strip() for part in line.partition("="))
        if (section, key) in seen:
            raise ConfigError(f"duplicate key {key!r} in [{section}]", number)
        seen.add((section, key))
        if not value:
            raise ConfigError(f"empty value for {key!r}", number)

        if section == "coefficients":
            if key not in COEFFICIENT_KEYS:
                raise ConfigError(f"unknown coefficient {key!r}", number)
            symbols = MACRO_SYMBOLS if key in ("f1", "f2") else CELL_SYMBOLS
            try:
                parse_expression(value, symbols)
            except ExpressionError as e:
                raise ConfigError(f"{key}: {e.message}", number)
            coefficients[key] = value
            lines_of[key] = number
            continue

        spec = _KEYS[section].get(key)
        if spec is None:
            raise ConfigError(f"unknown key {key!r} in [{section}]", number)
        target, parse = spec
        try:
            parsed = parse(value)
        except ValueError as e:
            raise ConfigError(f"{key}: {e}", number)
        if target.startswith("geometry."):
            geometry[target.split(".", 1)[1]] = parsed
        else:
            values[target] = parsed
        lines_of[target] = number

    config = RunConfig(
        geometry=GeometrySpec(**geometry),
        coefficients=tuple(sorted(coefficients.items())),
        **values,
    )
    _check_ranges(config, lines_of)
    return config


def _check_ranges(config: RunConfig, lines_of: Dict[str, int]):
    for attr in ("n_cell", "n_macro", "n_micro"):
        if getattr(config, attr) < MIN_RESOLUTION:
            raise ConfigError(f"{attr} must be at least {MIN_RESOLUTION}", lines_of.get(attr))
    if config.validation_grid < 8:
        raise ConfigError("validation_grid must be at least 8", lines_of.get("validation_grid"))
    if not 0.0 < config.tol <= 1e-2:
        raise ConfigError("tol must lie in (0, 1e-2]", lines_of.get("tol"))
    if config.max_iter < 1 or config.workers < 1:
        raise ConfigError("max_iter and workers must be positive",
                          lines_of.get("max_iter", lines_of.get("workers")))
    if config.compat_tol <= 0:
        raise ConfigError("compat_tol must be positive", lines_of.get("compat_tol"))
    too_big = [k for k in config.eps_k if k * config.n_micro > config.size_cap]
    if too_big:
        raise ConfigError(f"epsilon 1/{too_big[0]} with n = {config.n_micro} exceeds size_cap {config.size_cap}",
                          lines_of.get("eps_k"))


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e}")
    return parse_config(text)


# -------- comparison helpers --------

def interpolate_macro_on_micro(macro: MacroSolution, micro_mesh):
    """u_i of the macro solution at every phase-i micro vertex (0 on the other phase)."""
    u1, u2, _ = macro.evaluate(micro_mesh.vertices)
    phase1 = micro_mesh.vertex_phase == 1
    return np.where(phase1, u1, 0.0), np.where(phase1, 0.0, u2)


def _phase_l2(mesh, phase: int, values: np.ndarray) -> float:
    M = assemble_mass(mesh, 1.0, phase)
    return float(np.sqrt(max(values @ (M @ values), 0.0)))


def l2_errors(micro: MicroSolution, interp) -> Tuple[float, float]:
    """Relative L2 distance between micro u_i and the reference fields on each phase."""
    errors = []
    for phase in (1, 2):
        ref = interp[phase - 1]
        diff = micro.field(phase) - ref
        num = _phase_l2(micro.mesh, phase, diff)
        den = max(_phase_l2(micro.mesh, phase, ref), ERROR_FLOOR)
        errors.append(num / den)
    return errors[0], errors[1]


def corrector_cutoff(mesh, points: np.ndarray, tri: np.ndarray, epsilon: float) -> np.ndarray:
    """Weight of the gradient term: min(1, dist(x, boundary) / eps), zero on boundary macro triangles."""
    dist = np.minimum(points, 1.0 - points).min(axis=1)
    weight = np.clip(dist / epsilon, 0.0, 1.0)
    touching = mesh.boundary_mask[mesh.triangles].any(axis=1)
    weight[touching[tri]] = 0.0
    return weight


def reconstruct_corrector(macro: MacroSolution, cells: CellSolutions, epsilon: float, micro_mesh,
                          boundary_cutoff: bool = True):
    """u_i + eps (m sum_k xi_i^k d_k u_i + gamma_i (u1 - u2)) at the phase-i micro vertices.

    m is the boundary cut-off of ``corrector_cutoff``; with Dirichlet data the
    macro gradient is not resolved on the first layer of elements.
    """
    pts = micro_mesh.vertices
    u1, u2, tri = macro.evaluate(pts)
    cut = corrector_cutoff(macro.mesh, pts, tri, epsilon) if boundary_cutoff else np.ones(len(pts))
    grads = {i: macro.gradients(i)[tri] * cut[:, None] for i in (1, 2)}
    k = int(round(1.0 / epsilon))
    out = []
    for phase in (1, 2):
        ids = np.flatnonzero(micro_mesh.vertex_phase == phase)
        values = np.zeros(micro_mesh.n_vertices)
        if ids.size:
            y = np.mod(pts[ids] * k, 1.0)
            xi1, xi2, gamma = cells.sample(phase, y)
            base = (u1 if phase == 1 else u2)[ids]
            grad = grads[phase][ids]
            jump = (u1 - u2)[ids]
            values[ids] = base + epsilon * (xi1 * grad[:, 0] + xi2 * grad[:, 1] + gamma * jump)
        out.append(values)
    return out[0], out[1]


# -------- report --------

@dataclass
class ConvergenceRow:
    epsilon: float
    e1: float
    e2: float
    e1_corrected: float
    e2_corrected: float
    dofs: int
    vnorm: float
    ritz_min: Optional[float]
    wall_time: float = 0.0


@dataclass
class ConvergenceReport:
    config: RunConfig
    validation: ValidationReport
    alpha: AlphaDiagnostics
    effective: EffectiveCoefficients
    rows: List[ConvergenceRow]
    sweep: AprioriSweep
    flags: Dict[str, bool] = field(default_factory=dict)
    outside_hypotheses: bool = False
    wall_time: float = 0.0
    files: List[Path] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(self.flags.values())


def _decreasing(values: List[float]) -> bool:
    return all(b < a or (a == 0.0 and b == 0.0) for a, b in zip(values, values[1:]))


def evaluate_flags(report: ConvergenceReport) -> Dict[str, bool]:
    rows = report.rows
    flags = {
        "monotone_phase1": _decreasing([r.e1 for r in rows]),
        "monotone_phase2": _decreasing([r.e2 for r in rows]),
    }
    if rows:
        last = rows[-1]
        flags["corrector_not_worse"] = (last.e1_corrected <= last.e1 + 1e-14
                                        and last.e2_corrected <= last.e2 + 1e-14)
    flags["coercive"] = all(r.ritz_min is None or r.ritz_min > 0 for r in rows)
    flags["apriori_band"] = report.sweep.band <= APRIORI_BAND
    flags["variational_bound"] = all(report.effective.bound_ok.values())
    return flags


# -------- stages --------

def _stage(name: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except HomogenizationError as e:
        raise StageError(name, e) from e


def validate_stage(config: RunConfig):
    coeffs = config.coefficient_set()
    config.geometry.validate()
    build_unit_cell_mesh(config.geometry, config.n_cell)
    build_unit_cell_mesh(config.geometry, config.n_micro)
    validation = validate_coefficients(coeffs, config.geometry, config.validation_grid)
    alpha = alpha_diagnostics(coeffs.alpha, config.geometry, ALPHA_QUAD_N)
    logger.info("alpha mean on interface %.3e, sup alpha- %.4g", alpha.mean_on_sigma, alpha.alpha_minus_sup)
    return coeffs, validation, alpha


def cell_stage(config: RunConfig, coeffs: CoefficientSet):
    cell = build_unit_cell_mesh(config.geometry, config.n_cell)
    sols = solve_all(cell, coeffs, config.gamma_sign, config.compat_tol, config.tol, config.max_iter)
    eff = compute_effective(cell, sols, coeffs, config.sign_convention, config.tol, config.d_extrapolation,
                            config.compat_tol, config.max_iter)
    return cell, sols, eff


def _output_dir(config: RunConfig, override=None) -> Path:
    path = Path(override if override is not None else config.output_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def run_validate(config: RunConfig):
    return _stage("validate", validate_stage, config)


def run_cell(config: RunConfig, output_dir=None, dump_mesh: bool = False):
    """Validate, solve the cell problems and write effective.csv plus the corrector fields."""
    out = _output_dir(config, output_dir)
    (out / "resolved_config.txt").write_text(config.to_text(), encoding="utf-8")
    coeffs, validation, alpha = _stage("validate", validate_stage, config)
    cell, sols, eff = _stage("cell", cell_stage, config, coeffs)
    outputs.write_effective_csv(out / "effective.csv", eff)
    outputs.write_cell_fields(out, sols)
    if dump_mesh:
        outputs.write_mesh_dump(out / "cell_mesh.txt", cell)
        for phase in (1, 2):
            K = assemble_stiffness(cell, coeffs.tensor(phase), phase)
            outputs.write_matrix_dump(out / f"cell_stiffness_{phase}.txt", K)
    return eff, sols


def run_all(config: RunConfig, output_dir=None) -> ConvergenceReport:
    """Full pipeline; the first failing stage raises StageError."""
    started = time.perf_counter()
    out = _output_dir(config, output_dir)
    files = [out / "resolved_config.txt"]
    files[0].write_text(config.to_text(), encoding="utf-8")

    coeffs, validation, alpha = _stage("validate", validate_stage, config)
    cell, sols, eff = _stage("cell", cell_stage, config, coeffs)
    files.append(outputs.write_effective_csv(out / "effective.csv", eff))
    files += outputs.write_cell_fields(out, sols)

    g1 = compute_g(coeffs.f1, eff.vol[1])
    g2 = compute_g(coeffs.f2, eff.vol[2])
    macro = _stage("macro", run_macro, eff, g1, g2, config.n_macro, config.tol, config.max_iter)
    files.append(outputs.write_field_csv(out / "macro_u1.csv", macro.mesh.vertices, macro.u1,
                                         header=("vertex_id", "x1", "x2", "value")))
    files.append(outputs.write_field_csv(out / "macro_u2.csv", macro.mesh.vertices, macro.u2,
                                         header=("vertex_id", "x1", "x2", "value")))

    sweep = _stage("micro", apriori_sweep, coeffs, config.geometry, config.n_micro, config.eps_list,
                   config.tol, config.max_iter, config.workers, config.coercivity_check, config.size_cap)
    files.append(outputs.write_apriori_csv(out / "apriori.csv", sweep))

    rows = []
    outside = False
    for sol in sweep.solutions:
        tick = time.perf_counter()
        mesh = sol.mesh
        outside = outside or mesh.outside_hypotheses
        interp = interpolate_macro_on_micro(macro, mesh)
        e1, e2 = l2_errors(sol, interp)
        corrected = _stage("corrector", reconstruct_corrector, macro, sols, sol.epsilon, mesh)
        c1, c2 = l2_errors(sol, corrected)
        rows.append(ConvergenceRow(sol.epsilon, e1, e2, c1, c2, int(mesh.n_vertices), sol.energy_norm,
                                   sol.report.ritz_min, time.perf_counter() - tick))
        k = int(round(1.0 / sol.epsilon))
        files.append(outputs.write_field_csv(out / f"micro_u_1-{k}.csv", mesh.vertices, sol.u))
        logger.info("eps=1/%d: err1=%.4e err2=%.4e corrected %.4e %.4e", k, e1, e2, c1, c2)

    report = ConvergenceReport(config, validation, alpha, eff, rows, sweep, outside_hypotheses=outside)
    report.flags = evaluate_flags(report)
    files.append(outputs.write_report_csv(out / "report.csv", report))
    report.wall_time = time.perf_counter() - started
    files.append(outputs.write_report_txt(out / "report.txt", report))
    if config.excel:
        from src.excel_writer import ExcelWriter
        files.append(ExcelWriter(out).write_report_workbook(report))
    report.files = files
    return report


def with_overrides(config: RunConfig, **changes) -> RunConfig:
    return replace(config, **changes)
