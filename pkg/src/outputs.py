"""Plain-text artifacts: field/table CSVs, the text report, mesh and matrix dumps.

CSV files carry no timestamps; floats are written with 17 significant digits
so repeated runs are byte-identical.
"""
import csv
from pathlib import Path

import numpy as np
import scipy.sparse as sp


def _num(value) -> str:
    if value is None:
        return ""
    return format(float(value), ".17g")


def eps_label(epsilon: float) -> str:
    return f"1/{int(round(1.0 / epsilon))}"


def _writer(path: Path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    handle = open(path, "w", newline="", encoding="utf-8")
    return handle, csv.writer(handle, lineterminator="\n")


def write_field_csv(path, vertices, values, mask=None, header=("vertex_id", "x1", "x2", "value")) -> Path:
    """One row per vertex (optionally only where ``mask`` holds)."""
    ids = np.arange(len(values)) if mask is None else np.flatnonzero(mask)
    handle, out = _writer(path)
    with handle:
        out.writerow(header)
        for v in ids:
            out.writerow([int(v), _num(vertices[v, 0]), _num(vertices[v, 1]), _num(values[v])])
    return Path(path)


def write_cell_fields(directory, sols) -> list:
    directory = Path(directory)
    cell = sols.mesh
    written = []
    for name, values in sols.field_names():
        phase = int(name.split("_")[1])
        written.append(write_field_csv(directory / f"{name}.csv", cell.vertices, values,
                                       mask=cell.vertex_phase == phase, header=("vertex_id", "y1", "y2", "value")))
    return written


def write_effective_csv(path, eff) -> Path:
    handle, out = _writer(path)
    with handle:
        out.writerow(["name", "indices", "value", "convention", "N", "geometry"])
        for name, indices, value in eff.rows():
            out.writerow([name, indices, _num(value), eff.sign_convention, eff.resolution, eff.geometry_key])
    return Path(path)


def write_apriori_csv(path, sweep) -> Path:
    handle, out = _writer(path)
    with handle:
        out.writerow(["epsilon", "vnorm", "fnorm", "ratio", "ritz_min"])
        for row in sweep.rows:
            out.writerow([eps_label(row.epsilon), _num(row.vnorm), _num(row.fnorm), _num(row.ratio),
                          _num(row.ritz_min)])
    return Path(path)


def write_report_csv(path, report) -> Path:
    handle, out = _writer(path)
    with handle:
        out.writerow(["epsilon", "err1", "err2", "err1_corrected", "err2_corrected", "micro_dofs"])
        for row in report.rows:
            out.writerow([eps_label(row.epsilon), _num(row.e1), _num(row.e2), _num(row.e1_corrected),
                          _num(row.e2_corrected), row.dofs])
    return Path(path)


def write_report_txt(path, report) -> Path:
    cfg = report.config
    eff = report.effective
    lines = [
        "barrier-hom convergence report",
        "",
        f"geometry: {cfg.geometry.describe()}  N_cell={cfg.n_cell}  N_macro={cfg.n_macro}  N_micro={cfg.n_micro}",
        f"sign convention: {eff.sign_convention}  gamma sign: {cfg.gamma_sign}",
    ]
    if report.outside_hypotheses:
        lines.append("note: a phase never meets the outer boundary; comparison lies outside the "
                     "homogenization hypotheses")
    lines += ["", "effective coefficients:"]
    for name, indices, value in eff.rows():
        lines.append(f"  {name}{indices:<3} {value: .10e}")
    lines += ["", "validation:",
              f"  m1={report.validation.m1:.6g} M1={report.validation.M1:.6g} eta1={report.validation.eta1:.6g}",
              f"  m2={report.validation.m2:.6g} M2={report.validation.M2:.6g} eta2={report.validation.eta2:.6g}",
              f"  alpha mean on interface {report.alpha.mean_on_sigma:.3e}, "
              f"sup alpha- {report.alpha.alpha_minus_sup:.6g}"]
    lines += ["", f"{'epsilon':>8} {'err1':>12} {'err2':>12} {'err1+corr':>12} {'err2+corr':>12} "
                  f"{'dofs':>8} {'time[s]':>8}"]
    for row in report.rows:
        lines.append(f"{eps_label(row.epsilon):>8} {row.e1:12.4e} {row.e2:12.4e} {row.e1_corrected:12.4e} "
                     f"{row.e2_corrected:12.4e} {row.dofs:8d} {row.wall_time:8.2f}")
    lines += ["", "flags:"]
    for name, ok in report.flags.items():
        lines.append(f"  {name:<22} {'pass' if ok else 'FAIL'}")
    lines += ["", f"total wall time: {report.wall_time:.2f} s", ""]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("\n".join(lines), encoding="utf-8")
    return Path(path)


def write_mesh_dump(path, mesh) -> Path:
    """Sections vertices / triangles / interface / periodic, header line with counts."""
    v, t = mesh.vertices, mesh.triangles
    s1, s2 = mesh.iface_side1, mesh.iface_side2
    pairs = mesh.periodic_pairs
    lines = [f"# mesh vertices={len(v)} triangles={len(t)} interface={len(s1)} periodic={len(pairs)}",
             "vertices"]
    lines += [f"{i} {_num(x)} {_num(y)}" for i, (x, y) in enumerate(v)]
    lines.append("triangles")
    lines += [f"{i} {a} {b} {c} {p}" for i, ((a, b, c), p) in enumerate(zip(t, mesh.tri_phase))]
    lines.append("interface")
    lines += [f"{a1} {b1} {a2} {b2} {_num(nx)} {_num(ny)}"
              for (a1, b1), (a2, b2), (nx, ny) in zip(s1, s2, mesh.iface_normals)]
    lines.append("periodic")
    lines += [f"{m} {s}" for m, s in pairs]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return Path(path)


def write_matrix_dump(path, matrix) -> Path:
    coo = sp.coo_matrix(matrix)
    order = np.lexsort((coo.col, coo.row))
    lines = [f"# {coo.shape[0]} {coo.shape[1]} {coo.nnz}"]
    lines += [f"{r} {c} {_num(x)}" for r, c, x in zip(coo.row[order], coo.col[order], coo.data[order])]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return Path(path)


def read_matrix_dump(path) -> sp.csr_matrix:
    rows, cols, vals = [], [], []
    with open(path, encoding="utf-8") as handle:
        shape = tuple(int(x) for x in handle.readline().lstrip("#").split()[:2])
        for line in handle:
            r, c, x = line.split()
            rows.append(int(r))
            cols.append(int(c))
            vals.append(float(x))
    return sp.csr_matrix((vals, (rows, cols)), shape=shape)
