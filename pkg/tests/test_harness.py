#!/usr/bin/env python3
"""
Tests for run configuration, comparison helpers and the pipeline stages
"""
import shutil
import tempfile
import unittest
from pathlib import Path
import sys

import numpy as np

sys.path.insert(0, str(Path(__file__).parent.parent))

from src.cell_problems import solve_all
from src.coefficients import CoefficientSet
from src.effective import EffectiveCoefficients
from src.errors import ConfigError, StageError
from src.fem import SolveReport, assemble_mass
from src.geometry import DISK, GeometrySpec, build_micro_mesh, build_square_mesh, build_unit_cell_mesh
from src.harness import (
    ConvergenceReport,
    ConvergenceRow,
    RunConfig,
    corrector_cutoff,
    evaluate_flags,
    interpolate_macro_on_micro,
    l2_errors,
    load_config,
    parse_config,
    reconstruct_corrector,
    run_all,
    run_cell,
    run_validate,
    with_overrides,
)
from src.macro_solver import MacroSolution
from src.micro_solver import AprioriRow, AprioriSweep, MicroSolution

SMALL_RUN = """
[geometry]
kind = laminate
theta = 0.5

[cell]
n = 8

[macro]
n = 8

[micro]
n = 4
epsilons = 1/2, 1/4

[coefficients]
alpha = cos(2*pi*y1)
f1 = 1
f2 = sin(pi*x1)
"""


class TestParseConfig(unittest.TestCase):

    def test_defaults(self):
        config = parse_config("[geometry]\nkind = laminate\n")
        self.assertEqual(config, RunConfig())
        self.assertEqual(config.eps_list, [0.25, 0.125, 0.0625])

    def test_values_and_comments(self):
        text = ("# disk run\n[geometry]\nkind = disk  # inclusion\nradius = 0.3\nn_seg = 48\n"
                "[solver]\ntol = 1e-9\nworkers = 2\ncoercivity_check = no\n"
                "[coefficients]\nA1_12 = 0.1*cos(2*pi*y2)\n")
        config = parse_config(text)
        self.assertEqual(config.geometry, GeometrySpec(DISK, radius=0.3, n_seg=48))
        self.assertEqual(config.tol, 1e-9)
        self.assertEqual(config.workers, 2)
        self.assertFalse(config.coercivity_check)
        self.assertEqual(config.coefficient_texts["A1_12"], "0.1*cos(2*pi*y2)")
        self.assertEqual(config.coefficient_texts["A1_11"], "1")

    def test_epsilon_forms(self):
        config = parse_config("[micro]\nepsilons = 0.125, 1/4, 1/16\n")
        self.assertEqual(config.eps_k, (4, 8, 16))
        single = parse_config("[micro]\nepsilon = 0.5\n")
        self.assertEqual(single.eps_k, (2,))

    def test_error_lines(self):
        cases = [
            ("[geometry]\nkind = laminate\n[nowhere]\n", 3),
            ("kind = laminate\n", 1),
            ("[geometry]\nkind laminate\n", 2),
            ("[geometry]\nkind = laminate\nkind = disk\n", 3),
            ("[geometry]\ntheta =\n", 2),
            ("[geometry]\nshape = round\n", 2),
            ("[coefficients]\nA3_11 = 1\n", 2),
            ("[coefficients]\n\nalpha = cos(2*pi*x1)\n", 3),
            ("[micro]\nepsilons = 0.3\n", 2),
            ("[micro]\nepsilons = 1/4, 0.25\n", 2),
            ("[cell]\nn = four\n", 2),
            ("[geometry\n", 1),
        ]
        for text, line in cases:
            with self.subTest(text=text):
                with self.assertRaises(ConfigError) as ctx:
                    parse_config(text)
                self.assertEqual(ctx.exception.line, line)
                self.assertTrue(ctx.exception.message.startswith(f"line {line}:"))

    def test_range_checks(self):
        with self.assertRaises(ConfigError) as ctx:
            parse_config("[micro]\nn = 8\nepsilons = 1/128\n")
        self.assertEqual(ctx.exception.line, 3)
        with self.assertRaises(ConfigError):
            parse_config("[solver]\ntol = 0.5\n")
        with self.assertRaises(ConfigError):
            parse_config("[macro]\nn = 2\n")
        with self.assertRaises(ConfigError):
            parse_config("[solver]\nworkers = 0\n")

    def test_resolved_text_round_trip(self):
        config = parse_config(SMALL_RUN)
        self.assertEqual(parse_config(config.to_text()), config)
        disk = with_overrides(config, geometry=GeometrySpec(DISK, radius=0.2, n_seg=16), excel=True)
        self.assertEqual(parse_config(disk.to_text()), disk)

    def test_load_config(self):
        root = Path(__file__).parent.parent / "config"
        for name in ("minimal.cfg", "acceptance_laminate.cfg", "disk_inclusion.cfg"):
            with self.subTest(name=name):
                self.assertIsInstance(load_config(root / name), RunConfig)
        with self.assertRaises(ConfigError):
            load_config(root / "missing.cfg")

    def test_shipped_configs_validate(self):
        root = Path(__file__).parent.parent / "config"
        paths = sorted(root.glob("*.cfg"))
        self.assertGreaterEqual(len(paths), 3)
        for path in paths:
            with self.subTest(name=path.name):
                _, validation, alpha = run_validate(load_config(path))
                self.assertGreater(validation.m1, 0.0)
                self.assertLess(abs(alpha.mean_on_sigma), 1e-10)


class TestComparison(unittest.TestCase):

    def setUp(self):
        self.macro_mesh = build_square_mesh(4)
        v = self.macro_mesh.vertices
        self.macro = MacroSolution(self.macro_mesh, v[:, 0] + 2 * v[:, 1], 3 - v[:, 0],
                                   SolveReport(1, 0.0, "direct"))
        self.micro_mesh = build_micro_mesh(GeometrySpec(theta=0.5), 4, 0.25)

    def micro_solution(self, u1, u2):
        return MicroSolution(self.micro_mesh, u1, u2, 0.25, SolveReport(0, 0.0, "cg"), 0.0, 1.0)

    def test_linear_fields_interpolate_exactly(self):
        interp = interpolate_macro_on_micro(self.macro, self.micro_mesh)
        x = self.micro_mesh.vertices
        phase1 = self.micro_mesh.vertex_phase == 1
        exact1 = np.where(phase1, x[:, 0] + 2 * x[:, 1], 0.0)
        exact2 = np.where(phase1, 0.0, 3 - x[:, 0])
        np.testing.assert_allclose(interp[0], exact1, atol=1e-13)
        np.testing.assert_allclose(interp[1], exact2, atol=1e-13)
        e1, e2 = l2_errors(self.micro_solution(exact1, exact2), interp)
        self.assertLess(e1, 1e-12)
        self.assertLess(e2, 1e-12)

    def test_relative_error(self):
        interp = interpolate_macro_on_micro(self.macro, self.micro_mesh)
        e1, e2 = l2_errors(self.micro_solution(1.1 * interp[0], interp[1]), interp)
        self.assertAlmostEqual(e1, 0.1, places=12)
        self.assertLess(e2, 1e-14)

    def test_laminate_corrector(self):
        cell = build_unit_cell_mesh(GeometrySpec(theta=0.5), 8)
        cells = solve_all(cell, CoefficientSet.from_texts())
        x2 = self.macro_mesh.vertices[:, 1]
        macro = MacroSolution(self.macro_mesh, x2.copy(), x2.copy(), SolveReport(1, 0.0, "direct"))
        eps = 0.25
        c1, c2 = reconstruct_corrector(macro, cells, eps, self.micro_mesh, boundary_cutoff=False)

        x = self.micro_mesh.vertices
        y2 = np.mod(x[:, 1] * 4, 1.0)
        phase1 = self.micro_mesh.vertex_phase == 1
        expected1 = x[:, 1] + eps * (0.25 - y2)
        # phase-2 vertices on a cell bottom belong to the top of the cell below
        y2_top = np.where(y2 < 0.25, y2 + 1.0, y2)
        expected2 = x[:, 1] + eps * (0.75 - y2_top)
        np.testing.assert_allclose(c1[phase1], expected1[phase1], atol=1e-8)
        np.testing.assert_allclose(c2[~phase1], expected2[~phase1], atol=1e-8)
        np.testing.assert_array_equal(c1[~phase1], 0.0)

    def test_corrector_cutoff_weights(self):
        mesh = build_square_mesh(8)
        pts = np.array([[0.5, 0.5], [0.5, 0.01], [0.5, 0.2], [0.99, 0.5], [0.3, 0.7]])
        tri, _ = mesh.locate(pts)
        weight = corrector_cutoff(mesh, pts, tri, 0.25)
        np.testing.assert_allclose(weight, [1.0, 0.0, 0.8, 0.0, 1.0])

    def test_cutoff_scales_only_the_gradient_term(self):
        cell = build_unit_cell_mesh(GeometrySpec(theta=0.5), 8)
        cells = solve_all(cell, CoefficientSet.from_texts())
        mesh = build_square_mesh(8)
        x2 = mesh.vertices[:, 1]
        macro = MacroSolution(mesh, x2.copy(), x2.copy(), SolveReport(1, 0.0, "direct"))
        full = reconstruct_corrector(macro, cells, 0.25, self.micro_mesh, boundary_cutoff=False)
        cut = reconstruct_corrector(macro, cells, 0.25, self.micro_mesh)

        x = self.micro_mesh.vertices
        tri, _ = mesh.locate(x)
        weight = corrector_cutoff(mesh, x, tri, 0.25)
        phase1 = self.micro_mesh.vertex_phase == 1
        for values_full, values_cut, mask in ((full[0], cut[0], phase1), (full[1], cut[1], ~phase1)):
            np.testing.assert_allclose(values_cut[mask] - x[mask, 1],
                                       weight[mask] * (values_full[mask] - x[mask, 1]), atol=1e-12)
        on_boundary = self.micro_mesh.boundary_mask & phase1
        np.testing.assert_allclose(cut[0][on_boundary], x[on_boundary, 1], atol=1e-14)

    def test_l2_errors_triangle_inequality(self):
        rng = np.random.default_rng(5)
        n = self.micro_mesh.n_vertices
        phase1 = self.micro_mesh.vertex_phase == 1

        def random_pair():
            return np.where(phase1, rng.standard_normal(n), 0.0), np.where(phase1, 0.0, rng.standard_normal(n))

        def norm(fields, phase):
            values = fields[phase - 1]
            return float(np.sqrt(values @ (assemble_mass(self.micro_mesh, 1.0, phase) @ values)))

        u, v, w = random_pair(), random_pair(), random_pair()
        e_uw = l2_errors(self.micro_solution(*u), w)
        e_uv = l2_errors(self.micro_solution(*u), v)
        e_vw = l2_errors(self.micro_solution(*v), w)
        for phase in (1, 2):
            # ||u - w|| <= ||u - v|| + ||v - w||
            lhs = e_uw[phase - 1] * norm(w, phase)
            rhs = e_uv[phase - 1] * norm(v, phase) + e_vw[phase - 1] * norm(w, phase)
            self.assertLessEqual(lhs, rhs + 1e-12)


class TestFlags(unittest.TestCase):

    def report(self, e1, e2, corrected=None, ratios=(1.0, 1.5), ritz=0.5):
        corrected = corrected or (e1[-1], e2[-1])
        rows = [ConvergenceRow(1.0 / 2 ** (k + 2), a, b, a, b, 100, 1.0, ritz) for k, (a, b) in enumerate(zip(e1, e2))]
        rows[-1].e1_corrected, rows[-1].e2_corrected = corrected
        sweep = AprioriSweep([AprioriRow(0.25, r, 1.0, r, ritz) for r in ratios])
        eff = EffectiveCoefficients(Aeff={1: np.eye(2), 2: np.eye(2)}, B={1: np.zeros(2), 2: np.zeros(2)}, d=0.0,
                                    c={1: 1.0, 2: 1.0}, vol={1: 0.5, 2: 0.5}, bound_ok={1: True, 2: True})
        return ConvergenceReport(RunConfig(), None, None, eff, rows, sweep)

    def test_all_pass(self):
        report = self.report([0.2, 0.1, 0.05], [0.3, 0.2, 0.1], corrected=(0.01, 0.02))
        flags = evaluate_flags(report)
        self.assertEqual(set(flags), {"monotone_phase1", "monotone_phase2", "corrector_not_worse", "coercive",
                                      "apriori_band", "variational_bound"})
        self.assertTrue(all(flags.values()))

    def test_failures(self):
        flags = evaluate_flags(self.report([0.2, 0.25, 0.05], [0.3, 0.2, 0.1], corrected=(0.5, 0.0),
                                           ratios=(1.0, 3.0), ritz=-1.0))
        self.assertFalse(flags["monotone_phase1"])
        self.assertTrue(flags["monotone_phase2"])
        self.assertFalse(flags["corrector_not_worse"])
        self.assertFalse(flags["apriori_band"])
        self.assertFalse(flags["coercive"])

    def test_passed_property(self):
        report = self.report([0.2, 0.1], [0.3, 0.2])
        report.flags = evaluate_flags(report)
        self.assertTrue(report.passed)
        report.flags["coercive"] = False
        self.assertFalse(report.passed)


class TestPipeline(unittest.TestCase):

    def setUp(self):
        self.temp_dir = Path(tempfile.mkdtemp())
        self.config = parse_config(SMALL_RUN)

    def tearDown(self):
        shutil.rmtree(self.temp_dir, ignore_errors=True)

    def test_run_all_writes_artifacts(self):
        report = run_all(self.config, self.temp_dir / "a")
        out = self.temp_dir / "a"
        for name in ("resolved_config.txt", "effective.csv", "xi_1_1.csv", "gamma_2.csv", "macro_u1.csv",
                     "macro_u2.csv", "apriori.csv", "micro_u_1-2.csv", "micro_u_1-4.csv", "report.csv",
                     "report.txt"):
            self.assertTrue((out / name).exists(), name)
        self.assertFalse((out / "report.xlsx").exists())
        self.assertEqual([r.epsilon for r in report.rows], [0.5, 0.25])
        self.assertIn("monotone_phase1", report.flags)
        self.assertEqual(parse_config((out / "resolved_config.txt").read_text()), self.config)

    def test_runs_are_reproducible(self):
        run_all(self.config, self.temp_dir / "a")
        run_all(self.config, self.temp_dir / "b")
        for name in ("effective.csv", "macro_u1.csv", "apriori.csv", "micro_u_1-4.csv", "report.csv"):
            with self.subTest(name=name):
                self.assertEqual((self.temp_dir / "a" / name).read_bytes(),
                                 (self.temp_dir / "b" / name).read_bytes())

    def test_compatibility_violation_stops_at_cell_stage(self):
        config = with_overrides(self.config, coefficients=tuple(
            sorted({**self.config.coefficient_texts, "alpha": "1"}.items())))
        with self.assertRaises(StageError) as ctx:
            run_all(config, self.temp_dir / "bad")
        self.assertEqual(ctx.exception.stage, "cell")
        self.assertEqual(ctx.exception.exit_code, 2)
        self.assertEqual(ctx.exception.cause.code, "COMPAT_VIOLATION")

    def test_invalid_coefficients_stop_at_validate_stage(self):
        config = with_overrides(self.config, coefficients=tuple(
            sorted({**self.config.coefficient_texts, "a1": "-1"}.items())))
        with self.assertRaises(StageError) as ctx:
            run_cell(config, self.temp_dir / "bad")
        self.assertEqual(ctx.exception.stage, "validate")
        self.assertEqual(ctx.exception.exit_code, 2)

    def test_run_cell_with_mesh_dump(self):
        eff, sols = run_cell(self.config, self.temp_dir / "cell", dump_mesh=True)
        out = self.temp_dir / "cell"
        for name in ("effective.csv", "cell_mesh.txt", "cell_stiffness_1.txt", "cell_stiffness_2.txt"):
            self.assertTrue((out / name).exists(), name)
        self.assertFalse((out / "report.csv").exists())
        self.assertEqual(eff.resolution, 8)


if __name__ == '__main__':
    unittest.main()
