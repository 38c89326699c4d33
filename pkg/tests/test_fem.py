#!/usr/bin/env python3
"""
Tests for P1 assembly, constraint elimination and the sparse solvers
"""
import math
import unittest
from pathlib import Path
import sys

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

sys.path.insert(0, str(Path(__file__).parent.parent))

from src.errors import ConstraintError, SolverError
from src.expression import MACRO_SYMBOLS, parse_expression
from src.fem import (
    LinearSystem,
    apply_constraints,
    assemble_convection,
    assemble_interface_coupling,
    assemble_interface_load,
    assemble_load,
    assemble_mass,
    assemble_stiffness,
    conjugate_gradient,
    interface_mean,
    solve,
    solve_full,
)
from src.geometry import GeometrySpec, build_square_mesh, build_unit_cell_mesh


def macro(text):
    return parse_expression(text, MACRO_SYMBOLS)


class TestVolumeForms(unittest.TestCase):

    def setUp(self):
        self.mesh = build_square_mesh(8)
        self.x = self.mesh.vertices[:, 0]
        self.y = self.mesh.vertices[:, 1]
        self.ones = np.ones(self.mesh.n_vertices)

    def test_stiffness_annihilates_constants(self):
        K = assemble_stiffness(self.mesh)
        np.testing.assert_allclose(K @ self.ones, 0.0, atol=1e-12)
        self.assertEqual(abs(K - K.T).max(), 0.0)

    def test_stiffness_energy_of_linear_field(self):
        A = np.array([[2.0, 0.5], [0.5, 1.0]])
        K = assemble_stiffness(self.mesh, A)
        self.assertAlmostEqual(self.x @ K @ self.x, 2.0, places=12)
        self.assertAlmostEqual(self.x @ K @ self.y, 0.5, places=12)
        self.assertAlmostEqual(self.y @ K @ self.y, 1.0, places=12)

    def test_nonsymmetric_tensor_keeps_asymmetry(self):
        A = np.array([[1.0, 0.3], [0.0, 1.0]])
        K = assemble_stiffness(self.mesh, A)
        # integral of grad(y) . A grad(x) = A[1, 0], of grad(x) . A grad(y) = A[0, 1]
        self.assertAlmostEqual(self.y @ K @ self.x, 0.0, places=12)
        self.assertAlmostEqual(self.x @ K @ self.y, 0.3, places=12)

    def test_mass_integrates_quadratics(self):
        M = assemble_mass(self.mesh)
        self.assertAlmostEqual(self.ones @ M @ self.ones, 1.0, places=13)
        self.assertAlmostEqual(self.x @ M @ self.x, 1.0 / 3.0, places=13)
        Ma = assemble_mass(self.mesh, macro("x1"))
        self.assertAlmostEqual(self.ones @ Ma @ self.ones, 0.5, places=13)

    def test_load_midpoint_rule(self):
        b = assemble_load(self.mesh, macro("x1*x2"))
        self.assertAlmostEqual(b.sum(), 0.25, places=13)
        b = assemble_load(self.mesh, macro("1"))
        self.assertAlmostEqual(b @ self.x, 0.5, places=13)

    def test_convection(self):
        B = np.array([0.7, -0.2])
        C = assemble_convection(self.mesh, B)
        np.testing.assert_allclose(C @ self.ones, 0.0, atol=1e-13)
        self.assertAlmostEqual(self.ones @ C @ self.x, 0.7, places=12)
        self.assertAlmostEqual(self.ones @ C @ self.y, -0.2, places=12)

    def test_phase_restriction(self):
        cell = build_unit_cell_mesh(GeometrySpec(theta=0.25), 8)
        ones = np.ones(cell.n_vertices)
        self.assertAlmostEqual(ones @ assemble_mass(cell, 1.0, 1) @ ones, 0.25, places=13)
        self.assertAlmostEqual(ones @ assemble_mass(cell, 1.0, 2) @ ones, 0.75, places=13)

    def test_assembly_is_additive_over_phases(self):
        cell = build_unit_cell_mesh(GeometrySpec("disk", radius=0.25, n_seg=32), 16)
        A = ((parse_expression("2 + y1"), parse_expression("0.3*y2")),
             (parse_expression("-0.1"), parse_expression("1")))
        a = parse_expression("1 + y1*y2")
        whole, parts = assemble_stiffness(cell, A), assemble_stiffness(cell, A, 1) + assemble_stiffness(cell, A, 2)
        self.assertLess(abs(whole - parts).max(), 1e-14)
        whole, parts = assemble_mass(cell, a), assemble_mass(cell, a, 1) + assemble_mass(cell, a, 2)
        self.assertLess(abs(whole - parts).max(), 1e-14)
        np.testing.assert_allclose(assemble_load(cell, a), assemble_load(cell, a, 1) + assemble_load(cell, a, 2),
                                   rtol=0, atol=1e-14)


class TestInterfaceForms(unittest.TestCase):

    def setUp(self):
        self.cell = build_unit_cell_mesh(GeometrySpec(theta=0.5), 8)
        self.phase1 = (self.cell.vertex_phase == 1).astype(float)

    def test_coupling_vanishes_without_jump(self):
        J = assemble_interface_coupling(self.cell, 1.0)
        np.testing.assert_allclose(J @ np.ones(self.cell.n_vertices), 0.0, atol=1e-13)

    def test_coupling_of_unit_jump(self):
        J = assemble_interface_coupling(self.cell, 1.0)
        self.assertAlmostEqual(self.phase1 @ J @ self.phase1, 2.0, places=12)
        J3 = assemble_interface_coupling(self.cell, parse_expression("3"))
        self.assertAlmostEqual(self.phase1 @ J3 @ self.phase1, 6.0, places=12)

    def test_coupling_against_fine_quadrature(self):
        cell = build_unit_cell_mesh(GeometrySpec(theta=0.5), 64)
        alpha = parse_expression("cos(2*pi*y1)")
        J = assemble_interface_coupling(cell, alpha)
        # jump of w is y1 on both interface lines
        w = cell.vertices[:, 0] * (cell.vertex_phase == 1)
        s = (np.arange(200000) + 0.5) / 200000
        oracle = 2.0 * np.mean(np.cos(2 * np.pi * s) * s * s)
        self.assertAlmostEqual(oracle, 1.0 / np.pi ** 2, delta=1e-10)
        self.assertAlmostEqual(w @ J @ w, oracle, delta=1e-8)

    def test_interface_load_and_mean(self):
        L = assemble_interface_load(self.cell, 1.0, 1)
        self.assertAlmostEqual(L.sum(), 2.0, places=12)
        self.assertTrue(np.all(L[self.cell.vertex_phase == 2] == 0.0))
        L2 = assemble_interface_load(self.cell, 1.0, 2, sign=-1.0)
        self.assertAlmostEqual(L2.sum(), -2.0, places=12)
        self.assertLess(abs(interface_mean(self.cell, parse_expression("cos(2*pi*y1)"))), 1e-14)
        self.assertAlmostEqual(interface_mean(self.cell, parse_expression("0.1 + cos(2*pi*y1)")), 0.1, places=14)

    def test_no_interface(self):
        with self.assertRaises(ConstraintError):
            assemble_interface_coupling(build_square_mesh(4), 1.0)


class TestConstraints(unittest.TestCase):

    def setUp(self):
        A = sp.csr_matrix(np.array([[2.0, -1.0, 0.0], [-1.0, 2.0, -1.0], [0.0, -1.0, 2.0]]))
        self.system = LinearSystem(A, np.array([1.0, 2.0, 3.0]))

    def test_periodic_fold_on_chain(self):
        reduced = apply_constraints(self.system, periodic=[(0, 2)])
        np.testing.assert_allclose(reduced.matrix.toarray(), [[4.0, -2.0], [-2.0, 2.0]])
        np.testing.assert_allclose(reduced.rhs, [4.0, 2.0])
        np.testing.assert_allclose(reduced.expand(np.array([5.0, 7.0])), [5.0, 7.0, 5.0])

    def test_chained_periodic_pairs_form_one_class(self):
        reduced = apply_constraints(self.system, periodic=[(2, 1), (1, 0)])
        self.assertEqual(reduced.dimension, 1)
        np.testing.assert_allclose(reduced.matrix.toarray(), [[2.0]])
        np.testing.assert_allclose(reduced.rhs, [6.0])
        np.testing.assert_array_equal(reduced.constraints.free, [0])
        np.testing.assert_allclose(reduced.expand(np.array([4.0])), [4.0, 4.0, 4.0])

    def test_dirichlet_elimination(self):
        reduced = apply_constraints(self.system, dirichlet=[0])
        np.testing.assert_allclose(reduced.matrix.toarray(), [[2.0, -1.0], [-1.0, 2.0]])
        np.testing.assert_allclose(reduced.expand(np.array([1.0, 1.0])), [0.0, 1.0, 1.0])

    def test_dirichlet_on_periodic_root_removes_class(self):
        reduced = apply_constraints(self.system, dirichlet=[0], periodic=[(0, 2)])
        self.assertEqual(reduced.dimension, 1)
        np.testing.assert_allclose(reduced.expand(np.array([3.0])), [0.0, 3.0, 0.0])

    def test_periodic_member_on_dirichlet(self):
        with self.assertRaises(ConstraintError):
            apply_constraints(self.system, dirichlet=[2], periodic=[(0, 2)])

    def test_zero_mean_multiplier(self):
        mesh = build_square_mesh(8)
        K = assemble_stiffness(mesh)
        M = assemble_mass(mesh)
        w = np.asarray(M.sum(axis=1)).ravel()
        f = np.cos(np.pi * mesh.vertices[:, 0])
        b = M @ f
        b -= w * (b.sum() / w.sum())
        system = apply_constraints(LinearSystem(K, b), zero_mean=w)
        self.assertTrue(system.augmented)
        u, report = solve_full(system)
        self.assertEqual(report.method, "direct")
        self.assertAlmostEqual(w @ u, 0.0, places=12)
        np.testing.assert_allclose(K @ u, b, atol=1e-10)


class TestSolvers(unittest.TestCase):

    def test_cg_matches_direct(self):
        mesh = build_square_mesh(8)
        K = assemble_stiffness(mesh) + assemble_mass(mesh)
        b = assemble_load(mesh, macro("1 + x1"))
        x, report = conjugate_gradient(K, b, 1e-12, 1000)
        np.testing.assert_allclose(x, spsolve(K.tocsc(), b), rtol=1e-9, atol=1e-12)
        self.assertFalse(report.breakdown)
        self.assertGreater(report.ritz_min, 0.0)
        self.assertGreaterEqual(report.ritz_max, report.ritz_min)
        self.assertLessEqual(report.residual, 1e-11)

    def test_cg_breakdown_on_indefinite(self):
        A = sp.csr_matrix(np.diag([1.0, -1.0]))
        with self.assertRaises(SolverError) as ctx:
            conjugate_gradient(A, np.array([1.0, 1.0]))
        self.assertTrue(ctx.exception.report.breakdown)
        self.assertEqual(ctx.exception.exit_code, 3)

    def test_cg_iteration_cap(self):
        mesh = build_square_mesh(16)
        K = assemble_stiffness(mesh) + assemble_mass(mesh)
        # a constant load is reproduced exactly by u = 1, so use a rough right-hand side
        b = np.random.default_rng(3).standard_normal(K.shape[0])
        with self.assertRaises(SolverError) as ctx:
            conjugate_gradient(K, b, 1e-12, 3)
        self.assertEqual(ctx.exception.report.iterations, 3)
        self.assertGreater(ctx.exception.report.residual, 1e-12)
        self.assertFalse(ctx.exception.report.breakdown)

    def test_zero_rhs(self):
        x, report = conjugate_gradient(sp.identity(4, format="csr"), np.zeros(4))
        np.testing.assert_array_equal(x, 0.0)
        self.assertEqual(report.iterations, 0)

    def test_method_dispatch(self):
        A = sp.csr_matrix(np.array([[3.0, 1.0], [0.0, 2.0]]))
        _, report = solve(LinearSystem(A, np.array([1.0, 1.0]), symmetric=False))
        self.assertEqual(report.method, "direct")
        _, report = solve(LinearSystem(A, np.array([1.0, 1.0]), symmetric=False), method="bicgstab")
        self.assertEqual(report.method, "bicgstab")
        S = sp.csr_matrix(np.array([[3.0, 1.0], [1.0, 2.0]]))
        _, report = solve(LinearSystem(S, np.array([1.0, 1.0])))
        self.assertEqual(report.method, "cg")

    def test_tolerance_range(self):
        system = LinearSystem(sp.identity(2, format="csr"), np.ones(2))
        with self.assertRaises(SolverError):
            solve(system, tol=0.1)
        with self.assertRaises(SolverError):
            solve(system, tol=0.0)

    def test_singular_direct_solve(self):
        system = LinearSystem(sp.csr_matrix(np.ones((2, 2))), np.array([1.0, 2.0]), symmetric=False)
        with self.assertRaises(SolverError):
            solve(system)


class TestManufacturedPoisson(unittest.TestCase):
    """-Laplace u = f with u = sin(pi x1) sin(pi x2) and zero boundary data"""

    def error(self, n):
        mesh = build_square_mesh(n)
        f = macro(f"{2 * math.pi ** 2!r}*sin(pi*x1)*sin(pi*x2)")
        system = LinearSystem(assemble_stiffness(mesh), assemble_load(mesh, f))
        system = apply_constraints(system, dirichlet=np.flatnonzero(mesh.boundary_mask))
        u, _ = solve_full(system, tol=1e-12)
        exact = np.sin(np.pi * mesh.vertices[:, 0]) * np.sin(np.pi * mesh.vertices[:, 1])
        e = u - exact
        return math.sqrt(e @ assemble_mass(mesh) @ e)

    def test_second_order_convergence(self):
        errors = [self.error(n) for n in (8, 16, 32)]
        for coarse, fine in zip(errors, errors[1:]):
            self.assertGreaterEqual(coarse / fine, 3.5)


if __name__ == '__main__':
    unittest.main()
