#!/usr/bin/env python3
"""
Tests for the command-line entry point
"""
import contextlib
import io
import shutil
import tempfile
import unittest
from pathlib import Path
import sys

sys.path.insert(0, str(Path(__file__).parent.parent))

from src.main import EXIT_FLAGS_FAILED, build_parser, main

SMALL_CELL = """
[geometry]
kind = laminate

[cell]
n = 8

[micro]
n = 4
epsilons = 1/2

[coefficients]
alpha = {alpha}
"""


class TestMain(unittest.TestCase):

    def setUp(self):
        self.temp_dir = Path(tempfile.mkdtemp())

    def tearDown(self):
        shutil.rmtree(self.temp_dir, ignore_errors=True)

    def write_config(self, text, name="run.cfg"):
        path = self.temp_dir / name
        path.write_text(text, encoding="utf-8")
        return str(path)

    def run_main(self, *argv):
        out, err = io.StringIO(), io.StringIO()
        with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
            code = main(list(argv))
        return code, out.getvalue(), err.getvalue()

    def test_parser_requires_command(self):
        with contextlib.redirect_stderr(io.StringIO()):
            with self.assertRaises(SystemExit):
                build_parser().parse_args([])

    def test_validate_ok(self):
        code, out, _ = self.run_main("validate", self.write_config(SMALL_CELL.format(alpha="cos(2*pi*y1)")))
        self.assertEqual(code, 0)
        self.assertIn("Configuration OK", out)
        self.assertIn("Resolved configuration:", out)
        self.assertIn("[geometry]\nkind = laminate", out)
        self.assertIn("d_extrapolation = richardson", out)

    def test_bad_config_exit_code(self):
        code, _, err = self.run_main("validate", self.write_config("[geometry]\nkind = hexagon\n"))
        self.assertEqual(code, 2)
        self.assertIn("line 2", err)

    def test_missing_config_file(self):
        code, _, err = self.run_main("validate", str(self.temp_dir / "nope.cfg"))
        self.assertEqual(code, 2)
        self.assertIn("Error:", err)

    def test_compatibility_violation(self):
        config = self.write_config(SMALL_CELL.format(alpha="1"))
        code, _, err = self.run_main("cell", config, "--output", str(self.temp_dir / "out"))
        self.assertEqual(code, 2)
        self.assertIn("COMPAT_VIOLATION", err)

    def test_cell_with_mesh_dump(self):
        config = self.write_config(SMALL_CELL.format(alpha="cos(2*pi*y1)"))
        out_dir = self.temp_dir / "out"
        code, out, _ = self.run_main("cell", config, "--output", str(out_dir), "--dump-mesh")
        self.assertEqual(code, 0)
        self.assertIn("Aeff111", out)
        self.assertTrue((out_dir / "effective.csv").exists())
        self.assertTrue((out_dir / "cell_mesh.txt").exists())
        self.assertTrue((out_dir / "cell_stiffness_2.txt").exists())

    def test_run_exit_code_follows_flags(self):
        config = self.write_config(SMALL_CELL.format(alpha="cos(2*pi*y1)") + "f1 = 1\nf2 = 1\n")
        out_dir = self.temp_dir / "run"
        code, out, _ = self.run_main("run", config, "--output", str(out_dir), "--excel")
        self.assertIn(code, (0, EXIT_FLAGS_FAILED))
        self.assertIn("1/2", out)
        self.assertTrue((out_dir / "report.txt").exists())
        self.assertTrue((out_dir / "report.xlsx").exists())


if __name__ == '__main__':
    unittest.main()
