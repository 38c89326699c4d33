#!/usr/bin/env python3
"""
barrier-hom - Main entry point

Computes homogenized coefficients for two-phase periodic diffusion with an
imperfect interface, solves the limit problem and compares it against direct
micro simulations for a list of epsilons.

Exit codes: 0 success, 2 invalid input, 3 solver failure, 4 acceptance flags failed.
"""
import argparse
import logging
import sys

from src.errors import HomogenizationError
from src.harness import load_config, run_all, run_cell, run_validate, with_overrides
from src.outputs import eps_label

EXIT_FLAGS_FAILED = 4


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="barrier-hom",
        description="Periodic homogenization with an imperfect interface",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter
    )
    ap.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Full pipeline: cell, macro, micro sweep and report")
    run.add_argument("config", help="Path to the run configuration")
    run.add_argument("--output", help="Output directory (overrides [output] directory)")
    run.add_argument("--excel", action="store_true", help="Also write report.xlsx")

    cell = sub.add_parser("cell", help="Cell problems and effective coefficients only")
    cell.add_argument("config", help="Path to the run configuration")
    cell.add_argument("--output", help="Output directory (overrides [output] directory)")
    cell.add_argument("--dump-mesh", action="store_true", help="Write the cell mesh and stiffness matrices")

    validate = sub.add_parser("validate", help="Check configuration, coefficients and geometry")
    validate.add_argument("config", help="Path to the run configuration")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    try:
        config = load_config(args.config)

        if args.command == "validate":
            _, validation, alpha = run_validate(config)
            print(f"Configuration OK: {config.geometry.describe()}")
            for phase in (1, 2):
                m, M, eta = validation.bounds(phase)
                print(f"  phase {phase}: m={m:.6g} M={M:.6g} eta={eta:.6g}")
            print(f"  alpha mean on interface: {alpha.mean_on_sigma:.3e}")
            print("\nResolved configuration:")
            print(config.to_text(), end="")
            return 0

        if args.command == "cell":
            eff, sols = run_cell(config, args.output, args.dump_mesh)
            for name, indices, value in eff.rows():
                print(f"{name}{indices}\t{value:.10e}")
            return 0

        if args.excel:
            config = with_overrides(config, excel=True)
        report = run_all(config, args.output)
        print(f"{'epsilon':>8}\t{'err1':>12}\t{'err2':>12}")
        for row in report.rows:
            print(f"{eps_label(row.epsilon):>8}\t{row.e1:12.4e}\t{row.e2:12.4e}")
        failed = [name for name, ok in report.flags.items() if not ok]
        if failed:
            print(f"Acceptance flags failed: {', '.join(failed)}", file=sys.stderr)
            return EXIT_FLAGS_FAILED
        print(f"\nAll acceptance flags passed, outputs in {report.files[0].parent}")
        return 0

    except HomogenizationError as e:
        print(f"Error: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
