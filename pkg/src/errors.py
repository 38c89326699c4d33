"""Exception hierarchy shared by every stage of the pipeline.

Each class carries a stable ``code`` and the CLI ``exit_code`` it maps to:
2 for input/validation problems, 3 for solver failures.
"""


class HomogenizationError(Exception):
    code = "ERROR"
    exit_code = 1

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message

    def __str__(self):
        return f"{self.code}: {self.message}"


# -------- validation (exit 2) --------

class ValidationError(HomogenizationError):
    code = "VALIDATION"
    exit_code = 2


class ConfigError(ValidationError):
    code = "CONFIG"

    def __init__(self, message: str, line: int = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ExpressionError(ValidationError):
    code = "EXPRESSION"

    def __init__(self, message: str, offset: int = None):
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)
        self.offset = offset


class CoefficientError(ValidationError):
    code = "COEFFICIENT"


class GeometryError(ValidationError):
    code = "GEOMETRY"


class ConstraintError(ValidationError):
    code = "CONSTRAINT"


class CompatibilityError(ValidationError):
    code = "COMPAT_VIOLATION"


# -------- solver (exit 3) --------

class SolverError(HomogenizationError):
    code = "SOLVER"
    exit_code = 3

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


class CoercivityError(SolverError):
    code = "INDEFINITE_FORM"

    def __init__(self, message: str, report=None, ritz_min: float = None):
        super().__init__(message, report)
        self.ritz_min = ritz_min


class MacroSolveError(SolverError):
    code = "MACRO_BREAKDOWN"


# -------- pipeline --------

class StageError(HomogenizationError):
    """First failing pipeline stage; keeps the exit code of its cause."""
    code = "STAGE"

    def __init__(self, stage: str, cause: HomogenizationError):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause
        self.exit_code = cause.exit_code

    def __str__(self):
        return self.message
