"""Configuration settings for the barrier homogenization toolkit."""

# Directory structure
DATA_DIR = "data"
RUNS_DIR = f"{DATA_DIR}/runs"

# Solver defaults
SOLVER_TOL = 1e-10
MAX_ITER = 20000
DIRECT_SOLVE_CAP = 20000   # above this dimension non-symmetric systems go to BiCGSTAB
WORKERS = 1                # concurrent epsilon cases in the micro stage

# Input validation
VALIDATION_GRID = 32
COMPAT_TOL = 1e-8
PERIODICITY_TOL = 1e-10
ALPHA_QUAD_N = 64

# Mesh limits
MIN_RESOLUTION = 4
MICRO_SIZE_CAP = 512       # max K * N along one side of the micro mesh
DEGENERATE_AREA = 1e-14

# Sign conventions
REMARK_CONSISTENT = "remark-consistent"
PAPER_LITERAL = "paper-literal"
SIGN_CONVENTIONS = (REMARK_CONSISTENT, PAPER_LITERAL)

# Coupling coefficient d: one Richardson step against the half-resolution cell
RICHARDSON = "richardson"
NO_EXTRAPOLATION = "none"
D_EXTRAPOLATIONS = (RICHARDSON, NO_EXTRAPOLATION)

# Cell-problem flux signs s_i on the phase-i trace, normal outward from Y1
GAMMA_SIGNS = {
    REMARK_CONSISTENT: (-1.0, 1.0),
    PAPER_LITERAL: (-1.0, -1.0),
}

# Relative L2 error floor for the denominator
ERROR_FLOOR = 1e-14

# Acceptance thresholds
APRIORI_BAND = 2.0         # max/min V-norm-to-source ratio across the sweep

# Coefficient defaults (text expressions)
DEFAULT_COEFFICIENTS = {
    "A1_11": "1", "A1_12": "0", "A1_21": "0", "A1_22": "1",
    "A2_11": "1", "A2_12": "0", "A2_21": "0", "A2_22": "1",
    "a1": "1",
    "a2": "1",
    "alpha": "0",
    "f1": "0",
    "f2": "0",
}
