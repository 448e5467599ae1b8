"""
Application-wide constants for CCC Fiducial.
"""

from pathlib import Path

# =============================================================================
# APPLICATION INFO
# =============================================================================

APP_NAME = "CCC Fiducial"
APP_VERSION = "1.0.0"
APP_DESCRIPTION = "Fiducial confidence intervals for the longitudinal concordance correlation coefficient"

# =============================================================================
# DIRECTORY PATHS
# =============================================================================

# Base directory (where app.py is located)
BASE_DIR = Path(__file__).parent.parent

SCENARIOS_DIR = BASE_DIR / "config" / "scenarios"

# =============================================================================
# INTERVAL DEFAULTS
# =============================================================================

DEFAULT_ALPHA = 0.05
DEFAULT_N_DRAWS = 10_000
DEFAULT_N_BOOT = 2000
DEFAULT_N_MC = 100_000           # Monte Carlo CCC inside pivot evaluation
DEFAULT_N_MC_ORACLE = 1_000_000
MIN_N_MC = 10_000
MIN_HDR_SAMPLES = 20

# =============================================================================
# ESTIMATION SETTINGS
# =============================================================================

REML_GTOL = 1e-6
REML_MAX_ITER = 500
REML_RELAXED_GTOL = 1e-4         # accepted (with a warning) on line-search precision loss
LINEARIZATION_TOL = 1e-6
LINEARIZATION_MAX_ITER = 500
MAX_STEP_HALVINGS = 30
POISSON_START_OFFSET = 0.5       # y + offset keeps log(y) finite for zero counts

# =============================================================================
# FIDUCIAL SOLVER SETTINGS
# =============================================================================

NEWTON_GTOL = 1e-7
NEWTON_RELAXED_GTOL = 1e-5      # accepted once scipy reports step convergence
NEWTON_XTOL = 1e-10
NEWTON_MAX_ITER = 200
FD_GRADIENT_STEP = 1e-6
FD_HESSIAN_STEP = 1e-4
LOG_CHOLESKY_FLOOR = 1e-8        # diagonal floor when converting a singular estimate
MAX_DRAW_RETRIES = 3
MAX_DRAW_FAILURE_RATE = 0.05

# =============================================================================
# SIMULATION SETTINGS
# =============================================================================

DEFAULT_REPLICATIONS = 200
DEFAULT_DRAWS_PER_INTERVAL = 2000
MIN_REPLICATIONS = 100
MAX_REPLICATION_FAILURE_RATE = 0.10
MAX_BOOTSTRAP_FAILURE_RATE = 0.10
MAX_SUBJECT_RESAMPLES = 100      # Gamma linear predictor rejections per subject
DEFAULT_ETA_FLOOR = 0.25
ORACLE_JACKKNIFE_GROUPS = 50
MIN_ORACLE_SUBJECTS = 100_000
OVERFLOW_EXPONENT = 700.0

# =============================================================================
# CLI
# =============================================================================

CSV_COLUMNS = ["subject", "time", "replicate", "rater", "value"]

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2
