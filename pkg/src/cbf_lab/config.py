# Configuration settings for cbf-lab
import os
import pathlib

# --- Numerical Tolerances ---
RELATIVE_DEGREE_TOL = 1e-9   # relative to ||c|| ||A||^(r-1) ||B||
STABILIZABILITY_TOL = 1e-9   # PBH singular-value threshold, relative to ||[A - lambda I, B]||
HURWITZ_TOL = 1e-9           # max Re(eig) < -HURWITZ_TOL * ||M||
THETA_SQ_TOL = 1e-12         # floor for c^T A^(r-1) B G^-1 B^T (A^T)^(r-1) c, relative to its scale
XI_TOL = 1e-8                # |xi| below this (relative) is the degenerate case
EIG_MATCH_TOL = 1e-6         # multiset matching threshold, scaled by (1 + ||A_tilde||)
POSITIVE_REAL_TOL = 1e-9     # Re(lambda) > tol ||A_tilde|| and |Im(lambda)| <= tol (1 + |lambda|)
ZERO_RESIDUAL_TOL = 1e-6     # normalized residual of c^T (lambda I - A0)^-1 b_g for residual eigenvalues
QP_FEASIBILITY_TOL = 1e-9    # HOCBF inequality slack, relative to its scale
RAY_CERTIFICATE_TOL = 1e-6   # divergence ray: |c^T phi_{r-1}(A) v| below it, |v2 . v| above it (both normalized)

# --- Filter Defaults ---
DEFAULT_ALPHA = 1.0          # class-K slope used when a problem omits "alphas"

# --- LMI Design ---
LMI_EPS_FACTOR = 1e-6        # eps = LMI_EPS_FACTOR * ||A||
LMI_MAX_ITER = 5000
LMI_SOLVER = "CLARABEL"
LMI_Q_BOUND = 1e4            # I <= Q <= LMI_Q_BOUND * I
LMI_Y_BOUND = 1e6            # ||Y||_F <= LMI_Y_BOUND
LMI_CONDITION_LIMIT = 1e10   # cond(Q) above this raises IllConditioned
LMI_IDENTITY_TOL = 1e-10      # relative gap allowed in A_tilde(K) = A_hat - B_hat K

# --- Simulation ---
SIM_STEP = 1e-3
SIM_HORIZON = 20.0
SIM_MAX_STARTS = 400          # cap on the number of grid starts in one simulate run
SIM_CHUNK_BYTES = 2**28       # state buffer budget per simulate_batch chunk
DIVERGENCE_FACTOR = 1e6      # ||x|| > DIVERGENCE_FACTOR (1 + ||x0||) declares Diverged
CONVERGENCE_FACTOR = 1e-8    # ||x|| < CONVERGENCE_FACTOR (1 + ||x0||) declares Converged
CROSSING_BISECTIONS = 30     # bisection iterations when locating eta sign changes
DECAY_TAIL_FRACTION = 0.5    # fraction of samples used by the decay fit
DECAY_FLOOR = 1e-12          # samples with ||x|| below this are ignored by the decay fit

# --- Tracking Scenario (roll-yaw aircraft) ---
TRACKING_KAPPA = 0.01        # integrator regularization
TRACKING_HORIZON = 25.0
TRACKING_STEP = 1e-3
ROLL_RATE_LIMIT = 0.4
# Piecewise-constant doublet: (start time, command value)
DOUBLET_SCHEDULE = [(0.0, 0.0), (1.0, 0.5), (8.0, -0.5), (15.0, 0.0)]

# --- Reproduction ---
FIG1_GRID_SIZE = 10          # 10 x 10 starts over [-3, 3]^2
FIG1_GRID_HALF_WIDTH = 3.0
FIG1_HORIZON = 30.0
FIG1_TARGET_NORM = 1e-6
FIG1_RAY_SCALE = 0.01
FIG1_RAY_TARGET_NORM = 1e4
FIG1_RAY_HORIZON = 30.0
FIG1_RAY_CHAIN_TOL = 1e-4
FIG2_HORIZON = 40.0
FIG2_STEP = 1e-3
FIG2_CUBE_VERTICES = (1.0, 3.0)  # starts at the vertices of the cubes [-s, s]^3
FIG2_SETTLE_NORM = 1e-3      # a non-diverging run must end below this norm
FORWARD_INVARIANCE_TOL = 1e-4
CSV_DECIMATION = 10          # keep every k-th sample in trajectory CSVs

# --- File Paths ---
PROJECT_ROOT = pathlib.Path(__file__).resolve().parents[2]
DATA_DIR = PROJECT_ROOT / "data"
DEFAULT_FIXTURES_DIR = DATA_DIR / "fixtures"
OUTPUT_DIR = "output"  # relative to the working directory, overridden by --out-dir
FIXTURES_ENV_VAR = "CBF_LAB_FIXTURES"


def fixtures_dir() -> pathlib.Path:
    """Fixture directory, honoring the CBF_LAB_FIXTURES override."""
    override = os.environ.get(FIXTURES_ENV_VAR)
    return pathlib.Path(override) if override else DEFAULT_FIXTURES_DIR


# Logging
LOG_LEVEL = "INFO"  # e.g., DEBUG, INFO, WARNING, ERROR
LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
