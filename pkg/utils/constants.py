from pathlib import Path

APP_NAME = "QuadSCP"
ENV_PREFIX = "QUADSCP_"

DATA_DIR = Path(__file__).resolve().parent.parent / "data"
SCENARIO_DIR = DATA_DIR / "scenarios"
DEFAULT_SCENARIO = SCENARIO_DIR / "two_agent.json"

GRAVITY = 9.81
VERTICAL = (0.0, 0.0, 1.0)

# Per-agent block layout inside the stacked state.
AGENT_STATE_DIM = 9
AGENT_INPUT_DIM = 3
POSITION_SLICE = slice(0, 3)
VELOCITY_SLICE = slice(3, 6)
THRUST_SLICE = slice(6, 9)
# g^i holds 10 fixed rows (box x6, speed, thrust max, thrust min, tilt) before the obstacle rows.
AGENT_FIXED_CONSTRAINTS = 10

# Algorithm defaults
DEFAULT_N = 8
DEFAULT_BETA = 20.0
DEFAULT_RHO = 0.1
DEFAULT_GAMMA = 1e-6
DEFAULT_MAX_ITERATIONS = 200
DEFAULT_EPS_TOL = 1e-6
DEFAULT_BUDGET_SECONDS = 120.0

DEFAULT_RTOL = 1e-9
DEFAULT_ATOL = 1e-9
DEFAULT_MAX_STEPS = 100_000
DEFAULT_INITIAL_STEP = 0.05
# Sigma-point propagation in the filter tolerates a looser integration.
FILTER_RTOL = 1e-6
FILTER_ATOL = 1e-6

QP_ABS_TOL = 1e-6
QP_REL_TOL = 1e-6
QP_MAX_ITER = 20_000

DEFAULT_NUM_PARTICLES = 30
DEFAULT_INITIAL_COVARIANCE = 1e-2
DEFAULT_SAMPLING_ALPHA = 5e-3
DEFAULT_KAPPA = 9.0
DEFAULT_UT_THETA = 0.1
DEFAULT_EPSILON = 0.5
DEFAULT_NU = 1.0

SAMPLES_PER_INTERVAL = 100
QUANTILES = (0.25, 0.5, 0.75)

TRAJECTORY_COLUMNS = [
    "time_s",
    "agent_id",
    "rx",
    "ry",
    "rz",
    "vx",
    "vy",
    "vz",
    "Tx",
    "Ty",
    "Tz",
]

AUDIT_COLUMNS = [
    "time_s",
    "agent_id",
    "speed",
    "thrust_norm",
    "tilt_rad",
]

PAIR_COLUMNS = [
    "time_s",
    "agent_i",
    "agent_j",
    "distance",
]

CONVERGENCE_COLUMNS = [
    "iteration",
    "objective",
    "violation",
    "displacement",
    "slack_mass",
    "qp_status",
    "qp_iterations",
]

TRIAL_COLUMNS = [
    "trial",
    "seed",
    "mode",
    "iteration",
    "objective",
    "violation",
    "slack_mass",
]

SOLVE_TIMING_COLUMNS = [
    "iteration",
    "time_s",
    "warmstart_time_s",
]

TIMING_COLUMNS = [
    "trial",
    "seed",
    "mode",
    "iteration",
    "time_s",
    "warmstart_time_s",
]

ITERATION_QUANTILE_COLUMNS = [
    "mode",
    "iteration",
    "objective_lower",
    "objective_median",
    "objective_upper",
    "violation_lower",
    "violation_median",
    "violation_upper",
]

TIME_QUANTILE_COLUMNS = [
    "mode",
    "time_s",
    "objective_lower",
    "objective_median",
    "objective_upper",
    "violation_lower",
    "violation_median",
    "violation_upper",
]

FILTER_DIAGNOSTIC_COLUMNS = [
    "step",
    "ess",
    "weight_sum",
    "resampled",
]

STATUS_PHASES = {
    "warmstart": "Generating warm start",
    "scp": "Prox-linear iterations",
    "benchmark": "Monte Carlo trials",
}
