SNAPSHOT_MAGIC = "AALAB1"

# Scheme tolerances
NEGATIVITY_TOLERANCE = 1e-12
DT_FLOOR = 1e-14
DT_UNDERFLOW = 1e-13
MAX_CONSECUTIVE_REJECTIONS = 5
FISHER_DENSITY_FLOOR = 1e-14
ODE_NEGATIVITY_TOLERANCE = 1e-10
EQUILIBRIUM_RESIDUAL_TOLERANCE = 1e-12

# Configuration limits
MAX_TOTAL_CELLS = 2_000_000
MAX_SWEEP_RUNS = 10_000
MAX_SWEEP_AXES = 3

# Diagnostic columns
FIELD_T = "t"
FIELD_L1_U = "l1_u"
FIELD_L1_V = "l1_v"
FIELD_L1_W = "l1_w"
FIELD_L2_U = "l2_u"
FIELD_L2_V = "l2_v"
FIELD_L2_W = "l2_w"
FIELD_LINF_U = "linf_u"
FIELD_LINF_V = "linf_v"
FIELD_LINF_W = "linf_w"
FIELD_GRAD_W_SQ = "grad_w_sq"
FIELD_LAP_W_SQ = "lap_w_sq"
FIELD_ENTROPY_U = "entropy_u"
FIELD_ENTROPY_V = "entropy_v"
FIELD_FISHER_U = "fisher_u"
FIELD_FISHER_V = "fisher_v"
FIELD_ENERGY_Y = "energy_y"
FIELD_DT = "dt"
FIELD_REJECTED_STEPS = "rejected_steps"

# Config sections
SECTION_MODEL = "model"
SECTION_DOMAIN = "domain"
SECTION_RUN = "run"
SECTION_INITIAL = "initial"
SECTION_SWEEP = "sweep"
SECTION_EPSILON_STUDY = "epsilon_study"

ENV_THREADS = "AA_LAB_THREADS"
