# config.py
import os

from dotenv import load_dotenv

load_dotenv()

# Base data root (single source of truth for reports written without --out)
if os.name == "nt":
    DEFAULT_DATA_ROOT = os.path.join(os.path.expanduser("~"), "multidiv_data")
else:
    DEFAULT_DATA_ROOT = "/tmp/multidiv"

DATA_ROOT = os.path.abspath(os.getenv("MULTIDIV_DATA_ROOT", DEFAULT_DATA_ROOT))
REPORT_DIR = os.path.join(DATA_ROOT, "reports")

BASE_DIR = os.path.dirname(os.path.abspath(__file__))
CONFIG_DIR = os.path.join(BASE_DIR, "configs")
DEFAULT_CONFIG = os.path.join(CONFIG_DIR, "default.json")

DEFAULT_SEED = int(os.getenv("MULTIDIV_SEED", "20240607"))
MAX_WORKERS = int(os.getenv("MULTIDIV_MAX_WORKERS", str(min(8, os.cpu_count() or 1))))
LOG_LEVEL = os.getenv("MULTIDIV_LOG_LEVEL", "INFO").upper()

# ---------- Tensor algebra ----------
MAX_DIMENSION = 16

# ---------- Tolerances ----------
ALGEBRA_TOL = 1e-12
IDENTITY_TOL = 1e-10
AGREEMENT_TOL = 1e-8
LEIBNIZ_TOL = 1e-9
WEAK_TOL = 1e-6
SURFACE_TOL = 1e-4
RESTRICTION_TOL = 1e-6
INVERSE_TOL = 1e-8
TANGENCY_TOL = 1e-8
CLOSEDNESS_TOL = 1e-8

# ---------- Sampling ----------
DEFAULT_POINTS = 50
DENSITY_CHECK_GRID = 9
BOUNDARY_CHECK_GRID = 7

# ---------- Flows ----------
FLOW_STEP = float(os.getenv("MULTIDIV_FLOW_STEP", "1e-3"))
FLOW_MAX_STEPS = 200_000
# central differences of flow-defined densities (error ~ step^2)
FD_STEP = 1e-5
NEWTON_TOL = 1e-12
NEWTON_MAX_ITER = 50
