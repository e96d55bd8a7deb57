"""
Configuration for the stochastic wave simulator
"""

import os
from pathlib import Path

from dotenv import load_dotenv

# Paths
PROJECT_ROOT = Path(__file__).resolve().parent.parent.parent

# Load environment variables from .env file in project root
load_dotenv(PROJECT_ROOT / ".env")

OUTPUT_DIR = Path(os.getenv("SWAVE_OUTPUT_DIR", PROJECT_ROOT / "output"))
LOG_DIR = PROJECT_ROOT / "logs"
LOG_LEVEL = os.getenv("SWAVE_LOG_LEVEL", "INFO")

# Written into every output header
ARTIFACT_VERSION = "1.0.0"

# Implicit solver settings
PICARD_TOL = 1e-10  # relative M-weighted change between iterates
PICARD_MAX = 50
RESIDUAL_FACTOR = 10.0  # accepted steps satisfy residual <= RESIDUAL_FACTOR * PICARD_TOL

# Monte Carlo settings
DEFAULT_SAMPLES = 100
DEFAULT_SEED = 20230703
DEFAULT_WORKERS = 1

# Noise settings
SUBMESH_QUADRATURE = "affine"  # "affine" or "right"
REFERENCE_REFINE = 4  # sub-mesh refinement for the reference increment in noise-check
MAX_SUBSTEPS = 2**40  # total streamed sub-increments per sample

# Experiment settings
DEFAULT_MESH = 256
DEFAULT_MESHES = (32, 64, 128)  # spatial-check, successive doublings
DEFAULT_LEVELS = (4, 8, 16, 32)
DEFAULT_REFERENCE = 256
REFERENCE_MIN_FACTOR = 4  # N_ref >= 4 * N_L
STABILITY_GROWTH = 0.25  # allowed relative deviation of mean max-energy from the finest level
ERROR_NORMS = ("rms-max", "max-rms")

# Default problem
DEFAULT_PROBLEM = "test2"
DEFAULT_MODE = 2  # u0 = sin(2 pi x)
