# Settings, constants
"""
core.config

Central configuration for vipaint_bench.
Sets up base paths, environment-driven defaults, logging, and the numeric
constants shared across tools (initialisation table, presets, grids).
"""

import logging
import os
from pathlib import Path

from dotenv import load_dotenv
from rich.logging import RichHandler

# Base directories
BASE_DIR = Path(__file__).resolve().parents[1]
CONFIGS_DIR = BASE_DIR / "configs"
LOGS_DIR = BASE_DIR / "logs"

# Optional .env at the repository root
load_dotenv(BASE_DIR / ".env")

OUTPUT_ROOT_ENV = "VIPAINT_OUTPUT_ROOT"
DEFAULT_OUTPUT_ROOT = Path(os.environ.get(OUTPUT_ROOT_ENV, str(BASE_DIR / "runs")))
DEFAULT_THREADS = int(os.environ.get("VIPAINT_THREADS", "1"))

LOG_FILE = LOGS_DIR / "vipaint.log"
LOG_LEVEL = getattr(logging, os.environ.get("VIPAINT_LOG_LEVEL", "INFO").upper(), logging.INFO)

SCHEMA_VERSION = 1

# Schedules
DEFAULT_RHO = 7.0
VE_SIGMA_MIN = 0.002
VE_SIGMA_MAX = 50.0
VP_VAR_MIN = 1e-4
VP_VAR_MAX = 0.999
# Fraction of T used as the "t ~ 0" end of sampling grids.
T_MIN_FRACTION = 1e-3

# VIPaint
SNR_WINDOW = (0.2, 0.5)
DDIM_ETA = 0.2
LEARNING_RATES = {"mu": 0.1, "gamma": 0.1, "tau": 0.01}
LR_DECAY_FACTOR = 0.99
LR_DECAY_EVERY = 10
DEFAULT_MC_SAMPLES = 4
DEFAULT_DIFFUSION_GRID = 16
DEFAULT_PHASE2_STEPS = 100
GUIDANCE_GRID = (0.1, 0.5, 1.0, 2.0, 5.0, 10.0)

# Initialisation table: (a1, a2) scale the noise added to the lifted y.
INIT_SCALES = {"VE": (0.01, 0.01), "VP": (0.8, 1.0)}
VP_STD_SCALE = 0.7
GAMMA_INIT = {"VE": 0.5, "VP": 0.98}
VP_GAMMA_PRESETS = {"imagenet": 0.98, "lsun": 0.88}

# Baselines
BLENDED_STEPS = 1000
REPAINT_STEPS = 256
REPAINT_JUMP_LENGTH = 10
REPAINT_JUMP_COUNT = 10
DPS_STEPS = 1000
DPS_SCALE_VE = 5.0
REDDIFF_WEIGHT = 0.25
REDDIFF_WEIGHT_VE = 50.0
REDDIFF_LR = 0.1
REDDIFF_STEPS = 500

# Denoiser
MLP_HIDDEN = (128, 128, 128)
MLP_TIME_FEATURES = 8


def setup_logging() -> None:
    """Configure root logger for the application."""
    # Avoid duplicating handlers if called multiple times
    if logging.getLogger().handlers:
        return

    LOGS_DIR.mkdir(parents=True, exist_ok=True)
    logging.basicConfig(
        filename=str(LOG_FILE),
        level=LOG_LEVEL,
        format="%(asctime)s %(levelname)s [%(name)s] %(message)s",
    )

    # Also log to console
    console_handler = RichHandler(show_path=False, rich_tracebacks=True)
    console_handler.setLevel(LOG_LEVEL)
    console_handler.setFormatter(logging.Formatter("[%(name)s] %(message)s"))
    logging.getLogger().addHandler(console_handler)
