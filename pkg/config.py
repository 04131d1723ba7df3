"""Configuration for the plug&play QKD link simulator."""

import os
from pathlib import Path

from dotenv import load_dotenv

# Pick up a local .env before reading the environment
load_dotenv()

# Project root
PROJECT_ROOT = Path(__file__).parent

# Get from environment or use defaults
DEBUG = os.getenv("QKDSIM_DEBUG", "false").lower() == "true"
BIND = os.getenv("QKDSIM_BIND", "127.0.0.1:7384")
DEFAULT_SEED = int(os.getenv("QKDSIM_SEED", "20020101"))

# Logging
LOG_LEVEL = "DEBUG" if DEBUG else "INFO"
LOG_DIR = Path(os.getenv("QKDSIM_LOG_DIR", str(PROJECT_ROOT / "logs")))

# Bundled field-trial links
SCENARIO_DIR = PROJECT_ROOT / "scenarios"

# Source and clock
DEFAULT_NU_HZ = 5e6          # "480 pulses at a frequency of 5 MHz"
DEFAULT_MU = 0.2             # the published rates were recorded at mu = 0.2
DEFAULT_MU_VISIBILITY = 2.0  # "a couple of photons per pulse"
DEFAULT_MU_CALIBRATION = 1000.0
DEFAULT_Q = 0.5              # BB84 sifting factor

# Bob
DEFAULT_T_BOB = 0.6
DEFAULT_ETA_BOB = 0.1
DEFAULT_P_DARK = 1e-5        # per gate, per detector
DEFAULT_DEAD_TIME_S = 4e-6
MAX_DEAD_TIME_S = 12e-6
DEFAULT_GATE_WIDTH_S = 2.5e-9

# Afterpulse profile solved from the two anchors (4 % without dead time,
# 1.5 % with 4 us, p_det = 0.15 %, nu = 5 MHz); see tools.rate_model.
DEFAULT_AFTERPULSE_AMPLITUDE = 3.8286679549e-3
DEFAULT_AFTERPULSE_TIME_CONST_S = 4.0781817913e-6

# Fibre
DEFAULT_LOSS_DB_PER_KM = 0.25
DEFAULT_ALPHA_PER_K = 1e-5
DEFAULT_GROUP_VELOCITY = 2.0e8   # m/s, n ~ 1.5
DEFAULT_STORAGE_KM = 10.0
TRAIN_SAFETY_FACTOR = 0.98
PAPER_TRAIN_SIZE = 480

# Eve
DEFAULT_EVE_BASE_INFO = 0.03
DEFAULT_EVE_ANCHORS = ((5.0, 0.06), (10.0, 0.14), (20.0, 0.40))
DEFAULT_EVE_ANCHOR_MU = 0.2

# Protocol
DEFAULT_SAMPLE_FRACTION = 0.1
QBER_ABORT_THRESHOLD = 0.15
COINCIDENCE_ALARM_SIGMA = 5.0
POWER_BOUNDS_SIGMA = 6.0
RECALIBRATION_PERIOD_S = 600.0
MIN_STATISTICAL_PULSES = 10_000

# Classical link
WIRE_MAGIC = b"\x51\x4b"
WIRE_VERSION = 1
CONNECT_TIMEOUT = 10.0  # seconds
SESSION_TIMEOUT = 300.0  # seconds

# Messages
WELCOME_MESSAGE = """
plug&play QKD link simulator
  analytic | simulate | calibrate | visibility | alice | bob | sweep | reproduce-tables
"""


def parse_bind(value: str = BIND) -> tuple:
    """Split a 'host:port' endpoint string."""
    host, _, port = value.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"Invalid endpoint '{value}', expected host:port")
    return host, int(port)
