"""Utility functions and helpers for the QKD simulator."""

import logging
import logging.handlers
from typing import Optional, Sequence

import numpy as np

logger = logging.getLogger("qkdsim.utils")

# Fixed substream slots so every process derives identical generators
STREAMS = (
    "alice",
    "bob",
    "channel",
    "detector_d1",
    "detector_d2",
    "sampling",
    "power",
    "calibration",
)


def setup_logging(debug: bool = False, log_file: Optional[str] = None):
    """
    Setup logging configuration.

    Args:
        debug: Enable debug logging
        log_file: Optional log file path
    """
    log_level = logging.DEBUG if debug else logging.INFO

    root_logger = logging.getLogger("qkdsim")
    root_logger.setLevel(log_level)

    # Avoid stacking handlers when called twice in one process
    for handler in list(root_logger.handlers):
        root_logger.removeHandler(handler)

    console_handler = logging.StreamHandler()
    console_handler.setLevel(log_level)
    console_formatter = logging.Formatter(
        '%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S'
    )
    console_handler.setFormatter(console_formatter)
    root_logger.addHandler(console_handler)

    if log_file:
        file_handler = logging.handlers.RotatingFileHandler(
            log_file,
            maxBytes=10 * 1024 * 1024,  # 10MB
            backupCount=5
        )
        file_handler.setLevel(log_level)
        file_formatter = logging.Formatter(
            '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
        )
        file_handler.setFormatter(file_formatter)
        root_logger.addHandler(file_handler)


def make_streams(seed: int) -> dict:
    """
    Derive the named random substreams of one run.

    Each entity gets its own generator spawned from the master seed at a fixed
    slot, so Alice's process and Bob's process reproduce exactly the streams a
    single-process run would use.

    Args:
        seed: Master seed of the run

    Returns:
        Mapping of stream name to numpy Generator
    """
    root = np.random.SeedSequence(seed)
    children = root.spawn(len(STREAMS))
    return {name: np.random.default_rng(child) for name, child in zip(STREAMS, children)}


def stream(seed: int, name: str) -> np.random.Generator:
    """Single named substream of a run."""
    return make_streams(seed)[name]


def format_rate(rate_hz: float) -> str:
    """Format a rate in Hz with a sensible unit."""
    if rate_hz >= 1e6:
        return f"{rate_hz / 1e6:.3f} MHz"
    if rate_hz >= 1e3:
        return f"{rate_hz / 1e3:.3f} kHz"
    return f"{rate_hz:.2f} Hz"


def format_percent(fraction: float, digits: int = 2) -> str:
    """Format a fraction as a percentage string."""
    return f"{100.0 * fraction:.{digits}f} %"


def pack_bits(bits: Sequence[int]) -> bytes:
    """Pack a 0/1 sequence MSB-first into bytes."""
    return np.packbits(np.asarray(bits, dtype=np.uint8)).tobytes()


def unpack_bits(data: bytes, count: int) -> np.ndarray:
    """Inverse of pack_bits for the first ``count`` bits."""
    if count > 8 * len(data):
        raise ValueError(f"Need {count} bits, only {8 * len(data)} available")
    return np.unpackbits(np.frombuffer(data, dtype=np.uint8), count=count)
