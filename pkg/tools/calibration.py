"""
Initialization measurements: line-length scan, dark counts, visibility and
the honest incoming-power readings the monitor is calibrated on.
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

import config
from errors import CalibrationError
from models.params import DetectorSpec, SystemParams
from tools.photonics import make_detectors, train_arrivals
from tools.rate_model import transmission_from_loss, visibility_stats

logger = logging.getLogger("qkdsim.calibration")

# (Alice quarter turns, Bob quarter turns); all four compatible choices
COMPATIBLE_SETTINGS: Tuple[Tuple[int, int], ...] = ((0, 0), (2, 0), (1, 1), (3, 1))

SCAN_WINDOW_KM = 5.0
COARSE_SHOTS = 10
FINE_STEPS_PER_GATE = 25
FINE_SHOTS = 50
PEAK_MIN_COUNTS = 5


@dataclass(frozen=True)
class SimulatedLine:
    """
    The installed link as seen by the calibration scan.

    The true length is only ever used to decide whether a gate overlaps the
    returning bright pulse.
    """

    true_length_km: float
    storage_len_km: float = config.DEFAULT_STORAGE_KM
    group_velocity: float = config.DEFAULT_GROUP_VELOCITY
    mu_returning: float = config.DEFAULT_MU_CALIBRATION
    t_bob: float = config.DEFAULT_T_BOB
    eta_bob: float = config.DEFAULT_ETA_BOB
    p_dark: float = config.DEFAULT_P_DARK

    def round_trip_s(self, length_km: float) -> float:
        return 2.0 * (length_km + self.storage_len_km) * 1e3 / self.group_velocity

    def length_from_round_trip(self, round_trip_s: float) -> float:
        return self.group_velocity * round_trip_s / 2.0 / 1e3 - self.storage_len_km

    def count(self, gate_starts: np.ndarray, gate_width_s: float, shots: int,
              rng: np.random.Generator) -> np.ndarray:
        """Clicks per gate position over repeated bright pulses."""
        arrival = self.round_trip_s(self.true_length_km)
        hit = (gate_starts <= arrival) & (arrival < gate_starts + gate_width_s)
        p_photon = 1.0 - math.exp(-self.mu_returning * self.t_bob * self.eta_bob)
        p_click = np.where(hit, 1.0 - (1.0 - p_photon) * (1.0 - self.p_dark), self.p_dark)
        return rng.binomial(shots, p_click)


@dataclass(frozen=True)
class LineCalibration:
    measured_length_km: float
    gate_offset_s: float
    peak_counts: int


def calibrate_line_length(line: SimulatedLine, initial_guess_km: float,
                          rng: np.random.Generator,
                          gate_width_s: float = config.DEFAULT_GATE_WIDTH_S) -> LineCalibration:
    """
    Find the round-trip delay of the bright pulses by scanning the gate.

    A coarse scan steps the gate by its own width over the +-5 km window
    around the operator's guess; a fine scan then steps by 1/25 of the width
    around the coarse peak and takes the upper edge of the plateau.

    Raises:
        CalibrationError: No reflected pulse in the window
    """
    lo_km = max(initial_guess_km - SCAN_WINDOW_KM, 0.0)
    hi_km = initial_guess_km + SCAN_WINDOW_KM
    # One spare gate on each side so arrivals on the window edge are seen
    first = line.round_trip_s(lo_km) - gate_width_s
    n_gates = int(math.ceil((line.round_trip_s(hi_km) - line.round_trip_s(lo_km)) / gate_width_s)) + 3
    coarse = first + gate_width_s * np.arange(n_gates)
    counts = line.count(coarse, gate_width_s, COARSE_SHOTS, rng)
    peak = int(np.argmax(counts))
    logger.debug(f"Coarse scan: {len(coarse)} positions, peak {counts[peak]} counts")
    if counts[peak] < PEAK_MIN_COUNTS:
        raise CalibrationError(
            f"No reflected pulse within {SCAN_WINDOW_KM} km of {initial_guess_km} km"
        )

    step = gate_width_s / FINE_STEPS_PER_GATE
    fine = coarse[peak] - gate_width_s + step * np.arange(2 * FINE_STEPS_PER_GATE + 1)
    fine_counts = line.count(fine, gate_width_s, FINE_SHOTS, rng)
    plateau = np.flatnonzero(fine_counts >= fine_counts.max() / 2.0)
    arrival = float(fine[plateau[-1]])
    measured = line.length_from_round_trip(arrival)
    logger.info(f"Line calibrated: {measured:.4f} km, gate offset {arrival * 1e6:.4f} us")
    return LineCalibration(
        measured_length_km=measured,
        gate_offset_s=arrival,
        peak_counts=int(fine_counts.max()),
    )


def measure_dark_counts(detector: DetectorSpec, n_gates: int,
                        rng: np.random.Generator) -> Tuple[float, float]:
    """Per-detector dark count probability with the source switched off."""
    if n_gates <= 0:
        raise ValueError("n_gates must be positive")
    detectors = make_detectors(detector, efficiency=1.0, dead_time_s=0.0)
    no_light = np.zeros(n_gates, dtype=np.int64)
    estimates = tuple(
        float(np.count_nonzero(d.fire_memoryless(no_light, rng))) / n_gates for d in detectors
    )
    logger.debug(f"Dark counts: D1={estimates[0]:.3e}, D2={estimates[1]:.3e}")
    return estimates


@dataclass(frozen=True)
class SettingVisibility:
    alice_quarter: int
    bob_quarter: int
    right_clicks: int
    wrong_clicks: int
    visibility: float
    stderr: float


@dataclass(frozen=True)
class VisibilityResult:
    mean: float
    stderr: float
    settings: Tuple[SettingVisibility, ...]

    @property
    def qber_opt(self) -> float:
        return (1.0 - self.mean) / 2.0


def _photon_rate(clicks: int, gates: int, p_dark: float) -> Tuple[float, float]:
    # P(no click) = (1 - p_dark) exp(-r); returns r and its counting variance
    frac = clicks / gates
    if frac >= 1.0:
        raise CalibrationError("Detector saturated during visibility run; lower mu")
    rate = max(-math.log1p(-frac) + math.log1p(-p_dark), 0.0)
    return rate, frac / ((1.0 - frac) * gates)


def measure_visibility(params: SystemParams, detector: DetectorSpec, n_pulses: int,
                       rng: np.random.Generator,
                       settings: Sequence[Tuple[int, int]] = COMPATIBLE_SETTINGS,
                       mu: float = config.DEFAULT_MU_VISIBILITY,
                       dark_subtraction: bool = True) -> VisibilityResult:
    """
    Fringe visibility from strong pulses sent with compatible phases.

    Dead time and afterpulsing are off for this measurement. Each setting
    gets an equal share of the pulses; rates are dark-subtracted with a
    separate dark run of the same length and averaged over the settings.

    Args:
        params: Link whose visibility is configured through qber_opt
        detector: Dark count model
        n_pulses: Total gates over all settings
        rng: Calibration generator
        settings: Compatible (Alice, Bob) phase pairs in quarter turns
        mu: Photons per pulse for this run

    Returns:
        VisibilityResult with the per-setting table
    """
    if not settings:
        raise ValueError("At least one phase setting is required")
    for alice_q, bob_q in settings:
        if (alice_q - bob_q) % 2:
            raise ValueError(f"Setting ({alice_q}, {bob_q}) is not compatible")
    per_setting = n_pulses // len(settings)
    if per_setting <= 0:
        raise ValueError("n_pulses too small for the number of settings")

    darks = measure_dark_counts(detector, per_setting, rng) if dark_subtraction else (0.0, 0.0)
    transmission = transmission_from_loss(params.fiber.loss_db) * params.t_bob
    d1, d2 = make_detectors(detector, params.eta_bob, dead_time_s=0.0)

    rows: List[SettingVisibility] = []
    for alice_q, bob_q in settings:
        delta = np.full(per_setting, (alice_q - bob_q) % 4, dtype=np.int64)
        n_d1, n_d2 = train_arrivals(delta, mu, transmission, params.visibility, rng)
        c1 = int(np.count_nonzero(d1.fire_memoryless(n_d1, rng)))
        c2 = int(np.count_nonzero(d2.fire_memoryless(n_d2, rng)))
        # delta 0 routes to D1, delta pi to D2
        if delta[0] == 0:
            (right, p_right), (wrong, p_wrong) = (c1, darks[0]), (c2, darks[1])
        else:
            (right, p_right), (wrong, p_wrong) = (c2, darks[1]), (c1, darks[0])
        if right == 0 and wrong == 0:
            raise CalibrationError(f"No counts for setting ({alice_q}, {bob_q})")

        r_right, var_right = _photon_rate(right, per_setting, p_right)
        r_wrong, var_wrong = _photon_rate(wrong, per_setting, p_wrong)
        if dark_subtraction:
            var_right += p_right / ((1.0 - p_right) * per_setting)
            var_wrong += p_wrong / ((1.0 - p_wrong) * per_setting)
        if r_right + r_wrong <= 0:
            raise CalibrationError(f"Dark-subtracted rates vanish for setting ({alice_q}, {bob_q})")
        visibility, _ = visibility_stats(r_right, r_wrong)
        total_sq = (r_right + r_wrong) ** 2
        stderr = math.sqrt(
            (2.0 * r_wrong / total_sq) ** 2 * var_right + (2.0 * r_right / total_sq) ** 2 * var_wrong
        )
        rows.append(SettingVisibility(alice_q, bob_q, right, wrong, visibility, stderr))

    values = np.array([row.visibility for row in rows])
    counting = math.sqrt(sum(row.stderr ** 2 for row in rows)) / len(rows)
    spread = float(values.std(ddof=1)) / math.sqrt(len(rows)) if len(rows) > 1 else 0.0
    result = VisibilityResult(
        mean=float(values.mean()),
        stderr=math.sqrt(counting ** 2 + spread ** 2),
        settings=tuple(rows),
    )
    logger.info(f"Visibility {result.mean:.5f} +- {result.stderr:.5f} over {len(rows)} settings")
    return result


def power_samples(n: int, rng: np.random.Generator, trojan_power: float = 0.0,
                  noise: float = 0.01) -> np.ndarray:
    """Incoming power at Alice in units of the nominal bright pulse."""
    if n <= 0:
        raise ValueError("n must be positive")
    return 1.0 + trojan_power + noise * rng.standard_normal(n)
