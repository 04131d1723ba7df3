"""Pulse-train scheduling sized to Alice's storage line."""

import logging
import math
from dataclasses import dataclass

import numpy as np

import config
from tools.rate_model import eta_duty

logger = logging.getLogger("qkdsim.schedule")

DUTY_TOLERANCE = 0.02


@dataclass(frozen=True)
class TrainSchedule:
    """Timing of the pulse trains of one run."""

    train_size: int
    pulse_period_s: float
    train_period_s: float
    gate_offset_s: float
    n_trains: int
    link_len_km: float
    storage_len_km: float
    group_velocity: float
    paper_compat: bool = False

    @property
    def active_s(self) -> float:
        return self.train_size * self.pulse_period_s

    @property
    def storage_round_trip_s(self) -> float:
        return 2.0 * self.storage_len_km * 1e3 / self.group_velocity

    @property
    def duty_ratio(self) -> float:
        return self.active_s / self.train_period_s

    @property
    def no_crossing(self) -> bool:
        """Returning weak pulses never meet an outgoing bright train."""
        return self.active_s <= self.storage_round_trip_s * (1 + 1e-12)

    @property
    def elapsed_s(self) -> float:
        return self.n_trains * self.train_period_s

    def with_trains(self, n_trains: int) -> "TrainSchedule":
        return TrainSchedule(**{**self.__dict__, "n_trains": n_trains})

    def with_gate_offset(self, gate_offset_s: float) -> "TrainSchedule":
        return TrainSchedule(**{**self.__dict__, "gate_offset_s": gate_offset_s})

    def pulses_in_train(self, train_index: int, n_pulses_total: int) -> int:
        """Pulses actually sent in a given train (the last one may be partial)."""
        remaining = n_pulses_total - train_index * self.train_size
        return max(0, min(self.train_size, remaining))

    def gate_times(self, train_index: int, n: int) -> np.ndarray:
        """Bob's gate times for the first n pulses of a train."""
        start = train_index * self.train_period_s + self.gate_offset_s
        return start + np.arange(n) * self.pulse_period_s


def build_schedule(l_ab_km: float, l_d_km: float, nu_hz: float,
                   group_velocity: float = config.DEFAULT_GROUP_VELOCITY,
                   n_pulses_total: int = 0, gate_offset_s: float = 0.0,
                   paper_compat: bool = False) -> TrainSchedule:
    """
    Size the pulse trains to the storage line.

    The train fills 98 % of the storage-line round trip; the train period is the
    round trip over link plus storage line. With paper_compat the train holds
    the 480 pulses of the prototype.
    """
    if l_ab_km <= 0 or l_d_km <= 0:
        raise ValueError("Link and storage line lengths must be positive")
    if nu_hz <= 0:
        raise ValueError("Repetition frequency must be positive")

    storage_rt = 2.0 * l_d_km * 1e3 / group_velocity
    train_size = math.floor(config.TRAIN_SAFETY_FACTOR * storage_rt * nu_hz + 1e-9)
    if paper_compat:
        train_size = min(train_size, config.PAPER_TRAIN_SIZE)
    if train_size < 1:
        raise ValueError(
            f"Storage line of {l_d_km} km is too short for {nu_hz:g} Hz trains"
        )

    schedule = TrainSchedule(
        train_size=train_size,
        pulse_period_s=1.0 / nu_hz,
        train_period_s=2.0 * (l_ab_km + l_d_km) * 1e3 / group_velocity,
        gate_offset_s=gate_offset_s,
        n_trains=math.ceil(n_pulses_total / train_size) if n_pulses_total > 0 else 0,
        link_len_km=l_ab_km,
        storage_len_km=l_d_km,
        group_velocity=group_velocity,
        paper_compat=paper_compat,
    )

    expected = eta_duty(l_d_km, l_ab_km)
    if abs(schedule.duty_ratio - expected) > DUTY_TOLERANCE * expected + 1e-12:
        logger.warning(
            f"Duty ratio {schedule.duty_ratio:.4f} deviates from l_D/(l_AB+l_D)={expected:.4f}"
        )
    logger.debug(
        f"Schedule: {train_size} pulses/train, period {schedule.train_period_s * 1e6:.1f} us, "
        f"duty {schedule.duty_ratio:.4f}"
    )
    return schedule


def stray_qber(schedule: TrainSchedule, unscheduled_qber: float) -> float:
    """Backscatter errors vanish when trains never cross returning pulses."""
    return 0.0 if schedule.no_crossing else unscheduled_qber
