"""
Per-pulse stochastic models: photon statistics, fibre transmission,
interferometric routing and the gated detector.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from models.frames import ClickCause, Detector, QuantumFrame
from models.params import AfterpulseProfile, DetectorSpec

logger = logging.getLogger("qkdsim.photonics")

# cos(k * pi / 2) without rounding noise
_COS_QUARTER = np.array([1.0, 0.0, -1.0, 0.0])

# Avalanches older than this many time constants are forgotten
HISTORY_HORIZON = 10.0

# Absorbs float rounding when comparing gate times with dead_until
TIME_EPS = 1e-12


def routing_probs(delta_phi: float, visibility: float) -> Tuple[float, float]:
    """
    Probability that a photon leaves the interferometer towards D1 or D2.

    Args:
        delta_phi: Alice's phase minus Bob's phase, radians
        visibility: Fringe visibility in [0, 1]

    Returns:
        (p_d1, p_d2), summing to one
    """
    if not 0.0 <= visibility <= 1.0:
        raise ValueError(f"Visibility must lie in [0, 1], got {visibility}")
    quarter = delta_phi / (math.pi / 2)
    if math.isclose(quarter, round(quarter), abs_tol=1e-12):
        cos_phi = float(_COS_QUARTER[int(round(quarter)) % 4])
    else:
        cos_phi = math.cos(delta_phi)
    p_d1 = (1.0 + visibility * cos_phi) / 2.0
    return p_d1, 1.0 - p_d1


def routing_probs_quarter(delta_quarter: np.ndarray, visibility: float) -> np.ndarray:
    """Vectorised p_d1 for phase differences given in quarter turns."""
    return (1.0 + visibility * _COS_QUARTER[np.asarray(delta_quarter) % 4]) / 2.0


def pulse_arrivals(frame: QuantumFrame, mu: float, channel_transmission: float,
                   rng: np.random.Generator, t_bob: float = 1.0,
                   visibility: float = 1.0) -> Tuple[int, int]:
    """
    Photon numbers reaching D1 and D2 for one pulse.

    Draws n ~ Poisson(mu), keeps each photon with probability
    channel_transmission * t_bob and routes every survivor independently.
    """
    if mu <= 0:
        raise ValueError("mu must be positive")
    if not 0.0 <= channel_transmission <= 1.0:
        raise ValueError("Transmission must lie in [0, 1]")
    n = rng.poisson(mu)
    survivors = rng.binomial(n, channel_transmission * t_bob)
    p_d1, _ = routing_probs(frame.alice_phase - frame.bob_phase, visibility)
    n_d1 = rng.binomial(survivors, p_d1)
    return int(n_d1), int(survivors - n_d1)


def train_arrivals(delta_quarter: np.ndarray, mu: float, transmission: float,
                   visibility: float, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """pulse_arrivals for a whole train; transmission already includes Bob's t_B."""
    n = rng.poisson(mu, size=len(delta_quarter))
    survivors = rng.binomial(n, transmission)
    n_d1 = rng.binomial(survivors, routing_probs_quarter(delta_quarter, visibility))
    return n_d1, survivors - n_d1


@dataclass
class TrainClicks:
    """Gate positions (within one train) at which a detector fired."""

    positions: np.ndarray
    causes: np.ndarray
    live_gates: int
    photon_live_clicks: int


@dataclass
class GatedDetector:
    """
    Mutable state of one actively gated APD.

    Gates are point events; a gate inside the dead time is not applied at all.
    Afterpulse probability is the superposition of exponentials from every
    avalanche still inside the history horizon.
    """

    id: Detector
    p_dark: float
    efficiency: float
    dead_time_s: float
    afterpulse: AfterpulseProfile = field(default_factory=AfterpulseProfile)
    gate_width_s: float = 2.5e-9
    dead_until: float = -math.inf
    last_avalanche_times: List[float] = field(default_factory=list)
    last_gate_time: float = -math.inf

    @classmethod
    def from_spec(cls, detector_id: Detector, spec: DetectorSpec, efficiency: float,
                  dead_time_s: float) -> "GatedDetector":
        return cls(
            id=detector_id,
            p_dark=spec.p_dark,
            efficiency=efficiency,
            dead_time_s=dead_time_s,
            afterpulse=spec.afterpulse,
            gate_width_s=spec.gate_width_s,
        )

    @property
    def horizon_s(self) -> float:
        return HISTORY_HORIZON * self.afterpulse.time_const_s

    def is_live(self, t: float) -> bool:
        return t >= self.dead_until - TIME_EPS

    def afterpulse_probability(self, t):
        """Afterpulse probability at time(s) t from the remembered avalanches."""
        if not self.last_avalanche_times or self.afterpulse.amplitude == 0:
            return np.zeros_like(np.asarray(t, dtype=float))
        history = np.asarray(self.last_avalanche_times)
        delays = np.asarray(t, dtype=float)[..., None] - history
        terms = np.where(delays > 0, self.afterpulse.probability(np.maximum(delays, 0.0)), 0.0)
        return terms.sum(axis=-1)

    def _prune(self, now: float):
        cutoff = now - self.horizon_s
        self.last_avalanche_times = [h for h in self.last_avalanche_times if h >= cutoff]

    def _avalanche(self, t: float):
        self.last_avalanche_times.append(t)
        self._prune(t)
        self.dead_until = t + self.dead_time_s

    def gate(self, n_photons: int, t: float, rng: np.random.Generator) -> bool:
        """
        Apply one detection gate at time t.

        Returns:
            Whether the detector clicked
        """
        if t <= self.last_gate_time:
            raise ValueError(f"Gate at {t} s is not after the previous gate ({self.last_gate_time} s)")
        self.last_gate_time = t
        if not self.is_live(t):
            return False
        u_photon, u_after, u_dark = rng.random(3)
        p_photon = 1.0 - (1.0 - self.efficiency) ** n_photons
        p_after = float(self.afterpulse_probability(t))
        clicked = u_photon < p_photon or u_after < p_after or u_dark < self.p_dark
        if clicked:
            self._avalanche(t)
        return clicked

    def fire_train(self, times: np.ndarray, n_photons: np.ndarray,
                   rng: np.random.Generator) -> TrainClicks:
        """
        Apply one gate per pulse of a train.

        Uniform variates for every gate are drawn up front, so the result is a
        pure function of the generator state; the sequential part only walks
        from one avalanche to the next.
        """
        n = len(times)
        if n == 0:
            return TrainClicks(np.zeros(0, np.int64), np.zeros(0, np.uint8), 0, 0)
        if times[0] <= self.last_gate_time or np.any(np.diff(times) <= 0):
            raise ValueError("Gate times must be strictly increasing")

        u_photon = rng.random(n)
        u_after = rng.random(n)
        u_dark = rng.random(n)
        photon = u_photon < 1.0 - (1.0 - self.efficiency) ** n_photons
        dark = u_dark < self.p_dark
        candidates = np.flatnonzero(photon | dark)

        positions: List[int] = []
        causes: List[int] = []
        live_gates = 0
        photon_live = 0
        has_afterpulse = self.afterpulse.amplitude > 0

        i = int(np.searchsorted(times, self.dead_until - TIME_EPS, side="left"))
        while i < n:
            j_after = None
            window_end = i
            if has_afterpulse and self.last_avalanche_times:
                horizon_end = self.last_avalanche_times[-1] + self.horizon_s
                window_end = int(np.searchsorted(times, horizon_end, side="right"))
                if window_end > i:
                    p_after = self.afterpulse_probability(times[i:window_end])
                    hits = np.flatnonzero(u_after[i:window_end] < p_after)
                    if len(hits):
                        j_after = i + int(hits[0])
            k = int(np.searchsorted(candidates, i, side="left"))
            j_cand = int(candidates[k]) if k < len(candidates) else None

            if j_after is None and j_cand is None:
                live_gates += n - i
                photon_live += int(np.count_nonzero(photon[i:]))
                break
            j = min(x for x in (j_after, j_cand) if x is not None)

            live_gates += j - i + 1
            photon_live += int(np.count_nonzero(photon[i:j + 1]))
            if photon[j]:
                cause = ClickCause.PHOTON
            elif j_after == j:
                cause = ClickCause.AFTERPULSE
            else:
                cause = ClickCause.DARK
            positions.append(j)
            causes.append(int(cause))
            self._avalanche(float(times[j]))
            i = int(np.searchsorted(times, self.dead_until - TIME_EPS, side="left"))
            if i <= j:
                i = j + 1

        self.last_gate_time = float(times[-1])
        return TrainClicks(
            positions=np.asarray(positions, dtype=np.int64),
            causes=np.asarray(causes, dtype=np.uint8),
            live_gates=live_gates,
            photon_live_clicks=photon_live,
        )

    def fire_memoryless(self, n_photons: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Click mask for a gate sequence with neither dead time nor afterpulsing."""
        u_photon = rng.random(len(n_photons))
        u_dark = rng.random(len(n_photons))
        return (u_photon < 1.0 - (1.0 - self.efficiency) ** n_photons) | (u_dark < self.p_dark)


def make_detectors(spec: DetectorSpec, efficiency: float, dead_time_s: float) -> Tuple[GatedDetector, GatedDetector]:
    """Bob's detector pair."""
    return (
        GatedDetector.from_spec(Detector.D1, spec, efficiency, dead_time_s),
        GatedDetector.from_spec(Detector.D2, spec, efficiency, dead_time_s),
    )
