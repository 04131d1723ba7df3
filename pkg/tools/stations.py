"""
Alice's and Bob's halves of one key exchange, train by train.

The single-process orchestrator drives both stations directly; the networked
agents each own one station and pass the same data through classical frames.
Each station only touches its own random substreams, so both modes produce
identical keys for one seed.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from models.frames import ClickBlock, ClickCause, SiftedKey
from models.params import DetectorSpec, SystemParams
from tools.photonics import make_detectors, train_arrivals
from tools.protocol import alice_settings, random_bits
from tools.rate_model import transmission_from_loss
from tools.schedule import TrainSchedule
from tools.calibration import power_samples

logger = logging.getLogger("qkdsim.stations")


@dataclass
class KeyBuffer:
    """One side's sifted bits, appended train by train."""

    indices: List[np.ndarray] = field(default_factory=list)
    bits: List[np.ndarray] = field(default_factory=list)

    def append(self, indices: np.ndarray, bits: np.ndarray):
        if len(indices):
            self.indices.append(np.asarray(indices, dtype=np.int64))
            self.bits.append(np.asarray(bits, dtype=np.uint8))

    def arrays(self) -> Tuple[np.ndarray, np.ndarray]:
        if not self.indices:
            return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.uint8)
        return np.concatenate(self.indices), np.concatenate(self.bits)

    def __len__(self) -> int:
        return sum(len(i) for i in self.indices)


def combine_keys(alice: KeyBuffer, bob: KeyBuffer) -> SiftedKey:
    """Join both sides' buffers; only possible where both live in one process."""
    a_idx, a_bits = alice.arrays()
    b_idx, b_bits = bob.arrays()
    if not np.array_equal(a_idx, b_idx):
        raise ValueError("Alice and Bob disagree on the sifted positions")
    return SiftedKey(indices=a_idx, alice_bits=a_bits, bob_bits=b_bits)


class AliceStation:
    """Phase modulator, power monitor and Alice's side of sifting."""

    def __init__(self, schedule: TrainSchedule, n_pulses_total: int, streams: dict,
                 trojan_power: float = 0.0):
        self.schedule = schedule
        self.n_pulses_total = n_pulses_total
        self.rng = streams["alice"]
        self.power_rng = streams["power"]
        self.trojan_power = trojan_power
        self.key = KeyBuffer()
        self.power_readings: List[float] = []
        self._train = -1
        self._bits: Optional[np.ndarray] = None
        self._bases: Optional[np.ndarray] = None

    def calibrate_power(self, n_samples: int = 1000) -> np.ndarray:
        """Honest readings taken before the exchange starts."""
        return power_samples(n_samples, self.power_rng)

    def prepare(self, train_index: int) -> np.ndarray:
        """Draw the train's settings; returns Alice's phases in quarter turns."""
        n = self.schedule.pulses_in_train(train_index, self.n_pulses_total)
        if n <= 0:
            raise ValueError(f"Train {train_index} is past the end of the run")
        self._train = train_index
        self._bits, self._bases = alice_settings(n, self.rng)
        self.power_readings.append(
            float(power_samples(1, self.power_rng, self.trojan_power)[0])
        )
        return (self._bases.astype(np.int64) + 2 * self._bits.astype(np.int64)) % 4

    @property
    def settings(self) -> Tuple[np.ndarray, np.ndarray]:
        """(bits, bases) of the prepared train."""
        if self._bases is None:
            raise ValueError("No train prepared")
        return self._bits, self._bases

    def sift(self, pulse_indices: np.ndarray, bob_bases: np.ndarray) -> np.ndarray:
        """Compatible-basis mask for Bob's single clicks; keeps Alice's bits."""
        if self._bases is None:
            raise ValueError("No train prepared")
        local = np.asarray(pulse_indices, dtype=np.int64) - self._train * self.schedule.train_size
        if len(local) and (local.min() < 0 or local.max() >= len(self._bases)):
            raise ValueError("Click report references a pulse outside the current train")
        keep = self._bases[local] == np.asarray(bob_bases, dtype=np.uint8)
        self.key.append(np.asarray(pulse_indices)[keep], self._bits[local][keep])
        return keep

    def power_alarm(self, bounds: Tuple[float, float]) -> bool:
        """Whether the reading of the last train left the calibrated window."""
        if not self.power_readings:
            return False
        lo, hi = bounds
        return not lo <= self.power_readings[-1] <= hi


@dataclass
class TrainDetection:
    """What Bob's detectors saw during one train."""

    clicks: ClickBlock
    single_pulses: np.ndarray
    single_detectors: np.ndarray
    single_causes: np.ndarray
    coincidences: int


class BobStation:
    """Source, channel, interferometer and the two gated detectors."""

    def __init__(self, params: SystemParams, detector: DetectorSpec, schedule: TrainSchedule,
                 streams: dict):
        self.params = params
        self.schedule = schedule
        self.rng = streams["bob"]
        self.channel_rng = streams["channel"]
        self.detector_rngs = (streams["detector_d1"], streams["detector_d2"])
        self.detectors = make_detectors(detector, params.eta_bob, params.dead_time_s)
        self.transmission = transmission_from_loss(params.fiber.loss_db) * params.t_bob
        self.key = KeyBuffer()
        self.sifted_causes: List[np.ndarray] = []
        self.gates = 0
        self.live_gates = np.zeros(2, dtype=np.int64)
        self.photon_live_clicks = np.zeros(2, dtype=np.int64)
        self.coincidences = 0
        self.click_blocks: List[ClickBlock] = []
        self._last: Optional[TrainDetection] = None
        self._bases: Optional[np.ndarray] = None
        self._single_local = np.zeros(0, dtype=np.int64)

    def detect(self, train_index: int, alice_quarter: np.ndarray) -> TrainDetection:
        """Choose Bob's bases and run one train through channel and detectors."""
        alice_quarter = np.asarray(alice_quarter, dtype=np.int64)
        n = len(alice_quarter)
        self._bases = random_bits(n, self.rng)
        delta = (alice_quarter - self._bases.astype(np.int64)) % 4
        arrivals = train_arrivals(delta, self.params.mu, self.transmission,
                                  self.params.visibility, self.channel_rng)
        times = self.schedule.gate_times(train_index, n)
        results = [
            det.fire_train(times, photons, rng)
            for det, photons, rng in zip(self.detectors, arrivals, self.detector_rngs)
        ]
        self.gates += n
        for d, result in enumerate(results):
            self.live_gates[d] += result.live_gates
            self.photon_live_clicks[d] += result.photon_live_clicks

        base = train_index * self.schedule.train_size
        p1, p2 = results[0].positions, results[1].positions
        both = np.intersect1d(p1, p2)
        self.coincidences += len(both)

        pos = np.concatenate([p1, p2])
        det = np.concatenate([np.zeros(len(p1), np.uint8), np.ones(len(p2), np.uint8)])
        cause = np.concatenate([results[0].causes, results[1].causes])
        order = np.lexsort((det, times[pos]))
        clicks = ClickBlock(
            pulse_index=(base + pos[order]).astype(np.int64),
            detector=det[order],
            time_s=times[pos[order]],
            coincidence=np.isin(pos[order], both),
            cause=cause[order],
        )
        self.click_blocks.append(clicks)
        single = ~np.isin(pos, both)
        s_order = np.argsort(pos[single], kind="stable")
        self._single_local = pos[single][s_order]
        self._last = TrainDetection(
            clicks=clicks,
            single_pulses=(base + pos[single][s_order]).astype(np.int64),
            single_detectors=det[single][s_order],
            single_causes=cause[single][s_order],
            coincidences=len(both),
        )
        return self._last

    @property
    def bases(self) -> np.ndarray:
        """Bob's bases over the whole last train."""
        if self._bases is None:
            raise ValueError("No train detected")
        return self._bases

    def reveal_bases(self) -> np.ndarray:
        """Bob's bases at the pulses with exactly one click."""
        if self._last is None:
            raise ValueError("No train detected")
        return self._bases[self._single_local]

    def accept(self, keep: np.ndarray):
        """Apply Alice's sift result to the last train."""
        if self._last is None:
            raise ValueError("No train detected")
        keep = np.asarray(keep, dtype=bool)
        if len(keep) != len(self._last.single_pulses):
            raise ValueError("Sift result does not match the click report")
        self.key.append(self._last.single_pulses[keep], self._last.single_detectors[keep])
        self.sifted_causes.append(self._last.single_causes[keep])
        self._last = None

    def cause_counts(self, alice_bits: np.ndarray) -> dict:
        """Errors per click cause over the whole sifted key (simulation diagnostic)."""
        _, bob_bits = self.key.arrays()
        causes = np.concatenate(self.sifted_causes) if self.sifted_causes else np.zeros(0, np.uint8)
        wrong = np.asarray(alice_bits) != bob_bits
        return {cause: int(np.count_nonzero(wrong & (causes == cause))) for cause in ClickCause}

    @property
    def measured_p_det(self) -> float:
        """Photon-triggered clicks per live gate, summed over both detectors."""
        live = np.maximum(self.live_gates, 1)
        return float(np.sum(self.photon_live_clicks / live))

    @property
    def live_fraction(self) -> float:
        if self.gates == 0:
            return 1.0
        return float(np.mean(self.live_gates) / self.gates)
