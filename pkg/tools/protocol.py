"""BB84 logic above the physics: settings, sifting, error estimation and monitors."""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np

import config
from models.frames import ClickBlock, ClickRecord, FrameBlock, QuantumFrame, SiftedKey
from models.reports import SecurityReport, Verdict

logger = logging.getLogger("qkdsim.protocol")

FramesLike = Union[FrameBlock, Sequence[QuantumFrame]]
ClicksLike = Union[ClickBlock, Sequence[ClickRecord]]


def random_bits(n: int, rng: np.random.Generator) -> np.ndarray:
    """n independent fair bits."""
    return rng.integers(0, 2, size=n, dtype=np.uint8)


def alice_settings(n: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Alice's (bits, bases) for n pulses; always drawn in this order."""
    bits = random_bits(n, rng)
    bases = random_bits(n, rng)
    return bits, bases


def assign_settings(n_pulses: int, rng: np.random.Generator,
                    bob_rng: Optional[np.random.Generator] = None,
                    start_index: int = 0) -> FrameBlock:
    """
    Draw independent uniform settings for a block of pulses.

    Args:
        n_pulses: Number of pulses (> 0)
        rng: Alice's generator (also Bob's when bob_rng is None)
        bob_rng: Bob's own generator
        start_index: Global index of the first pulse

    Returns:
        FrameBlock of QuantumFrames
    """
    if n_pulses <= 0:
        raise ValueError("At least one pulse is required")
    bits, bases = alice_settings(n_pulses, rng)
    bob_bases = random_bits(n_pulses, bob_rng if bob_rng is not None else rng)
    return FrameBlock(
        pulse_index=np.arange(start_index, start_index + n_pulses, dtype=np.int64),
        alice_bit=bits,
        alice_basis=bases,
        bob_basis=bob_bases,
    )


def single_clicks(clicks: ClicksLike) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Split a click stream into pulses with exactly one click and coincidences.

    Returns:
        (pulse indices with one click, the detector that fired, coincidence pulse indices)
    """
    block = ClickBlock.from_records(clicks)
    if len(block) == 0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, np.zeros(0, dtype=np.uint8), empty
    keys = block.pulse_index.astype(np.int64) * 2 + block.detector.astype(np.int64)
    if len(np.unique(keys)) != len(keys):
        raise ValueError("Duplicate click record for one (pulse, detector)")
    pulses, counts = np.unique(block.pulse_index, return_counts=True)
    flagged = np.unique(block.pulse_index[block.coincidence])
    coincident = np.union1d(pulses[counts > 1], flagged)
    singles_mask = ~np.isin(block.pulse_index, coincident)
    order = np.argsort(block.pulse_index[singles_mask], kind="stable")
    single_pulses = block.pulse_index[singles_mask][order]
    single_detectors = block.detector[singles_mask][order]
    return single_pulses.astype(np.int64), single_detectors.astype(np.uint8), coincident.astype(np.int64)


def compatible_mask(alice_bases: np.ndarray, bob_bases: np.ndarray) -> np.ndarray:
    """Which revealed positions have matching bases."""
    return np.asarray(alice_bases) == np.asarray(bob_bases)


def _positions(frames: FrameBlock, pulse_indices: np.ndarray) -> np.ndarray:
    pos = np.searchsorted(frames.pulse_index, pulse_indices)
    valid = (pos < len(frames)) & (frames.pulse_index[np.minimum(pos, len(frames) - 1)] == pulse_indices)
    if not np.all(valid):
        raise ValueError("Click references a pulse outside the transcript")
    return pos


def sift(frames: FramesLike, clicks: ClicksLike) -> SiftedKey:
    """
    Keep pulses with compatible bases and exactly one click.

    Bob's bit is read from the detector that fired (D1 -> 0, D2 -> 1).
    """
    frames = FrameBlock.from_frames(frames)
    pulses, detectors, _ = single_clicks(clicks)
    if len(pulses) == 0:
        return SiftedKey.empty()
    if len(frames) == 0:
        raise ValueError("Click references a pulse outside the transcript")
    pos = _positions(frames, pulses)
    keep = compatible_mask(frames.alice_basis[pos], frames.bob_basis[pos])
    return SiftedKey(
        indices=pulses[keep],
        alice_bits=frames.alice_bit[pos][keep].astype(np.uint8),
        bob_bits=detectors[keep].astype(np.uint8),
    )


@dataclass(frozen=True)
class QberEstimate:
    """Outcome of sacrificing a random sample of the sifted key."""

    d_hat: float
    ci_2sigma: float
    sample_size: int
    disclosed_indices: np.ndarray
    key: SiftedKey
    clamped: bool = False

    @property
    def d_clamped(self) -> float:
        return min(self.d_hat, 0.5)


def choose_sample_positions(key_length: int, sample_fraction: float,
                            rng: np.random.Generator) -> np.ndarray:
    """Sorted positions sampled uniformly without replacement."""
    if not 0.0 < sample_fraction <= 1.0:
        raise ValueError(f"sample_fraction must lie in (0, 1], got {sample_fraction}")
    if key_length <= 0:
        raise ValueError("Cannot sample an empty key")
    size = min(key_length, max(1, int(round(sample_fraction * key_length))))
    return np.sort(rng.choice(key_length, size=size, replace=False))


def qber_from_sample(alice_sample: np.ndarray, bob_sample: np.ndarray) -> Tuple[float, float]:
    """Point estimate and 2 sigma binomial half-width."""
    n = len(alice_sample)
    if n == 0:
        raise ValueError("Empty sample")
    d_hat = float(np.count_nonzero(np.asarray(alice_sample) != np.asarray(bob_sample))) / n
    return d_hat, 2.0 * math.sqrt(d_hat * (1.0 - d_hat) / n)


def estimate_qber(key: SiftedKey, sample_fraction: float = config.DEFAULT_SAMPLE_FRACTION,
                  rng: Optional[np.random.Generator] = None) -> QberEstimate:
    """
    Estimate the QBER on a disclosed sample and drop it from the key.

    Args:
        key: Sifted key (non-empty)
        sample_fraction: Share of the key to sacrifice
        rng: Sampling generator

    Returns:
        QberEstimate with the remaining key
    """
    if len(key) == 0:
        raise ValueError("Cannot estimate the QBER of an empty key")
    rng = rng if rng is not None else np.random.default_rng()
    positions = choose_sample_positions(len(key), sample_fraction, rng)
    d_hat, ci = qber_from_sample(key.alice_bits[positions], key.bob_bits[positions])
    if d_hat > 0.5:
        logger.warning(f"Sampled QBER {d_hat:.3f} above 0.5: keys look inverted")
    return QberEstimate(
        d_hat=d_hat,
        ci_2sigma=ci,
        sample_size=len(positions),
        disclosed_indices=key.indices[positions],
        key=key.without(positions),
        clamped=d_hat > 0.5,
    )


def count_coincidences(clicks: ClicksLike) -> int:
    """Pulses at which both detectors fired."""
    _, _, coincident = single_clicks(clicks)
    return len(coincident)


def calibrate_power_bounds(samples: Sequence[float],
                           k_sigma: float = config.POWER_BOUNDS_SIGMA) -> Tuple[float, float]:
    """Acceptance window for the incoming power from an honest calibration run."""
    samples = np.asarray(samples, dtype=float)
    if len(samples) < 2:
        raise ValueError("Power calibration needs at least two samples")
    mean = float(samples.mean())
    sigma = float(samples.std(ddof=1))
    return mean - k_sigma * sigma, mean + k_sigma * sigma


def security_check(clicks: Union[ClicksLike, int], expected_coincidence_rate: float, n_gates: int,
                   power_samples: Sequence[float],
                   calibration_bounds: Tuple[float, float],
                   alarm_sigma: float = config.COINCIDENCE_ALARM_SIGMA) -> SecurityReport:
    """
    Evaluate the coincidence and incoming-power monitors.

    Args:
        clicks: Click stream of the run, or an already counted number of coincidences
        expected_coincidence_rate: Honest coincidence probability per gate
        n_gates: Gates applied during the run
        power_samples: Incoming power readings at Alice
        calibration_bounds: (lo, hi) from a prior calibration run

    Returns:
        SecurityReport, ALERT if any monitored quantity is out of bounds
    """
    count = clicks if isinstance(clicks, (int, np.integer)) else count_coincidences(clicks)
    expected = expected_coincidence_rate * n_gates
    # At least one count of slack for short runs
    sigma = math.sqrt(max(expected, 1.0))
    reasons = []
    if count > expected + alarm_sigma * sigma:
        reasons.append(
            f"coincidences {count} exceed {expected:.1f} + {alarm_sigma:g} sigma ({sigma:.1f})"
        )

    power = np.asarray(power_samples, dtype=float)
    lo, hi = calibration_bounds
    violations = int(np.count_nonzero((power < lo) | (power > hi)))
    if violations:
        reasons.append(f"{violations} incoming power samples outside [{lo:.4g}, {hi:.4g}]")

    verdict = Verdict.ALERT if reasons else Verdict.OK
    if reasons:
        logger.warning(f"Security monitor ALERT: {'; '.join(reasons)}")
    return SecurityReport(
        coincidence_count=int(count),
        coincidence_expected=expected,
        coincidence_sigma=sigma,
        mean_incoming_power=float(power.mean()) if len(power) else None,
        power_bounds=(float(lo), float(hi)),
        power_violations=violations,
        verdict=verdict,
        reasons=tuple(reasons),
    )
