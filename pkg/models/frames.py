"""Per-pulse transcripts: settings, clicks and sifted keys."""

import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterator, Sequence

import numpy as np


class Detector(IntEnum):
    """Bob's two detectors. Delta phi = 0 routes to D1, which decodes as bit 0."""

    D1 = 0
    D2 = 1


# Bit decoded from the detector that fired
BIT_OF_DETECTOR = {Detector.D1: 0, Detector.D2: 1}


class ClickCause(IntEnum):
    """What triggered an avalanche (simulation diagnostic only)."""

    PHOTON = 0
    AFTERPULSE = 1
    DARK = 2


@dataclass(frozen=True)
class QuantumFrame:
    """Alice's and Bob's modulator settings for one pulse."""

    pulse_index: int
    alice_bit: int
    alice_basis: int
    bob_basis: int

    @property
    def alice_phase(self) -> float:
        return self.alice_basis * math.pi / 2 + self.alice_bit * math.pi

    @property
    def bob_phase(self) -> float:
        return self.bob_basis * math.pi / 2

    @property
    def compatible(self) -> bool:
        return self.alice_basis == self.bob_basis


@dataclass(frozen=True)
class FrameBlock:
    """
    Column-wise block of QuantumFrames.

    Phases are carried as quarter turns so routing uses exact cosines:
    alice_quarter = basis + 2 * bit, bob_quarter = basis.
    """

    pulse_index: np.ndarray
    alice_bit: np.ndarray
    alice_basis: np.ndarray
    bob_basis: np.ndarray

    def __post_init__(self):
        n = len(self.pulse_index)
        if not (len(self.alice_bit) == len(self.alice_basis) == len(self.bob_basis) == n):
            raise ValueError("FrameBlock columns must have equal lengths")

    def __len__(self) -> int:
        return len(self.pulse_index)

    def __iter__(self) -> Iterator[QuantumFrame]:
        for i in range(len(self)):
            yield self[i]

    def __getitem__(self, i: int) -> QuantumFrame:
        return QuantumFrame(
            pulse_index=int(self.pulse_index[i]),
            alice_bit=int(self.alice_bit[i]),
            alice_basis=int(self.alice_basis[i]),
            bob_basis=int(self.bob_basis[i]),
        )

    @property
    def alice_quarter(self) -> np.ndarray:
        return (self.alice_basis.astype(np.int64) + 2 * self.alice_bit.astype(np.int64)) % 4

    @property
    def bob_quarter(self) -> np.ndarray:
        return self.bob_basis.astype(np.int64)

    @property
    def delta_quarter(self) -> np.ndarray:
        """Phase difference Alice - Bob in quarter turns."""
        return (self.alice_quarter - self.bob_quarter) % 4

    @classmethod
    def from_frames(cls, frames: Sequence[QuantumFrame]) -> "FrameBlock":
        if isinstance(frames, FrameBlock):
            return frames
        return cls(
            pulse_index=np.array([f.pulse_index for f in frames], dtype=np.int64),
            alice_bit=np.array([f.alice_bit for f in frames], dtype=np.uint8),
            alice_basis=np.array([f.alice_basis for f in frames], dtype=np.uint8),
            bob_basis=np.array([f.bob_basis for f in frames], dtype=np.uint8),
        )

    @classmethod
    def concat(cls, blocks: Sequence["FrameBlock"]) -> "FrameBlock":
        return cls(
            pulse_index=np.concatenate([b.pulse_index for b in blocks]),
            alice_bit=np.concatenate([b.alice_bit for b in blocks]),
            alice_basis=np.concatenate([b.alice_basis for b in blocks]),
            bob_basis=np.concatenate([b.bob_basis for b in blocks]),
        )


@dataclass(frozen=True)
class ClickRecord:
    """One detection event."""

    pulse_index: int
    detector: Detector
    time_s: float
    coincidence: bool = False
    cause: ClickCause = ClickCause.PHOTON


@dataclass
class ClickBlock:
    """Column-wise click records, ordered by (time, detector)."""

    pulse_index: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    detector: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.uint8))
    time_s: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.float64))
    coincidence: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    cause: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.uint8))

    def __len__(self) -> int:
        return len(self.pulse_index)

    def __iter__(self) -> Iterator[ClickRecord]:
        for i in range(len(self)):
            yield ClickRecord(
                pulse_index=int(self.pulse_index[i]),
                detector=Detector(int(self.detector[i])),
                time_s=float(self.time_s[i]),
                coincidence=bool(self.coincidence[i]),
                cause=ClickCause(int(self.cause[i])),
            )

    @classmethod
    def from_records(cls, records: Sequence[ClickRecord]) -> "ClickBlock":
        if isinstance(records, ClickBlock):
            return records
        return cls(
            pulse_index=np.array([r.pulse_index for r in records], dtype=np.int64),
            detector=np.array([int(r.detector) for r in records], dtype=np.uint8),
            time_s=np.array([r.time_s for r in records], dtype=np.float64),
            coincidence=np.array([r.coincidence for r in records], dtype=bool),
            cause=np.array([int(r.cause) for r in records], dtype=np.uint8),
        )

    @classmethod
    def concat(cls, blocks: Sequence["ClickBlock"]) -> "ClickBlock":
        blocks = [b for b in blocks if len(b)]
        if not blocks:
            return cls()
        return cls(
            pulse_index=np.concatenate([b.pulse_index for b in blocks]),
            detector=np.concatenate([b.detector for b in blocks]),
            time_s=np.concatenate([b.time_s for b in blocks]),
            coincidence=np.concatenate([b.coincidence for b in blocks]),
            cause=np.concatenate([b.cause for b in blocks]),
        )


@dataclass(frozen=True)
class SiftedKey:
    """Index-aligned bits that survived basis reconciliation."""

    indices: np.ndarray
    alice_bits: np.ndarray
    bob_bits: np.ndarray

    def __post_init__(self):
        if not (len(self.indices) == len(self.alice_bits) == len(self.bob_bits)):
            raise ValueError("SiftedKey columns must have equal lengths")
        if len(self.indices) > 1 and np.any(np.diff(self.indices) <= 0):
            raise ValueError("SiftedKey indices must be strictly increasing")

    def __len__(self) -> int:
        return len(self.indices)

    @property
    def errors(self) -> int:
        return int(np.count_nonzero(self.alice_bits != self.bob_bits))

    @classmethod
    def empty(cls) -> "SiftedKey":
        return cls(
            indices=np.zeros(0, dtype=np.int64),
            alice_bits=np.zeros(0, dtype=np.uint8),
            bob_bits=np.zeros(0, dtype=np.uint8),
        )

    @classmethod
    def concat(cls, keys: Sequence["SiftedKey"]) -> "SiftedKey":
        keys = [k for k in keys if len(k)]
        if not keys:
            return cls.empty()
        return cls(
            indices=np.concatenate([k.indices for k in keys]),
            alice_bits=np.concatenate([k.alice_bits for k in keys]),
            bob_bits=np.concatenate([k.bob_bits for k in keys]),
        )

    def without(self, positions: np.ndarray) -> "SiftedKey":
        """Copy with the given positions (not pulse indices) removed."""
        keep = np.ones(len(self), dtype=bool)
        keep[positions] = False
        return SiftedKey(self.indices[keep], self.alice_bits[keep], self.bob_bits[keep])

    def equals(self, other: "SiftedKey") -> bool:
        return (
            np.array_equal(self.indices, other.indices)
            and np.array_equal(self.alice_bits, other.alice_bits)
            and np.array_equal(self.bob_bits, other.bob_bits)
        )
