"""
Classical channel framing.

Frame layout::

    magic (2) | version (1) | type (1) | session_id (8) | payload_len (3, BE) | payload

Payloads are type specific; the helpers below build and parse them. Nothing in
here ever carries a sifted key bit except SAMPLE_BITS, which are sacrificed.
SIMQ stands in for the photons and is simulation-only.
"""

import struct
from dataclasses import dataclass
from enum import IntEnum
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

import config
from errors import (
    BadMagicError,
    PayloadError,
    TruncatedFrameError,
    UnknownTypeError,
    UnsupportedVersionError,
)
from utils import pack_bits, unpack_bits

HEADER = struct.Struct(">2sBB8s3s")
HEADER_SIZE = HEADER.size
MAX_PAYLOAD = (1 << 24) - 1
SESSION_ID_SIZE = 8


class MessageType(IntEnum):
    HELLO = 1
    PARAMS = 2
    TRAIN_DONE = 3
    CLICK_REPORT = 4
    BASIS_REVEAL = 5
    SIFT_RESULT = 6
    SAMPLE_REQUEST = 7
    SAMPLE_BITS = 8
    QBER_REPORT = 9
    SECURITY_ALERT = 10
    ABORT = 11
    BYE = 12
    SIMQ = 13


@dataclass(frozen=True)
class ClassicalMessage:
    type: MessageType
    session_id: bytes
    payload: bytes = b""

    def __post_init__(self):
        if len(self.session_id) != SESSION_ID_SIZE:
            raise ValueError(f"session_id must be {SESSION_ID_SIZE} bytes")
        if len(self.payload) > MAX_PAYLOAD:
            raise ValueError(f"payload of {len(self.payload)} bytes exceeds {MAX_PAYLOAD}")


def encode(msg: ClassicalMessage) -> bytes:
    header = HEADER.pack(
        config.WIRE_MAGIC,
        config.WIRE_VERSION,
        int(msg.type),
        msg.session_id,
        len(msg.payload).to_bytes(3, "big"),
    )
    return header + msg.payload


def _parse_header(data: bytes) -> Tuple[MessageType, bytes, int]:
    if len(data) < HEADER_SIZE:
        raise TruncatedFrameError(f"{len(data)} bytes is shorter than the {HEADER_SIZE}-byte header")
    magic, version, type_byte, session_id, length = HEADER.unpack_from(data)
    if magic != config.WIRE_MAGIC:
        raise BadMagicError(f"bad magic {magic.hex()}")
    if version != config.WIRE_VERSION:
        raise UnsupportedVersionError(f"unsupported version {version}")
    try:
        msg_type = MessageType(type_byte)
    except ValueError:
        raise UnknownTypeError(f"unknown message type {type_byte}") from None
    return msg_type, session_id, int.from_bytes(length, "big")


def frame_length(data: bytes) -> Optional[int]:
    """Total length of the frame at the start of data, None until the header is complete."""
    if len(data) < HEADER_SIZE:
        return None
    _, _, length = _parse_header(data)
    return HEADER_SIZE + length


def decode(data: bytes) -> ClassicalMessage:
    """
    Decode exactly one frame.

    Raises:
        DecodeError subclass; never anything else
    """
    msg_type, session_id, length = _parse_header(data)
    end = HEADER_SIZE + length
    if len(data) < end:
        raise TruncatedFrameError(f"payload_len {length} exceeds the {len(data) - HEADER_SIZE} bytes present")
    if len(data) > end:
        raise PayloadError(f"{len(data) - end} trailing bytes after frame")
    return ClassicalMessage(msg_type, session_id, bytes(data[HEADER_SIZE:end]))


def split_frames(buffer: bytes) -> Tuple[List[ClassicalMessage], bytes]:
    """Decode every complete frame in a stream buffer; returns the unconsumed rest."""
    messages = []
    while True:
        total = frame_length(buffer)
        if total is None or len(buffer) < total:
            return messages, buffer
        messages.append(decode(buffer[:total]))
        buffer = buffer[total:]


# Payload helpers

def encode_varint(value: int) -> bytes:
    if value < 0:
        raise ValueError("varints are unsigned")
    out = bytearray()
    while True:
        byte = value & 0x7F
        value >>= 7
        if value:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return bytes(out)


def decode_varint(data: bytes, offset: int) -> Tuple[int, int]:
    """Returns (value, next offset)."""
    value = 0
    shift = 0
    while True:
        if offset >= len(data):
            raise PayloadError("varint runs past the end of the payload")
        byte = data[offset]
        offset += 1
        value |= (byte & 0x7F) << shift
        if not byte & 0x80:
            return value, offset
        shift += 7
        if shift > 63:
            raise PayloadError("varint too long")


def encode_deltas(values: Sequence[int], start: int = 0) -> bytes:
    """Count followed by strictly increasing values as varint gaps from ``start``."""
    out = [encode_varint(len(values))]
    previous = start - 1
    for value in values:
        value = int(value)
        if value <= previous:
            raise ValueError("values must be strictly increasing and >= start")
        out.append(encode_varint(value - previous - 1))
        previous = value
    return b"".join(out)


def decode_deltas(data: bytes, offset: int = 0, start: int = 0) -> Tuple[np.ndarray, int]:
    count, offset = decode_varint(data, offset)
    if count > len(data) - offset:
        raise PayloadError(f"{count} values cannot fit in {len(data) - offset} bytes")
    values = np.empty(count, dtype=np.int64)
    previous = start - 1
    for i in range(count):
        gap, offset = decode_varint(data, offset)
        previous = previous + gap + 1
        if previous >= 1 << 62:
            raise PayloadError("index out of range")
        values[i] = previous
    return values, offset


def encode_bitvector(bits: Sequence[int]) -> bytes:
    return encode_varint(len(bits)) + pack_bits(bits)


def decode_bitvector(data: bytes, offset: int = 0) -> Tuple[np.ndarray, int]:
    count, offset = decode_varint(data, offset)
    n_bytes = (count + 7) // 8
    if offset + n_bytes > len(data):
        raise PayloadError(f"bitvector of {count} bits is truncated")
    bits = unpack_bits(data[offset:offset + n_bytes], count)
    return bits, offset + n_bytes


def _expect_end(data: bytes, offset: int):
    if offset != len(data):
        raise PayloadError(f"{len(data) - offset} unexpected bytes at end of payload")


def _train_prefix(train_index: int) -> bytes:
    return encode_varint(train_index)


def train_payload(train_index: int) -> bytes:
    """TRAIN_DONE: index of the last train."""
    return _train_prefix(train_index)


def parse_train(payload: bytes) -> int:
    train, offset = decode_varint(payload, 0)
    _expect_end(payload, offset)
    return train


# Typed payloads

def simq_payload(train_index: int, quarters: Sequence[int]) -> bytes:
    """Alice's phases in quarter turns, two bits per pulse."""
    quarters = np.asarray(quarters, dtype=np.uint8)
    if len(quarters) and quarters.max() > 3:
        raise ValueError("phase quarters must lie in 0..3")
    high = (quarters >> 1) & 1
    low = quarters & 1
    return _train_prefix(train_index) + encode_bitvector(high) + encode_bitvector(low)


def parse_simq(payload: bytes) -> Tuple[int, np.ndarray]:
    train, offset = decode_varint(payload, 0)
    high, offset = decode_bitvector(payload, offset)
    low, offset = decode_bitvector(payload, offset)
    _expect_end(payload, offset)
    if len(high) != len(low):
        raise PayloadError("SIMQ bit planes differ in length")
    return train, (2 * high.astype(np.int64) + low.astype(np.int64))


def click_report_payload(train_index: int, first_pulse: int, pulses: Sequence[int],
                         coincidences: int) -> bytes:
    """Single-click pulse indices, delta coded from the train's first pulse."""
    return (
        _train_prefix(train_index)
        + encode_varint(first_pulse)
        + encode_deltas(pulses, start=first_pulse)
        + encode_varint(coincidences)
    )


def parse_click_report(payload: bytes) -> Tuple[int, np.ndarray, int]:
    train, offset = decode_varint(payload, 0)
    first, offset = decode_varint(payload, offset)
    pulses, offset = decode_deltas(payload, offset, start=first)
    coincidences, offset = decode_varint(payload, offset)
    _expect_end(payload, offset)
    return train, pulses, coincidences


def bits_payload(train_index: int, bits: Sequence[int]) -> bytes:
    """BASIS_REVEAL and SIFT_RESULT: one bit per reported click."""
    return _train_prefix(train_index) + encode_bitvector(bits)


def parse_bits(payload: bytes) -> Tuple[int, np.ndarray]:
    train, offset = decode_varint(payload, 0)
    bits, offset = decode_bitvector(payload, offset)
    _expect_end(payload, offset)
    return train, bits


def sample_request_payload(key_length: int, positions: Sequence[int]) -> bytes:
    return encode_varint(key_length) + encode_deltas(positions)


def parse_sample_request(payload: bytes) -> Tuple[int, np.ndarray]:
    key_length, offset = decode_varint(payload, 0)
    positions, offset = decode_deltas(payload, offset)
    _expect_end(payload, offset)
    if len(positions) and positions[-1] >= key_length:
        raise PayloadError("sample position beyond the key")
    return key_length, positions


def sample_bits_payload(bits: Sequence[int]) -> bytes:
    return encode_bitvector(bits)


def parse_sample_bits(payload: bytes) -> np.ndarray:
    bits, offset = decode_bitvector(payload, 0)
    _expect_end(payload, offset)
    return bits


QBER_REPORT = struct.Struct(">ddI")


def qber_report_payload(d_hat: float, ci_2sigma: float, sample_size: int) -> bytes:
    return QBER_REPORT.pack(d_hat, ci_2sigma, sample_size)


def parse_qber_report(payload: bytes) -> Tuple[float, float, int]:
    if len(payload) != QBER_REPORT.size:
        raise PayloadError(f"QBER_REPORT payload must be {QBER_REPORT.size} bytes")
    d_hat, ci, size = QBER_REPORT.unpack(payload)
    if not 0.0 <= d_hat <= 1.0:
        raise PayloadError(f"QBER {d_hat} outside [0, 1]")
    return d_hat, ci, size


def text_payload(text: str) -> bytes:
    return text.encode("utf-8")


def parse_text(payload: bytes) -> str:
    try:
        return payload.decode("utf-8")
    except UnicodeDecodeError as e:
        raise PayloadError(f"invalid UTF-8 text: {e}") from e


def iter_frames(data: bytes) -> Iterator[ClassicalMessage]:
    """All frames of a complete transcript."""
    messages, rest = split_frames(data)
    if rest:
        raise TruncatedFrameError(f"{len(rest)} bytes of an incomplete frame")
    yield from messages
