"""Keyframe + delta toy codec.

A frame record is ``flag (1 byte) | payload length (u32 LE) | payload``.
Keyframe payloads are the RLE of the raw bytes; delta payloads are the RLE
of ``(current - previous) mod 256``. RLE is a sequence of ``(count, value)``
byte pairs with ``1 <= count <= 255``.
"""

from __future__ import annotations

import struct

import numpy as np

KEYFRAME = 0x4B
DELTA = 0x44
HEADER = struct.Struct("<BI")


class CorruptRecord(ValueError):
    pass


def rle_encode(data: np.ndarray) -> bytes:
    data = np.asarray(data, dtype=np.uint8)
    n = data.size
    if n == 0:
        return b""
    starts = np.concatenate(([0], np.flatnonzero(data[1:] != data[:-1]) + 1))
    lengths = np.diff(np.append(starts, n))
    values = data[starts]
    chunks = (lengths + 254) // 255
    total = int(chunks.sum())
    counts = np.full(total, 255, dtype=np.int64)
    last = np.cumsum(chunks) - 1
    counts[last] = lengths - 255 * (chunks - 1)
    out = np.empty(2 * total, dtype=np.uint8)
    out[0::2] = counts
    out[1::2] = np.repeat(values, chunks)
    return out.tobytes()


def rle_decode(payload: bytes | memoryview, expected: int) -> np.ndarray:
    if len(payload) % 2:
        raise CorruptRecord("odd RLE payload length")
    pairs = np.frombuffer(payload, dtype=np.uint8).reshape(-1, 2)
    counts = pairs[:, 0]
    if counts.size and not counts.all():
        raise CorruptRecord("zero run count in RLE payload")
    if int(counts.sum(dtype=np.int64)) != expected:
        raise CorruptRecord(f"RLE payload expands to {int(counts.sum())} bytes, expected {expected}")
    return np.repeat(pairs[:, 1], counts)


def encode_record(frame: np.ndarray, previous: np.ndarray | None) -> bytes:
    if previous is None:
        flag, body = KEYFRAME, rle_encode(frame)
    else:
        flag, body = DELTA, rle_encode(frame - previous)
    return HEADER.pack(flag, len(body)) + body


def read_header(buf, offset: int) -> tuple[int, int]:
    """``(flag, payload_length)`` of the record at ``offset``."""
    if offset + HEADER.size > len(buf):
        raise CorruptRecord(f"truncated record header at byte {offset}")
    flag, length = HEADER.unpack_from(buf, offset)
    if flag not in (KEYFRAME, DELTA):
        raise CorruptRecord(f"bad flag byte 0x{flag:02x} at byte {offset}")
    if offset + HEADER.size + length > len(buf):
        raise CorruptRecord(f"record at byte {offset} overruns the payload file")
    return flag, length


class Decoder:
    """Sequential decoder owning one working frame buffer."""

    def __init__(self, frame_size: int):
        self.frame_size = frame_size
        self.buffer = np.zeros(frame_size, dtype=np.uint8)
        self.primed = False

    def reset(self):
        self.primed = False

    def feed(self, flag: int, payload) -> None:
        body = rle_decode(payload, self.frame_size)
        if flag == KEYFRAME:
            self.buffer[:] = body
            self.primed = True
        else:
            if not self.primed:
                raise CorruptRecord("delta record decoded without a preceding keyframe")
            self.buffer += body
