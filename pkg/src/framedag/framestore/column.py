"""Frame columns: encoded payload file, keyframe index, sparse decode planning."""

from __future__ import annotations

import mmap
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from framedag.framestore.codec import HEADER, KEYFRAME, CorruptRecord, Decoder, encode_record, read_header
from framedag.requiredset import RequiredSet

INDEX_DTYPE = np.dtype([("frame", "<u8"), ("offset", "<u8")])


class IndexMismatch(CorruptRecord):
    pass


@dataclass(frozen=True)
class KeyframeIndex:
    frames: np.ndarray
    offsets: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.frames, dtype=np.int64)
        o = np.asarray(self.offsets, dtype=np.int64)
        if f.size == 0 or f[0] != 0:
            raise IndexMismatch("keyframe index must contain frame 0")
        if f.shape != o.shape or np.any(np.diff(f) <= 0) or np.any(np.diff(o) <= 0):
            raise IndexMismatch("keyframe index entries must be strictly increasing")
        object.__setattr__(self, "frames", f)
        object.__setattr__(self, "offsets", o)

    def __len__(self):
        return len(self.frames)

    def preceding(self, points: np.ndarray) -> np.ndarray:
        """Index into the keyframe table of the last keyframe at or before each point."""
        return np.searchsorted(self.frames, points, side="right") - 1

    def save(self, path: Path):
        rec = np.empty(len(self.frames), dtype=INDEX_DTYPE)
        rec["frame"] = self.frames
        rec["offset"] = self.offsets
        path.write_bytes(rec.tobytes())

    @classmethod
    def load(cls, path: Path) -> KeyframeIndex:
        rec = np.frombuffer(path.read_bytes(), dtype=INDEX_DTYPE)
        return cls(rec["frame"].astype(np.int64), rec["offset"].astype(np.int64))


@dataclass(frozen=True)
class FrameColumn:
    path: Path  # payload file; the index lives next to it with suffix .kfidx
    index: KeyframeIndex
    frame_size: int
    count: int
    keyframe_interval: int | None = None

    @property
    def index_path(self) -> Path:
        return self.path.with_suffix(".kfidx")

    @property
    def keyframes(self) -> np.ndarray:
        return self.index.frames

    @classmethod
    def open(cls, path: Path, frame_size: int, count: int, keyframe_interval: int | None = None) -> FrameColumn:
        path = Path(path)
        return cls(path, KeyframeIndex.load(path.with_suffix(".kfidx")), frame_size, count, keyframe_interval)

    def nbytes(self) -> int:
        return self.path.stat().st_size


def ingest(
    frames: Iterable[bytes | np.ndarray],
    path: Path,
    keyframe_interval: int | None,
    keyframes: Iterable[int] | None = None,
) -> FrameColumn:
    """Encode ``frames`` into a payload file at ``path`` and write its keyframe index.

    Frame ``i`` is a keyframe iff ``i % keyframe_interval == 0``, or, when an
    explicit ``keyframes`` layout is given, iff ``i`` is in it (frame 0 always is).
    """
    if keyframes is None:
        if keyframe_interval is None or keyframe_interval < 1:
            raise ValueError(f"keyframe interval must be >= 1, got {keyframe_interval}")
        forced: set[int] | None = None
    else:
        forced = {0, *(int(k) for k in keyframes)}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    kf_frames, kf_offsets = [], []
    frame_size = None
    previous = None
    offset = 0
    count = 0
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as out:
        for i, frame in enumerate(frames):
            arr = np.frombuffer(frame, dtype=np.uint8) if isinstance(frame, (bytes, bytearray, memoryview)) else np.asarray(frame, dtype=np.uint8).ravel()
            if frame_size is None:
                frame_size = arr.size
            elif arr.size != frame_size:
                raise ValueError(f"frame {i} has {arr.size} bytes, expected {frame_size}")
            is_key = (i in forced) if forced is not None else i % keyframe_interval == 0
            if is_key:
                kf_frames.append(i)
                kf_offsets.append(offset)
            rec = encode_record(arr, None if is_key else previous)
            out.write(rec)
            offset += len(rec)
            previous = arr
            count += 1
    if count == 0:
        tmp.unlink()
        raise ValueError("cannot ingest an empty frame sequence")
    if forced is not None and max(forced) >= count:
        tmp.unlink()
        raise ValueError(f"forced keyframe {max(forced)} beyond last frame {count - 1}")
    os.replace(tmp, path)
    index = KeyframeIndex(np.array(kf_frames), np.array(kf_offsets))
    index.save(path.with_suffix(".kfidx"))
    return FrameColumn(path, index, frame_size, count, keyframe_interval if forced is None else None)


# -- decode planning ----------------------------------------------------------


@dataclass(frozen=True)
class DecodeSpan:
    keyframe: int  # position in the keyframe index
    start: int  # first decoded frame (the keyframe's frame number)
    end: int  # last decoded frame, inclusive
    emit: tuple[int, ...]

    @property
    def frames_decoded(self) -> int:
        return self.end - self.start + 1


@dataclass(frozen=True)
class DecodePlan:
    spans: tuple[DecodeSpan, ...]

    @property
    def frames_decoded(self) -> int:
        return sum(s.frames_decoded for s in self.spans)

    @property
    def frames_emitted(self) -> int:
        return sum(len(s.emit) for s in self.spans)


def plan_decode(column: FrameColumn, required: RequiredSet) -> DecodePlan:
    """Group required frames into keyframe-anchored spans.

    Decoding continues through an unrequired gap unless seeking to the
    keyframe preceding the next required frame decodes strictly fewer frames.
    """
    pts = required.points()
    if pts.size == 0:
        return DecodePlan(())
    if pts[0] < 0 or pts[-1] >= column.count:
        raise IndexError(f"frame index outside [0, {column.count})")
    kf_pos = column.index.preceding(pts)
    kf_frame = column.index.frames[kf_pos]
    # continuing from the previous required frame costs pts[j] - pts[j-1];
    # seeking costs pts[j] - kf + 1, strictly cheaper iff kf > pts[j-1] + 1
    breaks = np.flatnonzero(kf_frame[1:] > pts[:-1] + 1) + 1
    bounds = np.concatenate(([0], breaks, [pts.size]))
    spans = []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        spans.append(
            DecodeSpan(int(kf_pos[lo]), int(kf_frame[lo]), int(pts[hi - 1]), tuple(pts[lo:hi].tolist()))
        )
    return DecodePlan(tuple(spans))


@dataclass
class DecodeStats:
    frames_decoded: int = 0
    frames_emitted: int = 0
    bytes_read: int = 0

    def add(self, other: DecodeStats):
        self.frames_decoded += other.frames_decoded
        self.frames_emitted += other.frames_emitted
        self.bytes_read += other.bytes_read


@dataclass
class FrameReader:
    """Private decoder state for one column; reusable across many plans."""

    column: FrameColumn
    stats: DecodeStats = field(default_factory=DecodeStats)

    def __post_init__(self):
        self._decoder = Decoder(self.column.frame_size)
        self._file = open(self.column.path, "rb")
        self._buf = mmap.mmap(self._file.fileno(), 0, access=mmap.ACCESS_READ)

    def close(self):
        self._buf.close()
        self._file.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def read(self, plan: DecodePlan) -> Iterator[tuple[int, bytes]]:
        buf = self._buf
        dec = self._decoder
        index = self.column.index
        for span in plan.spans:
            if index.frames[span.keyframe] != span.start:
                raise IndexMismatch(f"span start {span.start} is not keyframe #{span.keyframe}")
            offset = int(index.offsets[span.keyframe])
            flag, _ = read_header(buf, offset)
            if flag != KEYFRAME:
                raise IndexMismatch(f"index offset {offset} for frame {span.start} is not a keyframe record")
            dec.reset()
            emit = span.emit
            k = 0
            for frame in range(span.start, span.end + 1):
                flag, length = read_header(buf, offset)
                body_at = offset + HEADER.size
                dec.feed(flag, memoryview(buf)[body_at : body_at + length])
                offset = body_at + length
                self.stats.frames_decoded += 1
                self.stats.bytes_read += HEADER.size + length
                if k < len(emit) and emit[k] == frame:
                    self.stats.frames_emitted += 1
                    k += 1
                    yield frame, dec.buffer.tobytes()
            if k != len(emit):
                raise CorruptRecord(f"span {span} emitted {k} of {len(emit)} frames")


def read_decode(column: FrameColumn, plan: DecodePlan, stats: DecodeStats | None = None) -> Iterator[tuple[int, bytes]]:
    """Yield ``(frame_index, payload)`` for the emit frames of ``plan`` in order."""
    reader = FrameReader(column, stats if stats is not None else DecodeStats())
    try:
        yield from reader.read(plan)
    finally:
        reader.close()


def reencode(
    column: FrameColumn,
    path: Path,
    keyframe_interval: int | None = None,
    strategy=None,
) -> FrameColumn:
    """Write a new encoding of ``column`` with a new keyframe interval and/or only the sampled frames."""
    k = keyframe_interval or column.keyframe_interval
    if k is None:
        raise ValueError("keyframe interval required to re-encode an irregular column")
    pts = RequiredSet.span(0, column.count)
    if strategy is not None:
        pts = RequiredSet.from_points(strategy.indices(column.count))
    frames = (payload for _, payload in read_decode(column, plan_decode(column, pts)))
    return ingest(frames, path, k)
