"""Access-pattern benchmark over alternative encodings of one frame column.

Reports decode work (frames decoded/emitted, bytes read) per pattern and
encoding; wall time is informational only.
"""

from __future__ import annotations

import csv
import io
import math
import shutil
import time
from dataclasses import astuple, dataclass, fields

import numpy as np

from framedag.framestore.column import DecodeStats, FrameColumn, FrameReader, plan_decode, reencode
from framedag.framestore.table import Store
from framedag.graph import Stride
from framedag.requiredset import RequiredSet

PATTERNS = ("stride-1", "stride-24", "gather", "range", "keyframe")
GATHER_FRACTION = 0.0025
RANGE_BLOCK = 2000
RANGE_SPACING = 20000


@dataclass
class BenchResult:
    pattern: str
    K: int | None
    frames_decoded: int
    frames_emitted: int
    bytes_read: int
    ms: float


def pattern_points(pattern: str, column: FrameColumn, seed: int = 0) -> RequiredSet:
    n = column.count
    if pattern.startswith("stride-"):
        return RequiredSet.from_points(np.arange(0, n, int(pattern.split("-", 1)[1])))
    if pattern == "gather":
        k = max(1, math.ceil(GATHER_FRACTION * n))
        rng = np.random.default_rng(seed)
        return RequiredSet.from_points(rng.choice(n, size=k, replace=False))
    if pattern == "range":
        return RequiredSet((s, min(s + RANGE_BLOCK, n)) for s in range(0, n, RANGE_SPACING))
    if pattern == "keyframe":
        return RequiredSet.from_points(column.keyframes)
    raise ValueError(f"unknown access pattern {pattern!r}")


def measure(column: FrameColumn, points: RequiredSet, pattern: str) -> BenchResult:
    stats = DecodeStats()
    t0 = time.perf_counter()
    with FrameReader(column, stats) as reader:
        for _ in reader.read(plan_decode(column, points)):
            pass
    ms = (time.perf_counter() - t0) * 1000
    return BenchResult(pattern, column.keyframe_interval, stats.frames_decoded, stats.frames_emitted, stats.bytes_read, ms)


def _encoding(store: Store, table: str, column: str, suffix: str, build) -> FrameColumn:
    # rebuilt every run so a re-ingested base table never meets a stale encoding
    name = f"{table}__{suffix}"
    scratch = store.table_path(name).with_name(name + ".build")
    shutil.rmtree(scratch, ignore_errors=True)
    col = build(scratch / f"{column}.frames")
    store.drop(name)
    store.add_frame_column(name, col, column)
    shutil.rmtree(scratch, ignore_errors=True)
    return store.open(name).column(column)


def bench_access(
    store: Store,
    table: str,
    column: str,
    patterns: tuple[str, ...] = PATTERNS,
    smallgop: int | None = 24,
    strided: bool = True,
    seed: int = 0,
) -> list[BenchResult]:
    """One row per (pattern, encoding): the base column, a short-GOP re-encode, and strided re-encodes."""
    base = store.open(table).column(column)
    if not isinstance(base, FrameColumn):
        raise ValueError(f"{table}.{column} is not a frame column")
    encodings = [base]
    if smallgop:
        encodings.append(_encoding(store, table, column, f"gop{smallgop}", lambda p: reencode(base, p, smallgop)))
    rows = []
    for pattern in patterns:
        for col in encodings:
            rows.append(measure(col, pattern_points(pattern, col, seed), pattern))
        if strided and pattern.startswith("stride-") and pattern != "stride-1":
            s = int(pattern.split("-", 1)[1])
            k = base.keyframe_interval or smallgop or 1
            enc = _encoding(store, table, column, f"strided{s}", lambda p: reencode(base, p, k, Stride(s)))
            rows.append(measure(enc, RequiredSet.span(0, enc.count), f"{pattern}:strided"))
    return rows


def to_csv(rows: list[BenchResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f.name for f in fields(BenchResult)])
    for r in rows:
        vals = list(astuple(r))
        vals[1] = "" if vals[1] is None else vals[1]
        vals[-1] = f"{vals[-1]:.3f}"
        w.writerow(vals)
    return buf.getvalue()
