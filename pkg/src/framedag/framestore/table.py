"""On-disk tables: one directory per table holding a JSON manifest and column files.

Layout of ``<root>/<table>/``::

    manifest.json        name, row count, column descriptors, optional row points
    <col>.frames         frame column payload (codec records)
    <col>.kfidx          keyframe index: (u64 frame, u64 byte offset) pairs
    <col>.blob           blob column records: flag (1 byte) | u32 LE length | payload
    <col>.offs           blob offset index: u64 record start per row

Blob flag ``V`` marks a value, ``F`` a spacing fill (always zero-length).
"""

from __future__ import annotations

import json
import os
import shutil
import struct
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from framedag.framestore.column import FrameColumn, ingest
from framedag.requiredset import RequiredSet

BLOB_VALUE = ord("V")
BLOB_FILL = ord("F")
BLOB_HEADER = struct.Struct("<BI")
STORE_ENV = "FRAMEDAG_STORE"


class StoreError(RuntimeError):
    pass


@dataclass
class ColumnDesc:
    name: str
    kind: str  # "frame" | "blob"
    element_size: int | None = None
    codec: dict | None = None

    def to_json(self) -> dict:
        d = {"name": self.name, "kind": self.kind}
        if self.kind == "frame":
            d["element_size"] = self.element_size
            d["codec"] = self.codec
        return d


@dataclass
class TableManifest:
    name: str
    rows: int
    columns: list[ColumnDesc] = field(default_factory=list)
    points: list[tuple[int, int]] | None = None  # domain points of each row, for sparse output tables

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise StoreError(f"table {self.name!r}: duplicate column names")

    def column(self, name: str) -> ColumnDesc:
        for c in self.columns:
            if c.name == name:
                return c
        raise StoreError(f"table {self.name!r} has no column {name!r}")

    def to_json(self) -> str:
        d = {"name": self.name, "rows": self.rows, "columns": [c.to_json() for c in self.columns]}
        if self.points is not None:
            d["points"] = [list(p) for p in self.points]
        return json.dumps(d, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> TableManifest:
        d = json.loads(text)
        cols = [ColumnDesc(c["name"], c["kind"], c.get("element_size"), c.get("codec")) for c in d["columns"]]
        pts = d.get("points")
        return cls(d["name"], d["rows"], cols, [tuple(p) for p in pts] if pts is not None else None)


def write_blob_column(path: Path, values: Iterable[bytes | None]) -> int:
    """Write records (``None`` = fill) and their offset index; returns row count."""
    offsets = []
    pos = 0
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as out:
        for v in values:
            offsets.append(pos)
            rec = BLOB_HEADER.pack(BLOB_FILL, 0) if v is None else BLOB_HEADER.pack(BLOB_VALUE, len(v)) + v
            out.write(rec)
            pos += len(rec)
    os.replace(tmp, path)
    np.asarray(offsets, dtype="<u8").tofile(path.with_suffix(".offs"))
    return len(offsets)


@dataclass(frozen=True)
class BlobColumn:
    path: Path
    count: int

    def offsets(self) -> np.ndarray:
        return np.fromfile(self.path.with_suffix(".offs"), dtype="<u8").astype(np.int64)

    def read(self, rows: RequiredSet | None = None) -> Iterator[tuple[int, bytes | None]]:
        data = self.path.read_bytes()
        offs = self.offsets()
        if len(offs) != self.count:
            raise StoreError(f"{self.path}: offset index has {len(offs)} rows, manifest says {self.count}")
        it = rows if rows is not None else range(self.count)
        for r in it:
            flag, n = BLOB_HEADER.unpack_from(data, int(offs[r]))
            if flag == BLOB_FILL:
                yield r, None
            elif flag == BLOB_VALUE:
                at = int(offs[r]) + BLOB_HEADER.size
                yield r, data[at : at + n]
            else:
                raise StoreError(f"{self.path}: bad blob flag 0x{flag:02x} at row {r}")


class Table:
    def __init__(self, path: Path, manifest: TableManifest):
        self.path = path
        self.manifest = manifest

    @property
    def name(self) -> str:
        return self.manifest.name

    @property
    def rows(self) -> int:
        return self.manifest.rows

    def column(self, name: str) -> FrameColumn | BlobColumn:
        desc = self.manifest.column(name)
        if desc.kind == "frame":
            codec = desc.codec or {}
            return FrameColumn.open(
                self.path / f"{name}.frames", desc.element_size, self.rows, codec.get("keyframe_interval")
            )
        return BlobColumn(self.path / f"{name}.blob", self.rows)

    def point_rows(self) -> RequiredSet:
        """Domain points stored in this table, one per row in order."""
        if self.manifest.points is None:
            return RequiredSet.span(0, self.rows)
        return RequiredSet(self.manifest.points)


class Store:
    """A directory of tables."""

    def __init__(self, root: Path | str | None = None):
        self.root = Path(root if root is not None else os.environ.get(STORE_ENV, "store"))
        self.root.mkdir(parents=True, exist_ok=True)

    def table_path(self, name: str) -> Path:
        if not name or "/" in name or name.startswith("."):
            raise StoreError(f"invalid table name {name!r}")
        return self.root / name

    def tables(self) -> list[str]:
        return sorted(p.name for p in self.root.iterdir() if (p / "manifest.json").exists())

    def exists(self, name: str) -> bool:
        return (self.table_path(name) / "manifest.json").exists()

    def open(self, name: str) -> Table:
        path = self.table_path(name)
        try:
            manifest = TableManifest.from_json((path / "manifest.json").read_text())
        except FileNotFoundError:
            raise StoreError(f"no table named {name!r} in {self.root}") from None
        return Table(path, manifest)

    def drop(self, name: str):
        shutil.rmtree(self.table_path(name), ignore_errors=True)

    def ingest_frames(
        self,
        table: str,
        column: str,
        frames: Iterable[bytes | np.ndarray],
        keyframe_interval: int | None,
        keyframes: Sequence[int] | None = None,
    ) -> Table:
        """Create (or replace) ``table`` with a single frame column."""
        path = self.table_path(table)
        staging = path.with_name(path.name + ".ingest")
        shutil.rmtree(staging, ignore_errors=True)
        staging.mkdir(parents=True)
        col = ingest(frames, staging / f"{column}.frames", keyframe_interval, keyframes)
        desc = ColumnDesc(
            column, "frame", col.frame_size, {"name": "rle-delta", "keyframe_interval": col.keyframe_interval}
        )
        manifest = TableManifest(table, col.count, [desc])
        (staging / "manifest.json").write_text(manifest.to_json())
        self._swap_in(staging, path)
        return self.open(table)

    def add_frame_column(self, table: str, column: FrameColumn, name: str):
        """Register an already-written frame column (e.g. a re-encode) in a new table."""
        path = self.table_path(table)
        path.mkdir(parents=True, exist_ok=True)
        for src, suffix in ((column.path, ".frames"), (column.index_path, ".kfidx")):
            dst = path / f"{name}{suffix}"
            if Path(src).resolve() != dst.resolve():
                shutil.move(str(src), dst)
        desc = ColumnDesc(
            name, "frame", column.frame_size, {"name": "rle-delta", "keyframe_interval": column.keyframe_interval}
        )
        (path / "manifest.json").write_text(TableManifest(table, column.count, [desc]).to_json())
        return self.open(table)

    @staticmethod
    def _swap_in(staging: Path, path: Path):
        old = path.with_name(path.name + ".old")
        shutil.rmtree(old, ignore_errors=True)
        if path.exists():
            os.replace(path, old)
        os.replace(staging, path)
        shutil.rmtree(old, ignore_errors=True)

    def writer(self, table: str, columns: Sequence[str]) -> TableWriter:
        return TableWriter(self, table, list(columns))


class TableWriter:
    """Collects per-packet row batches and publishes them as one table.

    Each packet commit is atomic (staged file + rename) and serialized by a
    table-level lock. ``finalize`` concatenates committed packets in packet
    order, so the table bytes do not depend on commit order.
    """

    def __init__(self, store: Store, table: str, columns: list[str]):
        self.store = store
        self.table = table
        self.columns = columns
        self.path = store.table_path(table)
        self.staging = self.path.with_name(self.path.name + ".staging")
        shutil.rmtree(self.staging, ignore_errors=True)
        self.staging.mkdir(parents=True)
        self._lock = threading.Lock()
        self.committed: dict[int, tuple[int, int]] = {}

    def commit(self, packet: int, points: RequiredSet, rows: dict[str, list[bytes | None]]) -> bool:
        """Stage one packet's rows. Returns False if the packet was already committed."""
        for col in self.columns:
            if len(rows[col]) != len(points):
                raise StoreError(f"packet {packet}: column {col!r} has {len(rows[col])} rows for {len(points)} points")
        with self._lock:
            if packet in self.committed:
                return False
            tmp = self.staging / f"packet_{packet:08d}.tmp"
            with open(tmp, "wb") as out:
                head = {"points": points.intervals, "columns": self.columns}
                meta = json.dumps(head).encode()
                out.write(struct.pack("<I", len(meta)) + meta)
                for col in self.columns:
                    for v in rows[col]:
                        rec = BLOB_HEADER.pack(BLOB_FILL, 0) if v is None else BLOB_HEADER.pack(BLOB_VALUE, len(v)) + v
                        out.write(rec)
            os.replace(tmp, self.staging / f"packet_{packet:08d}.bin")
            self.committed[packet] = (points.first, len(points))
            return True

    def _load_packet(self, packet: int) -> tuple[RequiredSet, dict[str, list[bytes | None]]]:
        data = (self.staging / f"packet_{packet:08d}.bin").read_bytes()
        (n,) = struct.unpack_from("<I", data, 0)
        head = json.loads(data[4 : 4 + n])
        points = RequiredSet(head["points"])
        pos = 4 + n
        rows: dict[str, list[bytes | None]] = {}
        for col in head["columns"]:
            vals = []
            for _ in range(len(points)):
                flag, ln = BLOB_HEADER.unpack_from(data, pos)
                pos += BLOB_HEADER.size
                vals.append(None if flag == BLOB_FILL else data[pos : pos + ln])
                pos += ln
            rows[col] = vals
        return points, rows

    def finalize(self, expected_packets: int) -> Table:
        with self._lock:
            missing = sorted(set(range(expected_packets)) - set(self.committed))
            if missing:
                raise StoreError(f"table {self.table!r}: packets {missing[:8]} never committed")
            order = sorted(self.committed, key=lambda p: self.committed[p][0])
            loaded = [self._load_packet(p) for p in order]
            points = RequiredSet().union(*(pts for pts, _ in loaded))
            out = self.path.with_name(self.path.name + ".final")
            shutil.rmtree(out, ignore_errors=True)
            out.mkdir(parents=True)
            for col in self.columns:
                write_blob_column(out / f"{col}.blob", (v for _, rows in loaded for v in rows[col]))
            dense = points == RequiredSet.span(0, len(points))
            manifest = TableManifest(
                self.table,
                len(points),
                [ColumnDesc(c, "blob") for c in self.columns],
                None if dense else points.intervals,
            )
            (out / "manifest.json").write_text(manifest.to_json())
            Store._swap_in(out, self.path)
            shutil.rmtree(self.staging, ignore_errors=True)
            return self.store.open(self.table)
