from framedag.framestore.codec import CorruptRecord
from framedag.framestore.column import (
    DecodePlan,
    DecodeSpan,
    DecodeStats,
    FrameColumn,
    FrameReader,
    IndexMismatch,
    KeyframeIndex,
    ingest,
    plan_decode,
    read_decode,
    reencode,
)
from framedag.framestore.table import BlobColumn, ColumnDesc, Store, StoreError, Table, TableManifest, TableWriter

__all__ = [
    "BlobColumn",
    "ColumnDesc",
    "CorruptRecord",
    "DecodePlan",
    "DecodeSpan",
    "DecodeStats",
    "FrameColumn",
    "FrameReader",
    "IndexMismatch",
    "KeyframeIndex",
    "Store",
    "StoreError",
    "Table",
    "TableManifest",
    "TableWriter",
    "ingest",
    "plan_decode",
    "read_decode",
    "reencode",
]
