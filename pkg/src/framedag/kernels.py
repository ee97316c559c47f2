"""Built-in kernels and the registry that job files reference them through.

Kernels see raw byte payloads only. Inputs arrive field-major: ``fields[f]``
is the list of payloads for field ``f`` across the batch, where fields are
enumerated input slot by input slot and, within a slot, stencil offset by
offset. ``None`` stands for a spacing fill element.
"""

from __future__ import annotations

import math
import struct
from collections import deque
from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np

Payload = bytes | None
F64 = struct.Struct("<d")


class KernelError(RuntimeError):
    pass


class Kernel:
    """Base class. Subclasses override ``execute``; stateful ones also ``reset``."""

    def __init__(self, **params: Any):
        self.params = params

    def execute(self, fields: Sequence[Sequence[Payload]]) -> list[Payload]:
        raise NotImplementedError

    def reset(self) -> None:
        pass


@dataclass(frozen=True)
class KernelDecl:
    id: str
    factory: Callable[..., Kernel]
    arity: int = 1
    batched: bool = True
    bounded_state: bool = False
    accepts_fill: bool = False
    deterministic: bool = True


REGISTRY: dict[str, KernelDecl] = {}


def register(decl: KernelDecl) -> KernelDecl:
    REGISTRY[decl.id] = decl
    return decl


def make_kernel(kernel_id: str, params: dict | None = None, warmup: float | None = None) -> Kernel:
    try:
        decl = REGISTRY[kernel_id]
    except KeyError:
        raise KernelError(f"unknown kernel {kernel_id!r}") from None
    params = dict(params or {})
    if decl.bounded_state:
        params.setdefault("warmup", warmup)
    return decl.factory(**params)


def _stack(payloads: Sequence[bytes]) -> np.ndarray:
    sizes = {len(p) for p in payloads}
    if len(sizes) > 1:
        raise KernelError(f"payload sizes differ within a batch: {sorted(sizes)}")
    return np.frombuffer(b"".join(payloads), dtype=np.uint8).reshape(len(payloads), -1)


# -- pure per-element functions (also used as test oracles' reference shapes) --


def byte_histogram(frame: bytes) -> np.ndarray:
    return np.bincount(np.frombuffer(frame, dtype=np.uint8), minlength=256).astype(np.uint32)


def frame_delta_sum(a: bytes, b: bytes) -> int:
    if len(a) != len(b):
        raise KernelError(f"frame sizes differ: {len(a)} vs {len(b)}")
    d = np.frombuffer(a, dtype=np.uint8) - np.frombuffer(b, dtype=np.uint8)
    return int(np.minimum(d, 256 - d.astype(np.int64)).sum())


def decimate(frame: bytes, k: int) -> bytes:
    if k < 1:
        raise KernelError("decimation factor must be >= 1")
    n = len(frame) // k
    return frame[: n * k : k]


# -- kernel classes -----------------------------------------------------------


class ByteHistogram(Kernel):
    """256-bin byte counts, u32 little-endian."""

    def execute(self, fields):
        (frames,) = fields
        arr = _stack(frames)
        n = arr.shape[0]
        flat = (arr.astype(np.int64) + 256 * np.arange(n)[:, None]).ravel()
        counts = np.bincount(flat, minlength=256 * n).reshape(n, 256).astype("<u4")
        return [row.tobytes() for row in counts]


class FrameDeltaSum(Kernel):
    """Sum of wraparound byte distances between a frame and its successor, f64."""

    def execute(self, fields):
        if len(fields) != 2:
            raise KernelError(f"frame_delta_sum needs a two-element window, got {len(fields)} fields")
        a, b = _stack(fields[0]), _stack(fields[1])
        if a.shape != b.shape:
            raise KernelError(f"frame sizes differ: {a.shape[1]} vs {b.shape[1]}")
        d = (a - b).astype(np.int64)
        dist = np.minimum(d, 256 - d).sum(axis=1)
        return [F64.pack(float(x)) for x in dist]


class Decimate(Kernel):
    def __init__(self, k: int = 2):
        if k < 1:
            raise KernelError("decimation factor must be >= 1")
        super().__init__(k=k)
        self.k = k

    def execute(self, fields):
        (frames,) = fields
        return [decimate(f, self.k) for f in frames]


class ThresholdDetector(Kernel):
    """1 if the f64 input exceeds ``tau`` else 0, one byte per element."""

    def __init__(self, tau: float = 0.0):
        super().__init__(tau=tau)
        self.tau = float(tau)

    def execute(self, fields):
        (vals,) = fields
        x = np.frombuffer(b"".join(vals), dtype="<f8")
        return [b"\x01" if v else b"\x00" for v in (x > self.tau)]


class SlidingMean(Kernel):
    """Mean of the last ``min(i + 1, W + 1)`` inputs since the last reset, f64.

    Inputs are little-endian numbers of ``dtype``; fills count as ``fill_value``.
    The mean is recomputed from the window each time so that the result never
    depends on history older than the window.
    """

    def __init__(self, warmup: float = 1, dtype: str = "<f8", fill_value: float = 0.0):
        if warmup is None or warmup == math.inf or warmup < 0:
            raise KernelError(f"sliding_mean needs a finite warmup, got {warmup}")
        super().__init__(warmup=warmup, dtype=dtype, fill_value=fill_value)
        self.dtype = np.dtype(dtype)
        self.fill_value = float(fill_value)
        self.window: deque[float] = deque(maxlen=int(warmup) + 1)

    def reset(self):
        self.window.clear()

    def execute(self, fields):
        (vals,) = fields
        out = []
        for v in vals:
            x = self.fill_value if v is None else float(np.frombuffer(v, dtype=self.dtype)[0])
            self.window.append(x)
            out.append(F64.pack(math.fsum(self.window) / len(self.window)))
        return out


register(KernelDecl("byte_histogram", ByteHistogram))
register(KernelDecl("frame_delta_sum", FrameDeltaSum))
register(KernelDecl("decimate", Decimate))
register(KernelDecl("threshold_detector", ThresholdDetector))
register(KernelDecl("sliding_mean", SlidingMean, bounded_state=True, accepts_fill=True))


def unpack_f64(payload: bytes) -> float:
    return F64.unpack(payload)[0]
