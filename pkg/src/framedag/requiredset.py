"""Sorted, disjoint half-open interval sets over a sequence domain."""

from __future__ import annotations

from bisect import bisect_right
from typing import Iterable, Iterator, Sequence

import numpy as np


class RequiredSet:
    """An exact set of sequence points, run-length encoded as ``[start, end)`` intervals.

    Instances are immutable. Intervals are kept sorted, disjoint and
    non-adjacent (touching runs are merged), so two sets with the same points
    always compare equal.
    """

    __slots__ = ("_starts", "_ends", "_size")

    def __init__(self, intervals: Iterable[tuple[int, int]] = ()):
        runs = sorted((int(s), int(e)) for s, e in intervals if e > s)
        starts: list[int] = []
        ends: list[int] = []
        for s, e in runs:
            if s < 0:
                raise ValueError(f"negative point in interval [{s}, {e})")
            if ends and s <= ends[-1]:
                if e > ends[-1]:
                    ends[-1] = e
            else:
                starts.append(s)
                ends.append(e)
        self._starts = tuple(starts)
        self._ends = tuple(ends)
        self._size = sum(e - s for s, e in zip(starts, ends))

    # -- construction -------------------------------------------------------

    @classmethod
    def empty(cls) -> RequiredSet:
        return cls()

    @classmethod
    def span(cls, start: int, end: int) -> RequiredSet:
        return cls([(start, end)])

    @classmethod
    def from_points(cls, points: Iterable[int] | np.ndarray) -> RequiredSet:
        arr = np.unique(np.asarray(list(points) if not isinstance(points, np.ndarray) else points, dtype=np.int64))
        if arr.size == 0:
            return cls()
        breaks = np.flatnonzero(np.diff(arr) != 1) + 1
        starts = np.concatenate(([arr[0]], arr[breaks]))
        ends = np.concatenate((arr[breaks - 1], [arr[-1]])) + 1
        return cls(zip(starts.tolist(), ends.tolist()))

    # -- queries ------------------------------------------------------------

    @property
    def intervals(self) -> list[tuple[int, int]]:
        return list(zip(self._starts, self._ends))

    def __len__(self) -> int:
        return self._size

    def __bool__(self) -> bool:
        return self._size > 0

    def __iter__(self) -> Iterator[int]:
        for s, e in zip(self._starts, self._ends):
            yield from range(s, e)

    def __contains__(self, point: object) -> bool:
        if not isinstance(point, (int, np.integer)):
            return False
        k = bisect_right(self._starts, int(point)) - 1
        return k >= 0 and point < self._ends[k]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RequiredSet):
            return NotImplemented
        return self._starts == other._starts and self._ends == other._ends

    def __hash__(self) -> int:
        return hash((self._starts, self._ends))

    def __repr__(self) -> str:
        body = ", ".join(f"[{s},{e})" for s, e in zip(self._starts, self._ends))
        return f"RequiredSet({body})"

    def points(self) -> np.ndarray:
        if not self._starts:
            return np.zeros(0, dtype=np.int64)
        return np.concatenate([np.arange(s, e, dtype=np.int64) for s, e in zip(self._starts, self._ends)])

    @property
    def first(self) -> int:
        if not self:
            raise ValueError("empty RequiredSet has no first point")
        return self._starts[0]

    @property
    def last(self) -> int:
        if not self:
            raise ValueError("empty RequiredSet has no last point")
        return self._ends[-1] - 1

    def bounds(self) -> tuple[int, int]:
        """Smallest ``[start, end)`` covering every point."""
        return (self.first, self.last + 1)

    def issubset(self, other: RequiredSet) -> bool:
        return not self.difference(other)

    def within(self, length: int) -> bool:
        return not self or (self.first >= 0 and self.last < length)

    # -- algebra ------------------------------------------------------------

    def union(self, *others: RequiredSet) -> RequiredSet:
        runs = self.intervals
        for o in others:
            runs.extend(o.intervals)
        return RequiredSet(runs)

    __or__ = union

    def intersection(self, other: RequiredSet) -> RequiredSet:
        out = []
        a, b = self.intervals, other.intervals
        i = j = 0
        while i < len(a) and j < len(b):
            s = max(a[i][0], b[j][0])
            e = min(a[i][1], b[j][1])
            if s < e:
                out.append((s, e))
            if a[i][1] < b[j][1]:
                i += 1
            else:
                j += 1
        return RequiredSet(out)

    __and__ = intersection

    def difference(self, other: RequiredSet) -> RequiredSet:
        out = []
        b = other.intervals
        j = 0
        for s, e in self.intervals:
            cur = s
            while j < len(b) and b[j][1] <= cur:
                j += 1
            k = j
            while k < len(b) and b[k][0] < e:
                if b[k][0] > cur:
                    out.append((cur, b[k][0]))
                cur = max(cur, b[k][1])
                k += 1
            if cur < e:
                out.append((cur, e))
        return RequiredSet(out)

    __sub__ = difference

    def translate(self, offset: int) -> RequiredSet:
        """Shift every point by ``offset``; points that would go negative are dropped."""
        return RequiredSet((max(s + offset, 0), e + offset) for s, e in self.intervals if e + offset > 0)

    def clip(self, start: int, end: int) -> RequiredSet:
        return self.intersection(RequiredSet.span(start, end))

    def runs(self) -> Iterator[range]:
        """Maximal contiguous runs as ranges."""
        for s, e in zip(self._starts, self._ends):
            yield range(s, e)

    def split_at(self, boundaries: Sequence[int]) -> list[RequiredSet]:
        """Partition the set at sorted cut points, dropping empty pieces."""
        if not self:
            return []
        edges = [0, *(b for b in boundaries if b > 0), self.last + 1]
        pieces = (self.clip(lo, hi) for lo, hi in zip(edges, edges[1:]))
        return [p for p in pieces if p]

    def to_text(self) -> str:
        return " ".join(f"[{s},{e})" for s, e in zip(self._starts, self._ends)) or "{}"
