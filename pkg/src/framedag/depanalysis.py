"""Backward per-element liveness: which points of every sequence a request needs."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Mapping

import numpy as np

from framedag.graph import (
    INFINITE,
    BoundedState,
    GraphSpec,
    Map,
    OpDecl,
    Sample,
    SequenceDomain,
    Slice,
    Space,
    Stencil,
    Strategy,
    Unslice,
)
from framedag.requiredset import RequiredSet


class DependencyError(ValueError):
    pass


@lru_cache(maxsize=256)
def _selected(strategy: Strategy, n: int) -> np.ndarray:
    sel = strategy.indices(n)
    sel.setflags(write=False)
    return sel


def _slice_pieces(req: RequiredSet, domain: SequenceDomain):
    """Yield ``(run_start, run_end, slice_start, slice_end)`` for each run cut at slice boundaries."""
    for run in req.runs():
        a, b = run.start, run.stop
        while a < b:
            ss, se = domain.slice_of(a)
            hi = min(b, se)
            yield a, hi, ss, se
            a = hi


def stencil_footprint(offsets, req: RequiredSet, domain: SequenceDomain, strict: bool = False) -> RequiredSet:
    out = []
    for a, b, ss, se in _slice_pieces(req, domain):
        if strict and (a + offsets[0] < ss or b - 1 + offsets[-1] >= se):
            raise DependencyError(f"stencil access outside slice [{ss}, {se}) for points [{a}, {b})")
        for o in offsets:
            lo = min(max(a + o, ss), se - 1)
            hi = min(max(b - 1 + o, ss), se - 1)
            out.append((lo, hi + 1))
    return RequiredSet(out)


def warmup_footprint(warmup: float, req: RequiredSet, domain: SequenceDomain) -> RequiredSet:
    """Points a bounded-state op must be invoked on to produce ``req``: ``i-W..i`` clamped to the slice."""
    out = []
    for a, b, ss, _ in _slice_pieces(req, domain):
        lo = ss if warmup == INFINITE else max(a - int(warmup), ss)
        out.append((lo, b))
    return RequiredSet(out)


def invocations(op: OpDecl, downstream: RequiredSet, domain: SequenceDomain) -> RequiredSet:
    """Output points ``op`` must actually produce to deliver ``downstream`` (adds warmup)."""
    if isinstance(op.kind, BoundedState):
        return warmup_footprint(op.kind.warmup, downstream, domain)
    return downstream


def required_upstream(
    op: OpDecl,
    downstream: RequiredSet,
    in_domains: list[SequenceDomain],
    out_domain: SequenceDomain,
) -> list[RequiredSet]:
    """Required points on each input of ``op`` given the points needed from its output."""
    kind = op.kind
    if not downstream:
        return [RequiredSet() for _ in in_domains]
    if not downstream.within(out_domain.length):
        raise DependencyError(f"{op.name}: requested points outside [0, {out_domain.length})")
    if isinstance(kind, (Map, Slice, Unslice)):
        return [downstream for _ in in_domains]
    if isinstance(kind, Stencil):
        fp = stencil_footprint(kind.offsets, downstream, out_domain, kind.strict)
        return [fp for _ in in_domains]
    if isinstance(kind, BoundedState):
        fp = warmup_footprint(kind.warmup, downstream, out_domain)
        return [fp for _ in in_domains]
    if isinstance(kind, Sample):
        sel = _selected(kind.strategy, in_domains[0].length)
        return [RequiredSet.from_points(sel[downstream.points()])]
    if isinstance(kind, Space):
        sel = _selected(kind.strategy, out_domain.length)
        pts = downstream.points()
        k = np.searchsorted(sel, pts)
        k_ok = k < len(sel)
        hit = k[k_ok][sel[k[k_ok]] == pts[k_ok]]
        return [RequiredSet.from_points(hit)]
    raise DependencyError(f"{op.name}: cannot analyse op kind {kind!r}")


@dataclass
class Liveness:
    """Per-node results of one backward pass.

    ``required`` holds, for every node, the points its consumers read.
    ``computed`` holds, for every op, the points it produces (``required``
    plus bounded-state warmup).
    """

    required: dict[str, RequiredSet]
    computed: dict[str, RequiredSet]

    def warmup(self, op: str) -> int:
        return len(self.computed[op]) - len(self.required[op])

    @property
    def elements_computed(self) -> int:
        return sum(len(s) for s in self.computed.values())


class DependencyAnalyzer:
    """Backward analysis bound to one job's graph and domains; reused across packets."""

    def __init__(self, graph: GraphSpec, domains: Mapping[str, SequenceDomain]):
        self.graph = graph
        self.domains = dict(domains)
        self.ops = graph.op_map
        self.order = graph.topo_order()
        self.inputs = {name: graph.inputs_of(name) for name in self.order}

    def run(self, requested: RequiredSet | Mapping[str, RequiredSet]) -> Liveness:
        required: dict[str, RequiredSet] = {n: RequiredSet() for n in self.domains}
        if isinstance(requested, RequiredSet):
            for node in self.graph.outputs.values():
                required[node] = required[node] | requested
        else:
            for node, pts in requested.items():
                required[node] = required[node] | pts
        computed: dict[str, RequiredSet] = {}
        for name in reversed(self.order):
            op = self.ops[name]
            srcs = self.inputs[name]
            down = required[name]
            computed[name] = invocations(op, down, self.domains[name])
            ups = required_upstream(op, down, [self.domains[s] for s in srcs], self.domains[name])
            for src, up in zip(srcs, ups):
                required[src] = required[src] | up
        return Liveness(required, computed)


def back_propagate(
    graph: GraphSpec, requested: RequiredSet, domains: Mapping[str, SequenceDomain]
) -> dict[str, RequiredSet]:
    """Required points on every sequence of ``graph`` for the requested output points."""
    return DependencyAnalyzer(graph, domains).run(requested).required


def coalesce_batches(required: RequiredSet, batch: int, split_runs: bool = False) -> list[RequiredSet]:
    """Pack required points in order into dense batches of at most ``batch`` points.

    With ``split_runs`` a batch never spans a gap, which bounded-state ops
    need so that state is reset exactly at run starts.
    """
    if batch < 1:
        raise ValueError("batch size must be >= 1")
    if split_runs:
        out = []
        for run in required.runs():
            for s in range(run.start, run.stop, batch):
                out.append(RequiredSet.span(s, min(s + batch, run.stop)))
        return out
    pts = required.points()
    return [RequiredSet.from_points(pts[i : i + batch]) for i in range(0, len(pts), batch)]
