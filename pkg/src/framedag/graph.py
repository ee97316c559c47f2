"""Computation graphs over frame sequences: op kinds, validation and domain inference.

A graph is a DAG whose nodes are either *sources* (table columns bound by a
job) or *ops*. Every node produces exactly one sequence; edges connect a
producer node to an input slot of a consumer op. Sequences are keyed by the
name of the node that produces them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence, Union

import numpy as np

from framedag.requiredset import RequiredSet

INFINITE = math.inf


class GraphError(ValueError):
    """Raised when a graph or job cannot be interpreted (bad lengths, bad indices, bad spec)."""


# -- sequence domains ---------------------------------------------------------


@dataclass(frozen=True)
class SequenceDomain:
    length: int
    slice_boundaries: tuple[int, ...] = ()

    def __post_init__(self):
        if self.length < 0:
            raise GraphError(f"negative sequence length {self.length}")
        b = self.slice_boundaries
        if b:
            if b[0] != 0:
                raise GraphError("first slice boundary must be 0")
            if any(y <= x for x, y in zip(b, b[1:])):
                raise GraphError(f"slice boundaries not strictly increasing: {b}")
            if b[-1] >= max(self.length, 1):
                raise GraphError(f"slice boundary {b[-1]} outside [0, {self.length})")

    @property
    def sliced(self) -> bool:
        return len(self.slice_boundaries) > 1

    def slice_starts(self) -> tuple[int, ...]:
        return self.slice_boundaries or ((0,) if self.length else ())

    def slice_of(self, point: int) -> tuple[int, int]:
        """``[start, end)`` of the slice enclosing ``point``."""
        starts = self.slice_starts()
        k = int(np.searchsorted(starts, point, side="right")) - 1
        end = starts[k + 1] if k + 1 < len(starts) else self.length
        return starts[k], end

    def slices(self) -> list[tuple[int, int]]:
        starts = self.slice_starts()
        return [(s, e) for s, e in zip(starts, [*starts[1:], self.length])]

    def full(self) -> RequiredSet:
        return RequiredSet.span(0, self.length)


def _boundaries(points: Sequence[int] | np.ndarray, length: int) -> tuple[int, ...]:
    if length == 0:
        return ()
    pts = sorted({0, *(int(p) for p in points if 0 <= p < length)})
    return tuple(pts) if len(pts) > 1 else ()


# -- sampling strategies ------------------------------------------------------


@dataclass(frozen=True)
class Stride:
    step: int

    def __post_init__(self):
        if self.step < 1:
            raise GraphError(f"stride must be >= 1, got {self.step}")

    def indices(self, n: int) -> np.ndarray:
        return np.arange(0, n, self.step, dtype=np.int64)

    def dense_length(self, m: int) -> int:
        return m * self.step


@dataclass(frozen=True)
class Range:
    start: int
    end: int
    step: int = 1

    def __post_init__(self):
        if self.step < 1 or self.start < 0 or self.end < self.start:
            raise GraphError(f"invalid range({self.start}, {self.end}, {self.step})")

    def indices(self, n: int) -> np.ndarray:
        if self.end > n:
            raise GraphError(f"range end {self.end} exceeds sequence length {n}")
        return np.arange(self.start, self.end, self.step, dtype=np.int64)

    def dense_length(self, m: int) -> int:
        return self.end


@dataclass(frozen=True)
class Gather:
    points: tuple[int, ...]

    def __post_init__(self):
        pts = tuple(int(p) for p in self.points)
        object.__setattr__(self, "points", pts)
        if any(p < 0 for p in pts):
            raise GraphError("gather index list has negative entries")
        if any(b <= a for a, b in zip(pts, pts[1:])):
            raise GraphError("gather index list must be strictly increasing")

    def indices(self, n: int) -> np.ndarray:
        if self.points and self.points[-1] >= n:
            raise GraphError(f"gather index {self.points[-1]} out of range for length {n}")
        return np.asarray(self.points, dtype=np.int64)

    def dense_length(self, m: int) -> int:
        return self.points[-1] + 1 if self.points else 0


Strategy = Union[Stride, Range, Gather]


# -- op kinds -----------------------------------------------------------------


@dataclass(frozen=True)
class Map:
    pass


@dataclass(frozen=True)
class Sample:
    strategy: Strategy


@dataclass(frozen=True)
class Space:
    strategy: Strategy
    length: int | None = None  # dense output length; derived from the strategy when omitted

    def output_length(self, m: int) -> int:
        return self.length if self.length is not None else self.strategy.dense_length(m)


@dataclass(frozen=True)
class Stencil:
    offsets: tuple[int, ...]
    strict: bool = False  # error on out-of-slice access instead of clamping

    def __post_init__(self):
        offs = tuple(int(o) for o in self.offsets)
        object.__setattr__(self, "offsets", offs)
        if not offs:
            raise GraphError("stencil offset list is empty")
        if list(offs) != sorted(set(offs)):
            raise GraphError(f"stencil offsets must be sorted and unique: {offs}")


@dataclass(frozen=True)
class BoundedState:
    warmup: float  # int or INFINITE

    def __post_init__(self):
        if not (self.warmup == INFINITE or (self.warmup >= 0 and float(self.warmup).is_integer())):
            raise GraphError(f"warmup must be a non-negative integer or infinite, got {self.warmup}")


@dataclass(frozen=True)
class FixedSlices:
    interval: int

    def __post_init__(self):
        if self.interval < 1:
            raise GraphError("slice interval must be >= 1")

    def boundaries(self, n: int) -> range:
        return range(0, n, self.interval)


@dataclass(frozen=True)
class SliceBoundaries:
    starts: tuple[int, ...]

    def boundaries(self, n: int) -> tuple[int, ...]:
        if any(s < 0 or s >= max(n, 1) for s in self.starts):
            raise GraphError(f"slice boundary outside [0, {n})")
        if any(b <= a for a, b in zip(self.starts, self.starts[1:])):
            raise GraphError("slice boundaries must be strictly increasing")
        return self.starts


@dataclass(frozen=True)
class Slice:
    partitioner: FixedSlices | SliceBoundaries


@dataclass(frozen=True)
class Unslice:
    pass


@dataclass(frozen=True)
class Unsupported:
    """Placeholder for requested kinds the engine cannot express (filtering, amplification)."""

    name: str


OpKind = Union[Map, Sample, Space, Stencil, BoundedState, Slice, Unslice, Unsupported]
KERNEL_KINDS = (Map, Stencil, BoundedState)
SYSTEM_KINDS = (Sample, Space, Slice, Unslice)


# -- graph structure ----------------------------------------------------------


@dataclass(frozen=True)
class OpDecl:
    name: str
    kind: OpKind
    kernel: str | None = None
    params: Mapping[str, Any] = field(default_factory=dict)
    cpu_cores: int = 1
    batch: int = 1
    arity: int = 1
    element_size: int | None = None

    def __post_init__(self):
        if self.batch < 1:
            raise GraphError(f"{self.name}: batch size must be >= 1")
        if self.cpu_cores < 1:
            raise GraphError(f"{self.name}: cpu_cores must be >= 1")
        if self.arity < 1:
            raise GraphError(f"{self.name}: arity must be >= 1")
        if isinstance(self.kind, SYSTEM_KINDS) and self.kernel is not None:
            raise GraphError(f"{self.name}: {type(self.kind).__name__} ops carry no kernel")

    @property
    def warmup(self) -> float:
        return self.kind.warmup if isinstance(self.kind, BoundedState) else 0


@dataclass(frozen=True)
class Edge:
    src: str
    dst: str
    slot: int = 0


@dataclass(frozen=True)
class GraphSpec:
    ops: tuple[OpDecl, ...]
    edges: tuple[Edge, ...]
    outputs: Mapping[str, str]  # output column name -> producing node

    def __post_init__(self):
        object.__setattr__(self, "ops", tuple(self.ops))
        object.__setattr__(self, "edges", tuple(self.edges))
        object.__setattr__(self, "outputs", dict(self.outputs))

    @property
    def op_map(self) -> dict[str, OpDecl]:
        return {op.name: op for op in self.ops}

    @property
    def sources(self) -> list[str]:
        names = {op.name for op in self.ops}
        seen: dict[str, None] = {}
        for e in self.edges:
            if e.src not in names:
                seen.setdefault(e.src)
        for node in self.outputs.values():
            if node not in names:
                seen.setdefault(node)
        return list(seen)

    def inputs_of(self, op: str) -> list[str]:
        """Producer names feeding ``op``, ordered by slot (assumes a valid graph)."""
        ins = sorted((e.slot, e.src) for e in self.edges if e.dst == op)
        return [src for _, src in ins]

    def consumers_of(self, node: str) -> list[tuple[str, int]]:
        return [(e.dst, e.slot) for e in self.edges if e.src == node]

    def topo_order(self) -> list[str]:
        """Op names in a deterministic topological order (declaration order breaks ties)."""
        order = [op.name for op in self.ops]
        names = set(order)
        indeg = {n: 0 for n in order}
        for e in self.edges:
            if e.dst in indeg and e.src in names:
                indeg[e.dst] += 1
        ready = [n for n in order if indeg[n] == 0]
        out = []
        while ready:
            n = ready.pop(0)
            out.append(n)
            for e in self.edges:
                if e.src == n and e.dst in indeg:
                    indeg[e.dst] -= 1
                    if indeg[e.dst] == 0:
                        ready.append(e.dst)
            ready.sort(key=order.index)
        if len(out) != len(order):
            raise GraphError("graph contains a cycle")
        return out


# -- validation ---------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    kind: str
    detail: str

    def __str__(self):
        return f"{self.kind}: {self.detail}"


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def kinds(self) -> set[str]:
        return {v.kind for v in self.violations}

    def add(self, kind: str, detail: str):
        self.violations.append(Violation(kind, detail))

    def __str__(self):
        return "ok" if self.ok else "\n".join(map(str, self.violations))


def _find_cycle(ops: list[str], succ: dict[str, list[str]]) -> list[str] | None:
    color = dict.fromkeys(ops, 0)
    stack: list[str] = []

    def visit(n):
        color[n] = 1
        stack.append(n)
        for m in succ.get(n, ()):
            if color.get(m) == 1:
                return stack[stack.index(m):] + [m]
            if color.get(m) == 0:
                found = visit(m)
                if found:
                    return found
        stack.pop()
        color[n] = 2
        return None

    for n in ops:
        if color[n] == 0:
            found = visit(n)
            if found:
                return found
    return None


def validate_graph(graph: GraphSpec, kernels: Mapping[str, Any] | None = None) -> ValidationReport:
    """Check structural rules; never raises. ``kernels`` maps kernel id -> declared arity."""
    if kernels is None:
        from framedag.kernels import REGISTRY

        kernels = {k: d.arity for k, d in REGISTRY.items()}
    report = ValidationReport()
    names = [op.name for op in graph.ops]
    ops = graph.op_map
    for n in {n for n in names if names.count(n) > 1}:
        report.add("duplicate name", f"op {n!r} declared more than once")
    if not graph.outputs:
        report.add("no outputs", "graph declares no output columns")

    for op in graph.ops:
        kind = op.kind
        if isinstance(kind, Unsupported):
            report.add("data-dependent length change", f"{op.name}: {kind.name!r} is not expressible")
        if isinstance(kind, SYSTEM_KINDS) and op.arity != 1:
            report.add("arity mismatch", f"{op.name}: {type(kind).__name__} takes exactly one input")
        if isinstance(kind, KERNEL_KINDS):
            if op.kernel is None:
                report.add("missing kernel", f"{op.name}: no kernel bound")
            elif op.kernel not in kernels:
                report.add("unknown kernel", f"{op.name}: kernel {op.kernel!r} not registered")
            elif kernels[op.kernel] not in (None, op.arity):
                report.add(
                    "arity mismatch",
                    f"{op.name}: kernel {op.kernel!r} takes {kernels[op.kernel]} inputs, op declares {op.arity}",
                )

    bound: dict[tuple[str, int], list[str]] = {}
    for e in graph.edges:
        if e.dst not in ops:
            report.add("unknown node", f"edge {e.src}->{e.dst}: consumer is not an op")
            continue
        if not 0 <= e.slot < ops[e.dst].arity:
            report.add("arity mismatch", f"edge {e.src}->{e.dst}: slot {e.slot} outside arity {ops[e.dst].arity}")
            continue
        bound.setdefault((e.dst, e.slot), []).append(e.src)
    for op in graph.ops:
        for slot in range(op.arity):
            srcs = bound.get((op.name, slot), [])
            if not srcs:
                report.add("unbound input slot", f"{op.name}: input slot {slot} has no producer")
            elif len(srcs) > 1:
                report.add("duplicate input binding", f"{op.name}: slot {slot} bound to {srcs}")

    succ: dict[str, list[str]] = {}
    for e in graph.edges:
        succ.setdefault(e.src, []).append(e.dst)
    cycle = _find_cycle(names, succ)
    if cycle:
        report.add("cycle", " -> ".join(cycle))

    sources = graph.sources
    reach = set(sources)
    frontier = list(sources)
    while frontier:
        n = frontier.pop()
        for m in succ.get(n, ()):
            if m not in reach:
                reach.add(m)
                frontier.append(m)
    pred: dict[str, list[str]] = {}
    for e in graph.edges:
        pred.setdefault(e.dst, []).append(e.src)
    coreach = set(graph.outputs.values())
    frontier = list(coreach)
    while frontier:
        n = frontier.pop()
        for m in pred.get(n, ()):
            if m not in coreach:
                coreach.add(m)
                frontier.append(m)
    for n in names:
        if n not in reach:
            report.add("unreachable", f"{n}: not reachable from any source")
        if n not in coreach:
            report.add("not co-reachable", f"{n}: does not feed any output")
    for col, node in graph.outputs.items():
        if node not in ops and node not in sources:
            report.add("unknown node", f"output {col!r} refers to unknown node {node!r}")
    return report


# -- domain inference ---------------------------------------------------------


def infer_domains(graph: GraphSpec, input_lengths: Mapping[str, int]) -> dict[str, SequenceDomain]:
    """Domain of every sequence in the graph, keyed by producing node name."""
    domains: dict[str, SequenceDomain] = {}
    for src in graph.sources:
        if src not in input_lengths:
            raise GraphError(f"no input length bound for source {src!r}")
        domains[src] = SequenceDomain(int(input_lengths[src]))
    ops = graph.op_map
    for name in graph.topo_order():
        op = ops[name]
        ins = [domains[s] for s in graph.inputs_of(name)]
        domains[name] = _op_domain(op, ins)
    return domains


def _op_domain(op: OpDecl, ins: list[SequenceDomain]) -> SequenceDomain:
    kind = op.kind
    if isinstance(kind, Unsupported):
        raise GraphError(f"{op.name}: unsupported op kind {kind.name!r}")
    if isinstance(kind, KERNEL_KINDS):
        lengths = {d.length for d in ins}
        if len(lengths) != 1:
            raise GraphError(f"{op.name}: inputs have unequal lengths {sorted(lengths)}")
        n = ins[0].length
        return SequenceDomain(n, _boundaries([b for d in ins for b in d.slice_boundaries], n))
    (src,) = ins
    if isinstance(kind, Sample):
        sel = kind.strategy.indices(src.length)
        m = len(sel)
        remapped = np.searchsorted(sel, np.asarray(src.slice_boundaries, dtype=np.int64))
        return SequenceDomain(m, _boundaries(remapped, m))
    if isinstance(kind, Space):
        n = kind.output_length(src.length)
        sel = kind.strategy.indices(n)
        if len(sel) != src.length:
            raise GraphError(
                f"{op.name}: spacing selects {len(sel)} points of {n} but input has {src.length} elements"
            )
        # a slice owns the gap before its first element; leading gap joins slice 0
        remapped = [int(sel[b]) for b in src.slice_boundaries if 0 < b < len(sel)]
        return SequenceDomain(n, _boundaries(remapped, n))
    if isinstance(kind, Slice):
        cuts = list(kind.partitioner.boundaries(src.length))
        return SequenceDomain(src.length, _boundaries([*src.slice_boundaries, *cuts], src.length))
    if isinstance(kind, Unslice):
        return SequenceDomain(src.length)
    raise GraphError(f"{op.name}: unknown op kind {kind!r}")


# -- jobs ---------------------------------------------------------------------


@dataclass(frozen=True)
class PointSpec:
    """Requested output points, resolved against the output length at run time."""

    kind: str = "all"
    strategy: Strategy | None = None

    def resolve(self, length: int) -> RequiredSet:
        if self.kind == "all":
            return RequiredSet.span(0, length)
        assert self.strategy is not None
        return RequiredSet.from_points(self.strategy.indices(length))


@dataclass(frozen=True)
class JobSpec:
    graph: GraphSpec
    inputs: Mapping[str, str]  # source name -> "table.column"
    output: str
    points: PointSpec | RequiredSet = PointSpec()

    def __post_init__(self):
        object.__setattr__(self, "inputs", dict(self.inputs))

    def binding(self, source: str) -> tuple[str, str]:
        ref = self.inputs[source]
        table, sep, column = ref.rpartition(".")
        if not sep or not table or not column:
            raise GraphError(f"input binding {ref!r} is not of the form table.column")
        return table, column

    def requested(self, output_length: int) -> RequiredSet:
        pts = self.points.resolve(output_length) if isinstance(self.points, PointSpec) else self.points
        if not pts.within(output_length):
            raise GraphError(f"requested points {pts.to_text()} outside output domain [0, {output_length})")
        return pts


def output_domain(graph: GraphSpec, domains: Mapping[str, SequenceDomain]) -> SequenceDomain:
    """The single domain shared by every output column."""
    doms = {graph.outputs[c]: domains[graph.outputs[c]] for c in graph.outputs}
    lengths = {d.length for d in doms.values()}
    if len(lengths) != 1:
        raise GraphError(f"output columns have unequal lengths {sorted(lengths)}")
    return next(iter(doms.values()))
