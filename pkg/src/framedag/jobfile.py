"""JSON job files.

Schema (all keys listed; any other key is an error)::

    {
      "graph": {
        "ops": [{"name", "kind", "kernel"?, "params"?, "cpu_cores"?, "batch"?,
                 "inputs"?, "element_size"?,
                 # per kind:
                 "strategy"?   sample / space: {"stride": s} | {"range": [start, end, step?]}
                                             | {"gather": [i0, i1, ...]}
                 "length"?     space: dense output length
                 "offsets"?    stencil: sorted signed offsets
                 "strict"?     stencil: error instead of clamping at slice edges
                 "warmup"?     bounded_state: int or "inf"
                 "interval"? | "boundaries"?   slice
                }],
        "edges": [{"from": node, "to": op, "slot"?: int}],
        "outputs": {column: node}
      },
      "inputs": {source: "table.column"},
      "output": table,
      "points"?: {"kind": "all"} | {"kind": "stride", "step"} |
                 {"kind": "range", "start", "end", "step"?} | {"kind": "gather", "points"},
      "config"?: {"workers", "work_packet_size", "io_packet_size", "pipelining", "max_retries"}
    }

``kind`` is one of map, sample, space, stencil, bounded_state, slice, unslice.
"""

from __future__ import annotations

import json
import math
import re
from pathlib import Path
from typing import Any

from framedag.graph import (
    INFINITE,
    BoundedState,
    Edge,
    FixedSlices,
    Gather,
    GraphError,
    GraphSpec,
    JobSpec,
    Map,
    OpDecl,
    PointSpec,
    Range,
    Sample,
    Slice,
    SliceBoundaries,
    Space,
    Stencil,
    Stride,
    Unslice,
    Unsupported,
)

COMMON_OP_KEYS = {"name", "kind", "kernel", "params", "cpu_cores", "batch", "inputs", "element_size"}
KIND_KEYS = {
    "map": set(),
    "sample": {"strategy"},
    "space": {"strategy", "length"},
    "stencil": {"offsets", "strict"},
    "bounded_state": {"warmup"},
    "slice": {"interval", "boundaries"},
    "unslice": set(),
}
UNSUPPORTED_KINDS = {"filter", "amplify", "loop"}
CONFIG_KEYS = {"workers", "work_packet_size", "io_packet_size", "pipelining", "max_retries"}


class JobFileError(GraphError):
    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        where = ":".join(str(x) for x in (path, line) if x is not None)
        super().__init__(f"{where}: {message}" if where else message)
        self.line = line
        self.path = path


class _Ctx:
    def __init__(self, text: str, path: str | None):
        self.text = text
        self.path = path

    def line_of(self, *needles: Any) -> int | None:
        for needle in needles:
            if needle is None:
                continue
            m = re.search(re.escape(json.dumps(needle)) if not isinstance(needle, str) else re.escape(f'"{needle}"'), self.text)
            if m:
                return self.text.count("\n", 0, m.start()) + 1
        return None

    def fail(self, message: str, *needles: Any):
        raise JobFileError(message, self.line_of(*needles), self.path)

    def keys(self, obj: Any, allowed: set[str], required: set[str], where: str, anchor: Any = None):
        if not isinstance(obj, dict):
            self.fail(f"{where}: expected an object", anchor)
        extra = sorted(set(obj) - allowed)
        if extra:
            self.fail(f"{where}: unknown field(s) {extra}", extra[0], anchor)
        missing = sorted(required - set(obj))
        if missing:
            self.fail(f"{where}: missing field(s) {missing}", anchor)


def _strategy(ctx: _Ctx, d: Any, where: str):
    ctx.keys(d, {"stride", "range", "gather"}, set(), where)
    if len(d) != 1:
        ctx.fail(f"{where}: strategy needs exactly one of stride/range/gather")
    ((name, val),) = d.items()
    try:
        if name == "stride":
            return Stride(int(val))
        if name == "range":
            return Range(*(int(v) for v in val))
        return Gather(tuple(int(v) for v in val))
    except (GraphError, TypeError, ValueError) as exc:
        ctx.fail(f"{where}: {exc}", name)


def _op(ctx: _Ctx, d: Any, k: int) -> OpDecl:
    where = f"graph.ops[{k}]"
    if not isinstance(d, dict):
        ctx.fail(f"{where}: expected an object")
    name = d.get("name")
    kind_name = d.get("kind")
    if kind_name in UNSUPPORTED_KINDS:
        ctx.keys(d, COMMON_OP_KEYS, {"name", "kind"}, where, name)
        return OpDecl(name, Unsupported(kind_name), arity=int(d.get("inputs", 1)))
    if kind_name not in KIND_KEYS:
        ctx.fail(f"{where}: unknown op kind {kind_name!r}", kind_name, name)
    ctx.keys(d, COMMON_OP_KEYS | KIND_KEYS[kind_name], {"name", "kind"}, where, name)
    try:
        if kind_name == "map":
            kind = Map()
        elif kind_name == "sample":
            kind = Sample(_strategy(ctx, d.get("strategy"), f"{where}.strategy"))
        elif kind_name == "space":
            length = d.get("length")
            kind = Space(_strategy(ctx, d.get("strategy"), f"{where}.strategy"), None if length is None else int(length))
        elif kind_name == "stencil":
            kind = Stencil(tuple(d.get("offsets", ())), bool(d.get("strict", False)))
        elif kind_name == "bounded_state":
            w = d.get("warmup", 0)
            kind = BoundedState(INFINITE if w in ("inf", "infinite") else int(w))
        elif kind_name == "slice":
            if ("interval" in d) == ("boundaries" in d):
                ctx.fail(f"{where}: slice needs exactly one of interval/boundaries", name)
            kind = Slice(FixedSlices(int(d["interval"])) if "interval" in d else SliceBoundaries(tuple(int(b) for b in d["boundaries"])))
        else:
            kind = Unslice()
        return OpDecl(
            name=name,
            kind=kind,
            kernel=d.get("kernel"),
            params=dict(d.get("params", {})),
            cpu_cores=int(d.get("cpu_cores", 1)),
            batch=int(d.get("batch", 1)),
            arity=int(d.get("inputs", 1)),
            element_size=d.get("element_size"),
        )
    except (GraphError, TypeError, ValueError) as exc:
        if isinstance(exc, JobFileError):
            raise
        ctx.fail(f"{where}: {exc}", name)


def _points(ctx: _Ctx, d: Any) -> PointSpec:
    if d is None:
        return PointSpec()
    kind = d.get("kind") if isinstance(d, dict) else None
    allowed = {"all": set(), "stride": {"step"}, "range": {"start", "end", "step"}, "gather": {"points"}}
    if kind not in allowed:
        ctx.fail(f"points: unknown kind {kind!r}", "points")
    ctx.keys(d, {"kind"} | allowed[kind], {"kind"} | (allowed[kind] - {"step"} if kind == "range" else allowed[kind]), "points", "points")
    try:
        if kind == "all":
            return PointSpec()
        if kind == "stride":
            return PointSpec("stride", Stride(int(d["step"])))
        if kind == "range":
            return PointSpec("range", Range(int(d["start"]), int(d["end"]), int(d.get("step", 1))))
        return PointSpec("gather", Gather(tuple(int(p) for p in d["points"])))
    except (GraphError, TypeError, ValueError) as exc:
        ctx.fail(f"points: {exc}", "points")


def parse_graph(d: Any, ctx: _Ctx | None = None) -> GraphSpec:
    ctx = ctx or _Ctx(json.dumps(d, indent=1), None)
    ctx.keys(d, {"ops", "edges", "outputs"}, {"ops", "edges", "outputs"}, "graph", "graph")
    ops = [_op(ctx, o, k) for k, o in enumerate(d["ops"])]
    edges = []
    for k, e in enumerate(d["edges"]):
        ctx.keys(e, {"from", "to", "slot"}, {"from", "to"}, f"graph.edges[{k}]", "edges")
        edges.append(Edge(str(e["from"]), str(e["to"]), int(e.get("slot", 0))))
    outputs = d["outputs"]
    if not isinstance(outputs, dict):
        ctx.fail("graph.outputs: expected an object mapping column -> node", "outputs")
    return GraphSpec(tuple(ops), tuple(edges), {str(c): str(n) for c, n in outputs.items()})


def parse_job(text: str, path: str | None = None) -> tuple[JobSpec, dict]:
    """Parse a job file; returns the job and any config overrides it carries."""
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise JobFileError(f"invalid JSON: {exc.msg}", exc.lineno, path) from None
    ctx = _Ctx(text, path)
    ctx.keys(d, {"graph", "inputs", "output", "points", "config"}, {"graph", "inputs", "output"}, "job")
    graph = parse_graph(d["graph"], ctx)
    inputs = d["inputs"]
    if not isinstance(inputs, dict) or not all(isinstance(v, str) for v in inputs.values()):
        ctx.fail("inputs: expected an object mapping source -> \"table.column\"", "inputs")
    config = d.get("config", {})
    ctx.keys(config, CONFIG_KEYS, set(), "config", "config")
    job = JobSpec(graph, inputs, str(d["output"]), _points(ctx, d.get("points")))
    return job, config


def load_job(path: str | Path) -> tuple[JobSpec, dict]:
    path = Path(path)
    return parse_job(path.read_text(), str(path))


# -- serialization ------------------------------------------------------------


def _strategy_dict(s) -> dict:
    if isinstance(s, Stride):
        return {"stride": s.step}
    if isinstance(s, Range):
        return {"range": [s.start, s.end, s.step]}
    return {"gather": list(s.points)}


def op_to_dict(op: OpDecl) -> dict:
    k = op.kind
    d: dict[str, Any] = {"name": op.name}
    if isinstance(k, Map):
        d["kind"] = "map"
    elif isinstance(k, Sample):
        d.update(kind="sample", strategy=_strategy_dict(k.strategy))
    elif isinstance(k, Space):
        d.update(kind="space", strategy=_strategy_dict(k.strategy))
        if k.length is not None:
            d["length"] = k.length
    elif isinstance(k, Stencil):
        d.update(kind="stencil", offsets=list(k.offsets))
        if k.strict:
            d["strict"] = True
    elif isinstance(k, BoundedState):
        d.update(kind="bounded_state", warmup="inf" if k.warmup == math.inf else int(k.warmup))
    elif isinstance(k, Slice):
        p = k.partitioner
        d["kind"] = "slice"
        if isinstance(p, FixedSlices):
            d["interval"] = p.interval
        else:
            d["boundaries"] = list(p.starts)
    elif isinstance(k, Unslice):
        d["kind"] = "unslice"
    else:
        d["kind"] = k.name
    if op.kernel is not None:
        d["kernel"] = op.kernel
    if op.params:
        d["params"] = dict(op.params)
    if op.cpu_cores != 1:
        d["cpu_cores"] = op.cpu_cores
    if op.batch != 1:
        d["batch"] = op.batch
    if op.arity != 1:
        d["inputs"] = op.arity
    if op.element_size is not None:
        d["element_size"] = op.element_size
    return d


def graph_to_dict(graph: GraphSpec) -> dict:
    return {
        "ops": [op_to_dict(op) for op in graph.ops],
        "edges": [{"from": e.src, "to": e.dst, "slot": e.slot} for e in graph.edges],
        "outputs": dict(graph.outputs),
    }


def job_to_dict(job: JobSpec, config: dict | None = None) -> dict:
    d: dict[str, Any] = {"graph": graph_to_dict(job.graph), "inputs": dict(job.inputs), "output": job.output}
    pts = job.points
    if isinstance(pts, PointSpec) and pts.kind != "all":
        s = pts.strategy
        if isinstance(s, Stride):
            d["points"] = {"kind": "stride", "step": s.step}
        elif isinstance(s, Range):
            d["points"] = {"kind": "range", "start": s.start, "end": s.end, "step": s.step}
        else:
            d["points"] = {"kind": "gather", "points": list(s.points)}
    elif not isinstance(pts, PointSpec):
        d["points"] = {"kind": "gather", "points": pts.points().tolist()}
    if config:
        d["config"] = dict(config)
    return d
