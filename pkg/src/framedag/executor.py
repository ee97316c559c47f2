"""Packetized parallel execution of jobs over a simulated cluster of workers.

Each worker hosts one or more graph instances. An instance runs a
load -> compute -> commit pipeline over work packets pulled from a global
queue; with pipelining enabled the load of the next group of packets overlaps
the compute of the current one (at most two groups in flight per instance).
"""

from __future__ import annotations

import heapq
import itertools
import json
import logging
import queue
import shutil
import threading
import time
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from framedag.depanalysis import DependencyAnalyzer, Liveness, _selected, coalesce_batches
from framedag.framestore.column import FrameColumn, FrameReader, plan_decode
from framedag.framestore.table import BlobColumn, Store, Table, TableWriter
from framedag.graph import (
    BoundedState,
    GraphError,
    GraphSpec,
    JobSpec,
    Sample,
    SequenceDomain,
    Slice,
    Space,
    Stencil,
    Unslice,
    infer_domains,
    output_domain,
    validate_graph,
)
from framedag.kernels import REGISTRY, Kernel, make_kernel
from framedag.requiredset import RequiredSet

log = logging.getLogger(__name__)

Payload = bytes | None


class ExecutionError(RuntimeError):
    pass


class PacketFailure(ExecutionError):
    def __init__(self, job: int, packet: int, cause: BaseException):
        super().__init__(f"job {job} packet {packet}: {type(cause).__name__}: {cause}")
        self.job = job
        self.packet = packet
        self.cause = cause


class WorkerKilled(BaseException):
    """Raised inside a worker to simulate machine loss."""


@dataclass(frozen=True)
class MachineResources:
    cpu_cores: int = 1
    io_parallelism: int = 1

    def __post_init__(self):
        if self.cpu_cores < 1:
            raise ValueError("a machine needs at least one core")


def plan_instances(graph: GraphSpec, machine: MachineResources) -> int:
    need = sum(op.cpu_cores for op in graph.ops) or 1
    return max(1, machine.cpu_cores // need)


@dataclass
class ExecConfig:
    workers: int = 1
    machine: MachineResources = field(default_factory=MachineResources)  # per worker
    work_packet_size: int = 128
    io_packet_size: int = 1024
    pipelining: bool = True
    max_retries: int = 3
    chaos_kill: tuple[int, int] | None = None  # (worker id, packets committed before it dies)
    add_worker_at: float | None = None  # fraction of committed packets that triggers a new worker

    def __post_init__(self):
        if self.workers < 1 or self.work_packet_size < 1 or self.io_packet_size < 1:
            raise ValueError("workers and packet sizes must be >= 1")


# -- job compilation and partitioning -----------------------------------------


@dataclass
class JobPlan:
    """A job bound to concrete input columns, with inferred domains."""

    job: JobSpec
    index: int
    domains: dict[str, SequenceDomain]
    sources: dict[str, FrameColumn | BlobColumn]
    requested: RequiredSet
    analyzer: DependencyAnalyzer

    @property
    def graph(self) -> GraphSpec:
        return self.job.graph

    @property
    def output_columns(self) -> list[str]:
        return list(self.graph.outputs)


def compile_job(job: JobSpec, store: Store, index: int = 0) -> JobPlan:
    report = validate_graph(job.graph)
    if not report.ok:
        raise GraphError(f"invalid graph:\n{report}")
    sources: dict[str, FrameColumn | BlobColumn] = {}
    lengths = {}
    for src in job.graph.sources:
        if src not in job.inputs:
            raise GraphError(f"source {src!r} has no input binding")
        table_name, col = job.binding(src)
        table: Table = store.open(table_name)
        sources[src] = table.column(col)
        lengths[src] = table.rows
    domains = infer_domains(job.graph, lengths)
    out = output_domain(job.graph, domains)
    requested = job.requested(out.length)
    return JobPlan(job, index, domains, sources, requested, DependencyAnalyzer(job.graph, domains))


@dataclass
class WorkPacket:
    job: int
    index: int
    points: RequiredSet
    warmup: dict[str, int] = field(default_factory=dict)

    @property
    def key(self) -> tuple[int, int]:
        return (self.job, self.index)


def partition(plan: JobPlan, requested: RequiredSet | None = None, work_packet_size: int = 128) -> list[WorkPacket]:
    """Chunk requested output points, in order, into packets of at most ``work_packet_size``.

    Each packet records how many warmup-only invocations every bounded-state
    op performs for it.
    """
    if work_packet_size < 1:
        raise ValueError("work packet size must be >= 1")
    req = plan.requested if requested is None else requested
    pts = req.points()
    packets = []
    bounded = [op.name for op in plan.graph.ops if isinstance(op.kind, BoundedState)]
    for i, lo in enumerate(range(0, len(pts), work_packet_size)):
        chunk = RequiredSet.from_points(pts[lo : lo + work_packet_size])
        live = plan.analyzer.run(chunk)
        packets.append(WorkPacket(plan.index, i, chunk, {b: live.warmup(b) for b in bounded}))
    return packets


# -- graph instances ----------------------------------------------------------


@dataclass
class Counters:
    frames_decoded: int = 0
    frames_emitted: int = 0
    bytes_read: int = 0
    elements_computed: int = 0
    elements_discarded_warmup: int = 0
    kernel_invocations: int = 0
    retries: int = 0
    overlapped_loads: int = 0

    def add(self, other: Counters):
        for k, v in asdict(other).items():
            setattr(self, k, getattr(self, k) + v)


@dataclass
class LoadedInputs:
    values: dict[str, dict[int, Payload]]
    liveness: dict[tuple[int, int], Liveness]


@dataclass
class PacketResult:
    packet: WorkPacket
    rows: dict[str, list[Payload]]
    counters: Counters


class GraphInstance:
    """One replica of a job graph with private kernel state and decoder state."""

    _ids = itertools.count()

    def __init__(self, instance_id: int | None = None):
        self.id = next(self._ids) if instance_id is None else instance_id
        self._kernels: dict[tuple[int, str], Kernel] = {}
        self._readers: dict[str, FrameReader] = {}

    def close(self):
        for r in self._readers.values():
            r.close()
        self._readers.clear()

    def kernel(self, plan: JobPlan, op) -> Kernel:
        key = (plan.index, op.name)
        if key not in self._kernels:
            self._kernels[key] = make_kernel(op.kernel, dict(op.params), op.warmup)
        return self._kernels[key]

    def _reader(self, column: FrameColumn) -> FrameReader:
        key = str(column.path)
        if key not in self._readers:
            self._readers[key] = FrameReader(column)
        return self._readers[key]

    # -- stages ---------------------------------------------------------------

    def load(self, plan: JobPlan, packets: Sequence[WorkPacket], counters: Counters) -> LoadedInputs:
        """Analyse each packet and read the union of their required source points."""
        live = {p.key: plan.analyzer.run(p.points) for p in packets}
        values: dict[str, dict[int, Payload]] = {}
        for src, column in plan.sources.items():
            need = RequiredSet().union(*(lv.required[src] for lv in live.values()))
            if isinstance(column, FrameColumn):
                reader = self._reader(column)
                before = (reader.stats.frames_decoded, reader.stats.frames_emitted, reader.stats.bytes_read)
                values[src] = dict(reader.read(plan_decode(column, need)))
                counters.frames_decoded += reader.stats.frames_decoded - before[0]
                counters.frames_emitted += reader.stats.frames_emitted - before[1]
                counters.bytes_read += reader.stats.bytes_read - before[2]
            else:
                values[src] = dict(column.read(need))
        return LoadedInputs(values, live)

    def compute(self, plan: JobPlan, packet: WorkPacket, inputs: LoadedInputs, counters: Counters) -> dict[str, list[Payload]]:
        graph = plan.graph
        live = inputs.liveness.get(packet.key) or plan.analyzer.run(packet.points)
        values: dict[str, dict[int, Payload]] = {s: inputs.values[s] for s in plan.sources}
        ops = graph.op_map
        for name in plan.analyzer.order:
            op = ops[name]
            todo = live.computed[name]
            counters.elements_computed += len(todo)
            if isinstance(op.kind, BoundedState):
                counters.elements_discarded_warmup += len(todo) - len(live.required[name])
            srcs = plan.analyzer.inputs[name]
            values[name] = self._run_op(plan, op, srcs, todo, values, counters)
        return {col: [values[node][p] for p in packet.points] for col, node in graph.outputs.items()}

    def _run_op(self, plan: JobPlan, op, srcs: list[str], todo: RequiredSet, values, counters: Counters):
        kind = op.kind
        dom = plan.domains[op.name]
        if not todo:
            return {}
        if isinstance(kind, (Slice, Unslice)):
            (src,) = srcs
            return {i: values[src][i] for i in todo}
        if isinstance(kind, Sample):
            (src,) = srcs
            sel = _selected(kind.strategy, plan.domains[src].length)
            return {i: values[src][int(sel[i])] for i in todo}
        if isinstance(kind, Space):
            (src,) = srcs
            sel = _selected(kind.strategy, dom.length)
            pts = todo.points()
            k = np.minimum(np.searchsorted(sel, pts), len(sel) - 1) if len(sel) else np.zeros_like(pts)
            out: dict[int, Payload] = {}
            for i, j in zip(pts.tolist(), k.tolist()):
                out[i] = values[src][j] if len(sel) and sel[j] == i else None
            return out
        offsets = kind.offsets if isinstance(kind, Stencil) else (0,)
        kernel = self.kernel(plan, op)
        decl = REGISTRY[op.kernel]
        stateful = isinstance(kind, BoundedState)
        pieces = todo.split_at(dom.slice_starts()) if stateful else [todo]
        batches = [b for piece in pieces for b in coalesce_batches(piece, op.batch, split_runs=stateful)]
        out = {}
        last = None
        starts = set(dom.slice_starts())
        for batch in batches:
            pts = batch.points().tolist()
            if stateful and (last is None or pts[0] != last + 1 or pts[0] in starts):
                kernel.reset()
            last = pts[-1]
            fields = []
            for src in srcs:
                vals = values[src]
                for o in offsets:
                    if o == 0:
                        fields.append([vals[i] for i in pts])
                    else:
                        field_ = []
                        for i in pts:
                            ss, se = dom.slice_of(i)
                            field_.append(vals[min(max(i + o, ss), se - 1)])
                        fields.append(field_)
            if decl.accepts_fill:
                live_idx = list(range(len(pts)))
            else:
                live_idx = [k for k in range(len(pts)) if all(f[k] is not None for f in fields)]
            result: list[Payload] = [None] * len(pts)
            if live_idx:
                sub = [[f[k] for k in live_idx] for f in fields] if len(live_idx) != len(pts) else fields
                got = kernel.execute(sub)
                counters.kernel_invocations += 1
                if len(got) != len(live_idx):
                    raise ExecutionError(f"{op.name}: kernel returned {len(got)} outputs for {len(live_idx)} inputs")
                for k, v in zip(live_idx, got):
                    result[k] = v
            out.update(zip(pts, result))
        return out


def execute_packet(instance: GraphInstance, plan: JobPlan, packet: WorkPacket) -> PacketResult:
    """Load, analyse and compute a single packet on ``instance`` (no commit)."""
    counters = Counters()
    inputs = instance.load(plan, [packet], counters)
    rows = instance.compute(plan, packet, inputs, counters)
    return PacketResult(packet, rows, counters)


# -- scheduling ---------------------------------------------------------------


@dataclass
class RunReport:
    per_worker_packets: dict[str, int]
    counters: Counters
    wall_time: float
    packets: int
    instances_per_worker: int
    peak_cores: dict[str, int] = field(default_factory=dict)
    tables: list[str] = field(default_factory=list)

    def to_json(self) -> str:
        d = asdict(self)
        return json.dumps(d, indent=2, sort_keys=True)

    def summary(self) -> str:
        c = self.counters
        lines = [
            f"packets committed   {sum(self.per_worker_packets.values())}/{self.packets}",
            f"workers             {len(self.per_worker_packets)} x {self.instances_per_worker} instance(s)",
            f"frames decoded      {c.frames_decoded} (emitted {c.frames_emitted}, {c.bytes_read} bytes read)",
            f"elements computed   {c.elements_computed} (warmup discarded {c.elements_discarded_warmup})",
            f"retries             {c.retries}",
            f"wall time           {self.wall_time:.3f} s",
        ]
        lines += [f"  {w}: {n} packets" for w, n in self.per_worker_packets.items()]
        return "\n".join(lines)


class _Scheduler:
    """Global packet queue plus claim/commit accounting, guarded by one condition."""

    def __init__(self, plans: list[JobPlan], packets: list[list[WorkPacket]], writers: list[TableWriter], config: ExecConfig):
        self.plans = plans
        self.writers = writers
        self.config = config
        self.cond = threading.Condition()
        self.heap: list[tuple[int, int]] = []
        self.by_key: dict[tuple[int, int], WorkPacket] = {}
        for plist in packets:
            for p in plist:
                self.by_key[p.key] = p
                heapq.heappush(self.heap, p.key)
        self.total = len(self.by_key)
        self.committed: set[tuple[int, int]] = set()
        self.claims: dict[str, set[tuple[int, int]]] = {}
        self.dead: set[str] = set()
        self.attempts: dict[tuple[int, int], int] = {}
        self.per_worker: dict[str, int] = {}
        self.counters = Counters()
        self.error: BaseException | None = None
        self.cores_in_use: dict[str, int] = {}
        self.peak_cores: dict[str, int] = {}

    @property
    def done(self) -> bool:
        return len(self.committed) == self.total or self.error is not None

    def register(self, worker: str):
        with self.cond:
            self.claims[worker] = set()
            self.per_worker.setdefault(worker, 0)
            self.cores_in_use[worker] = 0
            self.peak_cores[worker] = 0

    def claim(self, worker: str, max_points: int) -> list[WorkPacket] | None:
        """Pop the next run of packets of one job totalling at most ``max_points`` (at least one)."""
        with self.cond:
            while True:
                if self.done or worker in self.dead:
                    return None
                if self.heap:
                    break
                if not set(self.claims) - self.dead:
                    self.error = ExecutionError("no live workers remain")
                    self.cond.notify_all()
                    return None
                self.cond.wait(0.05)
            first = heapq.heappop(self.heap)
            group = [self.by_key[first]]
            size = len(group[0].points)
            while self.heap and self.heap[0][0] == first[0] and self.heap[0][1] == group[-1].index + 1:
                nxt = self.by_key[self.heap[0]]
                if size + len(nxt.points) > max_points:
                    break
                heapq.heappop(self.heap)
                group.append(nxt)
                size += len(nxt.points)
            self.claims[worker].update(p.key for p in group)
            return group

    def commit(self, worker: str, result: PacketResult) -> bool:
        key = result.packet.key
        with self.cond:
            if worker in self.dead or key not in self.claims[worker]:
                return False
        writer = self.writers[key[0]]
        writer.commit(key[1], result.packet.points, result.rows)
        with self.cond:
            self.claims[worker].discard(key)
            if key not in self.committed:
                self.committed.add(key)
                self.per_worker[worker] += 1
                self.counters.add(result.counters)
            self.cond.notify_all()
        return True

    def set_error(self, exc: BaseException):
        with self.cond:
            self.error = self.error or exc
            self.cond.notify_all()

    def fail_packet(self, worker: str, packet: WorkPacket, exc: BaseException):
        with self.cond:
            self.claims[worker].discard(packet.key)
            n = self.attempts.get(packet.key, 0) + 1
            self.attempts[packet.key] = n
            if n > self.config.max_retries:
                self.error = PacketFailure(packet.job, packet.index, exc)
            else:
                log.warning("retrying %s after %s: %s", packet.key, type(exc).__name__, exc)
                self.counters.retries += 1
                heapq.heappush(self.heap, packet.key)
            self.cond.notify_all()

    def release(self, worker: str, packets: Sequence[WorkPacket]):
        """Return claimed-but-unprocessed packets to the queue without counting a retry."""
        with self.cond:
            for p in packets:
                if p.key in self.claims[worker]:
                    self.claims[worker].discard(p.key)
                    heapq.heappush(self.heap, p.key)
            self.cond.notify_all()

    def kill(self, worker: str):
        with self.cond:
            if worker in self.dead:
                return
            self.dead.add(worker)
            lost = sorted(self.claims[worker])
            self.claims[worker].clear()
            for key in lost:
                heapq.heappush(self.heap, key)
            self.counters.retries += len(lost)
            log.warning("worker %s died; reassigning packets %s", worker, lost)
            if not set(self.claims) - self.dead and not self.done:
                self.error = ExecutionError("no live workers remain")
            self.cond.notify_all()

    def acquire_cores(self, worker: str, cores: int):
        with self.cond:
            self.cores_in_use[worker] += cores
            self.peak_cores[worker] = max(self.peak_cores[worker], self.cores_in_use[worker])
            if self.cores_in_use[worker] > self.config.machine.cpu_cores:
                self.error = ExecutionError(f"{worker} oversubscribed: {self.cores_in_use[worker]} cores in use")
                self.cond.notify_all()

    def release_cores(self, worker: str, cores: int):
        with self.cond:
            self.cores_in_use[worker] -= cores

    def progress(self) -> float:
        with self.cond:
            return len(self.committed) / max(self.total, 1)


class _Worker:
    """A simulated machine hosting ``n_instances`` graph instances."""

    _SENTINEL = object()

    def __init__(self, name: str, sched: _Scheduler, n_instances: int, instance_cores: int, kill_after: int | None):
        self.name = name
        self.sched = sched
        self.n_instances = n_instances
        self.instance_cores = instance_cores
        self.kill_after = kill_after
        self.threads: list[threading.Thread] = []
        self._commits = 0
        self._lock = threading.Lock()

    def start(self):
        self.sched.register(self.name)
        for k in range(self.n_instances):
            inst = GraphInstance()
            target = self._pipelined if self.sched.config.pipelining else self._serial
            t = threading.Thread(target=self._guard, args=(target, inst), name=f"{self.name}/i{k}", daemon=True)
            self.threads.append(t)
            t.start()

    def _guard(self, target, inst: GraphInstance):
        try:
            target(inst)
        except WorkerKilled:
            self.sched.kill(self.name)
        except BaseException as exc:  # noqa: BLE001 - surfaced through the scheduler
            self.sched.set_error(exc)
        finally:
            inst.close()

    def _max_points(self) -> int:
        return max(self.sched.config.io_packet_size, 1)

    def _load(self, inst: GraphInstance, group: list[WorkPacket]):
        plan = self.sched.plans[group[0].job]
        counters = Counters()
        try:
            return inst.load(plan, group, counters), counters
        except Exception as exc:
            for p in group:
                self.sched.fail_packet(self.name, p, exc)
            return None, counters

    def _compute_group(self, inst: GraphInstance, group: list[WorkPacket], loaded, load_counters: Counters):
        plan = self.sched.plans[group[0].job]
        for n, packet in enumerate(group):
            if self.name in self.sched.dead:
                return
            counters = Counters()
            if n == 0:
                counters.add(load_counters)
            self.sched.acquire_cores(self.name, self.instance_cores)
            try:
                rows = inst.compute(plan, packet, loaded, counters)
            except Exception as exc:
                self.sched.fail_packet(self.name, packet, exc)
                continue
            finally:
                self.sched.release_cores(self.name, self.instance_cores)
            self._maybe_die()
            if self.sched.commit(self.name, PacketResult(packet, rows, counters)):
                with self._lock:
                    self._commits += 1

    def _maybe_die(self):
        if self.kill_after is not None:
            with self._lock:
                if self._commits >= self.kill_after:
                    raise WorkerKilled(self.name)

    def _serial(self, inst: GraphInstance):
        while True:
            group = self.sched.claim(self.name, self._max_points())
            if group is None:
                return
            loaded, counters = self._load(inst, group)
            if loaded is not None:
                self._compute_group(inst, group, loaded, counters)

    def _pipelined(self, inst: GraphInstance):
        handoff: queue.Queue = queue.Queue(maxsize=1)
        slots = threading.Semaphore(2)
        computing = threading.Event()
        overlapped = [0]
        stop = threading.Event()

        def loader():
            try:
                while not stop.is_set():
                    slots.acquire()
                    if stop.is_set():
                        return
                    group = self.sched.claim(self.name, self._max_points())
                    if group is None:
                        handoff.put(self._SENTINEL)
                        return
                    if computing.is_set():
                        overlapped[0] += 1
                    loaded, counters = self._load(inst, group)
                    handoff.put((group, loaded, counters))
            except BaseException:
                handoff.put(self._SENTINEL)
                raise

        lt = threading.Thread(target=loader, name=f"{threading.current_thread().name}/load", daemon=True)
        lt.start()
        try:
            while True:
                item = handoff.get()
                if item is self._SENTINEL:
                    break
                group, loaded, counters = item
                if loaded is not None:
                    computing.set()
                    try:
                        self._compute_group(inst, group, loaded, counters)
                    finally:
                        computing.clear()
                slots.release()
        except WorkerKilled:
            # mark dead first so the loader's pending claim returns
            self.sched.kill(self.name)
            raise
        except BaseException as exc:
            self.sched.set_error(exc)
            raise
        finally:
            stop.set()
            slots.release()
            # drain so the loader never blocks forever on a full handoff
            while lt.is_alive():
                try:
                    item = handoff.get(timeout=0.05)
                except queue.Empty:
                    continue
                if item is not self._SENTINEL:
                    self.sched.release(self.name, item[0])
                slots.release()
            with self.sched.cond:
                self.sched.counters.overlapped_loads += overlapped[0]


def run_jobs(jobs: Sequence[JobSpec], store: Store, config: ExecConfig | None = None) -> tuple[list[Table], RunReport]:
    """Execute several jobs on one worker pool; returns their output tables and a combined report."""
    config = config or ExecConfig()
    t0 = time.perf_counter()
    plans = [compile_job(job, store, i) for i, job in enumerate(jobs)]
    outs = [p.job.output for p in plans]
    if len(set(outs)) != len(outs):
        raise GraphError("two jobs write the same output table")
    for p in plans:
        if p.job.output in {t for pl in plans for t, _ in (pl.job.binding(s) for s in pl.graph.sources)}:
            raise GraphError(f"job output {p.job.output!r} is also an input")
    packets = [partition(p, work_packet_size=config.work_packet_size) for p in plans]
    writers = [store.writer(p.job.output, p.output_columns) for p in plans]
    sched = _Scheduler(plans, packets, writers, config)
    n_inst = min(plan_instances(p.graph, config.machine) for p in plans) if plans else 1
    inst_cores = max((sum(op.cpu_cores for op in p.graph.ops) for p in plans), default=1)
    inst_cores = min(inst_cores, config.machine.cpu_cores)
    workers = []
    for w in range(config.workers):
        kill = config.chaos_kill[1] if config.chaos_kill and config.chaos_kill[0] == w else None
        workers.append(_Worker(f"worker-{w}", sched, n_inst, inst_cores, kill))
    for w in workers:
        w.start()
    added = False
    while True:
        with sched.cond:
            if sched.done:
                break
            sched.cond.wait(0.02)
        if config.add_worker_at is not None and not added and sched.progress() >= config.add_worker_at:
            extra = _Worker(f"worker-{len(workers)}", sched, n_inst, inst_cores, None)
            workers.append(extra)
            extra.start()
            added = True
    for w in workers:
        for t in w.threads:
            t.join(timeout=30)
    if sched.error is not None:
        for wr in writers:
            shutil.rmtree(wr.staging, ignore_errors=True)
        if isinstance(sched.error, ExecutionError):
            raise sched.error
        raise ExecutionError(f"{type(sched.error).__name__}: {sched.error}") from sched.error
    tables = [wr.finalize(len(pk)) for wr, pk in zip(writers, packets)]
    report = RunReport(
        per_worker_packets=dict(sched.per_worker),
        counters=sched.counters,
        wall_time=time.perf_counter() - t0,
        packets=sched.total,
        instances_per_worker=n_inst,
        peak_cores=dict(sched.peak_cores),
        tables=[t.name for t in tables],
    )
    return tables, report


def run_job(job: JobSpec, store: Store, config: ExecConfig | None = None) -> tuple[Table, RunReport]:
    tables, report = run_jobs([job], store, config)
    return tables[0], report


def collect_inputs(plan: JobPlan, points: Mapping[str, RequiredSet]) -> dict[str, dict[int, Payload]]:
    """Read the given source points directly (used by oracles and inspection)."""
    inst = GraphInstance()
    try:
        out = {}
        for src, column in plan.sources.items():
            need = points.get(src, RequiredSet())
            if isinstance(column, FrameColumn):
                out[src] = dict(inst._reader(column).read(plan_decode(column, need)))
            else:
                out[src] = dict(column.read(need))
        return out
    finally:
        inst.close()
