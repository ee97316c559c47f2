"""framedag command line: ingest, run, export, inspect, bench.

Exit codes: 0 success, 1 validation error, 2 runtime error. The store root
is ``--store`` or ``$FRAMEDAG_STORE`` (default ``./store``).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from framedag.bench import PATTERNS, bench_access, measure, to_csv
from framedag.depanalysis import DependencyAnalyzer
from framedag.executor import ExecConfig, ExecutionError, MachineResources, compile_job, run_jobs
from framedag.framestore.codec import CorruptRecord
from framedag.framestore.column import FrameColumn, plan_decode, read_decode
from framedag.framestore.table import Store, StoreError
from framedag.graph import GraphError
from framedag.jobfile import load_job
from framedag.requiredset import RequiredSet

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


def _frames_from_file(path: Path, frame_size: int):
    size = path.stat().st_size
    if frame_size < 1 or size % frame_size:
        raise ValueError(f"{path}: size {size} is not a multiple of frame size {frame_size}")
    with open(path, "rb") as f:
        while chunk := f.read(frame_size):
            yield chunk


def cmd_ingest(args) -> int:
    store = Store(args.store)
    table = store.ingest_frames(
        args.table, args.column, _frames_from_file(Path(args.path), args.frame_size), args.keyframe_interval
    )
    col = table.column(args.column)
    print(f"ingested {table.rows} frames into {table.name}.{args.column} ({len(col.keyframes)} keyframes, {col.nbytes()} bytes)")
    return EXIT_OK


def _config(args, overrides: dict) -> ExecConfig:
    cfg = dict(overrides)
    for key in ("workers", "work_packet_size", "io_packet_size", "max_retries"):
        val = getattr(args, key)
        if val is not None:
            cfg[key] = val
    if args.no_pipelining:
        cfg["pipelining"] = False
    chaos = None
    if args.chaos:
        w, k = args.chaos.split(":")
        chaos = (int(w), int(k))
    return ExecConfig(
        machine=MachineResources(cpu_cores=args.cores),
        chaos_kill=chaos,
        add_worker_at=args.add_worker_at,
        **cfg,
    )


def cmd_run(args) -> int:
    store = Store(args.store)
    jobs, overrides = [], {}
    for spec in args.specs:
        job, cfg = load_job(spec)
        jobs.append(job)
        overrides.update(cfg)
    tables, report = run_jobs(jobs, store, _config(args, overrides))
    print(report.summary())
    if args.report:
        Path(args.report).write_text(report.to_json() + "\n")
    for t in tables:
        print(f"wrote {t.name}: {t.rows} rows")
    return EXIT_OK


def cmd_export(args) -> int:
    store = Store(args.store)
    table = store.open(args.table)
    col = table.column(args.column)
    out = Path(args.path)
    lengths = []
    with open(out, "wb") as f:
        if isinstance(col, FrameColumn):
            for _, payload in read_decode(col, plan_decode(col, RequiredSet.span(0, col.count))):
                f.write(payload)
                lengths.append(len(payload))
        else:
            for _, payload in col.read():
                if payload is None:
                    lengths.append(-1)
                else:
                    f.write(payload)
                    lengths.append(len(payload))
    Path(str(out) + ".lengths").write_text("".join(f"{n}\n" for n in lengths))
    print(f"exported {len(lengths)} rows of {table.name}.{args.column} to {out}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    store = Store(args.store)
    if args.job:
        job, _ = load_job(args.job)
        plan = compile_job(job, store)
        req = RequiredSet(_parse_intervals(args.points)) if args.points else plan.requested
        live = DependencyAnalyzer(job.graph, plan.domains).run(req)
        for node, dom in plan.domains.items():
            warm = f"  (+{live.warmup(node)} warmup)" if node in live.computed and live.warmup(node) else ""
            print(f"{node} [N={dom.length}]: {live.required[node].to_text()}{warm}")
        return EXIT_OK
    table = store.open(args.table)
    print(table.manifest.to_json(), end="")
    for desc in table.manifest.columns:
        col = table.column(desc.name)
        if isinstance(col, FrameColumn):
            print(f"column {desc.name}: frame, {col.count} rows, {len(col.keyframes)} keyframes, {col.nbytes()} bytes")
            if args.index:
                for fr, off in zip(col.index.frames, col.index.offsets):
                    print(f"  keyframe {fr} @ {off}")
            if args.required:
                r = measure(col, RequiredSet(_parse_intervals(args.required)), "inspect")
                print(f"  frames_decoded={r.frames_decoded} frames_emitted={r.frames_emitted} bytes_read={r.bytes_read}")
        else:
            print(f"column {desc.name}: blob, {col.count} rows, {col.path.stat().st_size} bytes")
    return EXIT_OK


def _parse_intervals(text: str) -> list[tuple[int, int]]:
    """Parse ``"0:10,20,30:40"`` into half-open intervals."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if ":" in part:
            a, b = part.split(":")
            out.append((int(a), int(b)))
        else:
            out.append((int(part), int(part) + 1))
    return out


def cmd_bench(args) -> int:
    store = Store(args.store)
    rows = bench_access(
        store,
        args.table,
        args.column,
        tuple(args.patterns),
        smallgop=args.smallgop or None,
        strided=not args.no_strided,
        seed=args.seed,
    )
    text = to_csv(rows)
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="framedag", description=__doc__.splitlines()[0])
    parser.add_argument("--store", default=None, help="store root directory (default $FRAMEDAG_STORE or ./store)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="ingest a raw concatenated-frames file as a table")
    p.add_argument("path")
    p.add_argument("--frame-size", type=int, required=True)
    p.add_argument("-K", "--keyframe-interval", type=int, required=True)
    p.add_argument("--table", required=True)
    p.add_argument("--column", default="frame")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("run", help="run one or more job files on a shared worker pool")
    p.add_argument("specs", nargs="+")
    p.add_argument("--workers", type=int)
    p.add_argument("--cores", type=int, default=1, help="cpu cores per worker")
    p.add_argument("--work-packet-size", type=int)
    p.add_argument("--io-packet-size", type=int)
    p.add_argument("--max-retries", type=int)
    p.add_argument("--no-pipelining", action="store_true")
    p.add_argument("--chaos", metavar="WORKER:PACKETS", help="kill WORKER after it commits PACKETS packets")
    p.add_argument("--add-worker-at", type=float, metavar="FRACTION")
    p.add_argument("--report", help="write the run report as JSON here")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("export", help="write a column's payloads plus a .lengths sidecar")
    p.add_argument("table")
    p.add_argument("column")
    p.add_argument("path")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("inspect", help="print a table manifest, or per-sequence required sets of a job")
    p.add_argument("table", nargs="?")
    p.add_argument("--index", action="store_true", help="list keyframe index entries")
    p.add_argument("--required", help="decode counters for these frames, e.g. 0:10,42")
    p.add_argument("--job", help="dump required sets for this job file instead")
    p.add_argument("--points", help="requested output points for --job (default: the job's)")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("bench", help="decode-work benchmark over access patterns and encodings (CSV)")
    p.add_argument("table")
    p.add_argument("--column", default="frame")
    p.add_argument("--patterns", nargs="+", default=list(PATTERNS))
    p.add_argument("--smallgop", type=int, default=24, help="keyframe interval of the re-encoded variant (0 = skip)")
    p.add_argument("--no-strided", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="also write the CSV here")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(message)s")
    if args.command == "inspect" and not args.table and not args.job:
        parser.error("inspect needs a table or --job")
    try:
        return args.func(args)
    except (ExecutionError, StoreError, CorruptRecord, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (GraphError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
