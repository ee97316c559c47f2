"""Wall-time scaling of a byte-histogram job with worker count, and pipelining on vs off.

    python scripts/scaling.py --frames 500000 --workers 1 2 4 8

Workers are threads in one process. numpy releases the GIL for the heavy
parts of decode and histogramming, so speedup is bounded by the host's
hardware threads and by the Python-level share of each packet.
"""

import argparse
import os
import tempfile
import time

from framedag.executor import ExecConfig, run_job
from framedag.framestore import Store
from framedag.graph import Edge, GraphSpec, JobSpec, Map, OpDecl

from make_video import synth_frames


def hist_job(output: str) -> JobSpec:
    g = GraphSpec((OpDecl("hist", Map(), kernel="byte_histogram", batch=256),), (Edge("frames", "hist", 0),), {"hist": "hist"})
    return JobSpec(g, {"frames": "video.frame"}, output)


def timed(store: Store, output: str, cfg: ExecConfig) -> float:
    store.drop(output)
    t0 = time.perf_counter()
    run_job(hist_job(output), store, cfg)
    return time.perf_counter() - t0


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--frames", type=int, default=500_000)
    p.add_argument("--frame-size", type=int, default=256)
    p.add_argument("--workers", type=int, nargs="+", default=[1, 2, 4, 8])
    p.add_argument("--packet", type=int, default=2048)
    args = p.parse_args()
    print(f"host cpus: {os.cpu_count()}")
    with tempfile.TemporaryDirectory() as tmp:
        store = Store(tmp)
        store.ingest_frames("video", "frame", synth_frames(args.frames, args.frame_size), 64)
        base = None
        for w in args.workers:
            t = timed(store, f"h{w}", ExecConfig(workers=w, work_packet_size=args.packet, io_packet_size=args.packet))
            base = base or t
            print(f"workers={w:<3d} {t:8.2f} s  speedup {base / t:5.2f}x")
        on = timed(store, "pon", ExecConfig(work_packet_size=args.packet, io_packet_size=args.packet))
        off = timed(store, "poff", ExecConfig(work_packet_size=args.packet, io_packet_size=args.packet, pipelining=False))
        print(f"pipelining on {on:.2f} s, off {off:.2f} s, gain {(off - on) / off:+.1%}")


if __name__ == "__main__":
    main()
