"""Decode-work comparison across access patterns and encodings on a synthetic column.

    python scripts/bench_access.py --frames 200000 --K 104 --out bench.csv
"""

import argparse
import tempfile

from framedag.bench import bench_access, to_csv
from framedag.framestore import Store

from make_video import synth_frames


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--frames", type=int, default=200_000)
    p.add_argument("--frame-size", type=int, default=16)
    p.add_argument("--K", type=int, default=104)
    p.add_argument("--store", help="store root (default: a temporary directory)")
    p.add_argument("--out")
    args = p.parse_args()
    with tempfile.TemporaryDirectory() as tmp:
        store = Store(args.store or tmp)
        store.ingest_frames("video", "frame", synth_frames(args.frames, args.frame_size), args.K)
        text = to_csv(bench_access(store, "video", "frame"))
    print(text, end="")
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)


if __name__ == "__main__":
    main()
