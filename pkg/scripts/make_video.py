"""Write a synthetic raw frame file: a slowly drifting low-entropy pattern with occasional scene cuts.

    python scripts/make_video.py out.raw --frames 18000 --frame-size 256
"""

import argparse

import numpy as np


def synth_frames(n: int, frame_size: int, seed: int = 0, cut_every: int = 900):
    rng = np.random.default_rng(seed)
    base = rng.integers(0, 4, frame_size, dtype=np.uint8) * 16
    for i in range(n):
        if cut_every and i and i % cut_every == 0:
            base = rng.integers(0, 4, frame_size, dtype=np.uint8) * 16
        frame = base.copy()
        # a small moving block keeps consecutive frames different but compressible
        pos = (i * 3) % frame_size
        frame[pos : pos + 8] += 1
        yield frame.tobytes()


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("path")
    p.add_argument("--frames", type=int, default=18000)
    p.add_argument("--frame-size", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    with open(args.path, "wb") as f:
        for fr in synth_frames(args.frames, args.frame_size, args.seed):
            f.write(fr)
    print(f"wrote {args.frames} frames of {args.frame_size} bytes to {args.path}")


if __name__ == "__main__":
    main()
