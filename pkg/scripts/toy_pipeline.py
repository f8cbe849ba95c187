"""Run the whole pipeline at toy scale in one go.

Synthesizes a sphere/torus dataset, preprocesses it, extracts diagrams,
rasterizes images, fits the image prior and the denoiser, samples, and
scores the samples. Everything happens under --workdir so intermediate
files can be inspected afterwards. Expect a few minutes on one core.

    python3 scripts/toy_pipeline.py --workdir runs/toy
"""

import argparse
import sys
import time
from pathlib import Path

from topogen.cli import main as cli

MICRO = ["--voxel", "16", "--patch", "4", "--queries", "96", "--pi-n", "16",
         "--width", "32", "--dit-depth", "2", "--heads", "4",
         "--resampler-depth", "2"]


def run(*args):
    argv = [str(a) for a in args]
    print(f"\n$ topogen {' '.join(argv)}", flush=True)
    rc = cli(argv)
    if rc != 0:
        sys.exit(rc)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--workdir", default="runs/toy")
    ap.add_argument("--clouds", type=int, default=40)
    ap.add_argument("--train-steps", type=int, default=2000)
    ap.add_argument("--samples", type=int, default=16)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    w = Path(args.workdir)
    t0 = time.time()
    run("synth", "--out", w / "raw", "--count", args.clouds,
        "--n-points", 256, "--seed", args.seed)
    run("preprocess", "--in-dir", w / "raw", "--out", w / "pre",
        "--n-points", 256, "--seed", args.seed)
    run("extract", "--manifest", w / "pre" / "manifest.csv",
        "--out", w / "pd", "--n-pd", 32, "--max-dim", 3, "--seed", args.seed)
    run("rasterize", "--pd-dir", w / "pd", "--out", w / "pi",
        "--n", 16, "--seed", args.seed)
    run("train-vae", "--pi-dir", w / "pi", "--out", w / "vae" / "vae.tck",
        "--steps", 1000, "--lr", 5e-3, "--seed", args.seed)
    run("train", "--manifest", w / "pre" / "manifest.csv",
        "--pi-dir", w / "pi", "--out", w / "model" / "model.tck",
        "--steps", args.train_steps, "--lr", 1e-3, "--seed", args.seed, *MICRO)
    run("sample", "--model", w / "model" / "model.tck", "--out", w / "gen",
        "--count", args.samples, "--n-points", 256, "--steps", 50,
        "--pi-source", "vae", "--vae", w / "vae" / "vae.tck",
        "--seed", args.seed)
    run("eval", "--gen-dir", w / "gen",
        "--ref-manifest", w / "pre" / "manifest.csv",
        "--out", w / "metrics.csv", "--seed", args.seed)
    print(f"\ndone in {time.time() - t0:.0f}s; outputs under {w}")


if __name__ == "__main__":
    main()
