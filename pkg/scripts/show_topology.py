"""Render diagram and image figures for the built-in shapes.

For each shape: sample a dense cloud, take farthest-point landmarks, compute
persistence diagrams up to H2, rasterize H1/H2 images, and write one SVG
scatter per diagram plus one PGM per image into --out.

    python3 scripts/show_topology.py --out figs
"""

import argparse
from pathlib import Path

from topogen.cli import _pd_svg, _pi_pgm
from topogen.geometry import PointCloud, farthest_point_sample
from topogen.homology import build_vr_filtration, persistence_diagrams
from topogen.pimage import dataset_spec, rasterize
from topogen.synth import SHAPE_NAMES, make_cloud


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="figs")
    ap.add_argument("--dense", type=int, default=2048)
    ap.add_argument("--landmarks", type=int, default=48)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    per_shape = {}
    for shape in SHAPE_NAMES:
        cloud = make_cloud(shape, args.dense, noise=0.0, seed=args.seed)
        idx = farthest_point_sample(cloud, args.landmarks, seed=args.seed)
        filt = build_vr_filtration(PointCloud(cloud.points[idx]), max_dim=3)
        pds = persistence_diagrams(filt)
        per_shape[shape] = (filt, pds)
        svg = _pd_svg(pds, {"r_max": filt.r_max})
        (out / f"{shape}_pd.svg").write_text(svg)
        counts = {k: pds[k].pairs.shape[0] for k in pds}
        print(f"{shape}: finite pairs per dim {counts}")

    for dim in (1, 2):
        spec = dataset_spec([pds[dim] for _, pds in per_shape.values()], n=24)
        for shape, (_, pds) in per_shape.items():
            img = rasterize(pds[dim], spec)
            (out / f"{shape}_pi{dim}.pgm").write_text(_pi_pgm(img.pixels))

    print(f"figures written to {out}")


if __name__ == "__main__":
    main()
