"""Operator surface for the pipeline.

synth > preprocess > extract > rasterize > train-vae > train > sample > eval,
plus `show` for quick figures. Every command takes --seed and derives all of
its randomness from it with labeled splits, so reruns are bit-reproducible.

Exit codes: 0 ok, 2 bad input, 3 resource cap tripped, 4 invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import synth
from .diffusion import linear_schedule, training_loss
from .diffusion import sample as draw_sample
from .errors import BadInputError, InvariantError, ResourceCapError
from .geometry import (NormStats, PointCloud, farthest_point_sample,
                       load_cloud, normalize, save_cloud_binary)
from .homology import (PersistenceDiagram, build_vr_filtration, load_diagrams,
                       persistence_diagrams, save_diagrams)
from .metrics import chamfer, coverage, emd, one_nna
from .model import ModelConfig, init_params, load_config, save_config
from .pimage import dataset_spec, load_image, rasterize, save_image
from .rng import derive_seed, make_rng
from . import tensor as T
from .vae import (VaeConfig, init_vae_params, pack_pair, sample_prior,
                  train_vae)

PI_DIMS = (1, 2)


# ---------------------------------------------------------------------------
# small shared helpers

def _hash_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()[:16]


def _write_manifest(path: Path, rows: list[tuple[str, str, int, str]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "path", "n_points", "hash"])
        w.writerows(rows)


def _read_manifest(path: Path) -> list[dict]:
    path = Path(path)
    if not path.is_file():
        raise BadInputError(f"manifest not found: {path}")
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["id", "path", "n_points", "hash"]:
            raise BadInputError(f"{path}: bad manifest header {reader.fieldnames}")
        for rec in reader:
            rec["path"] = path.parent / rec["path"]
            rec["n_points"] = int(rec["n_points"])
            rows.append(rec)
    if not rows:
        raise BadInputError(f"{path}: manifest has no rows")
    return rows


def _write_history(path: Path, history: list[float]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "loss"])
        for i, v in enumerate(history):
            w.writerow([i, repr(v)])


def _save_vae_config(path: Path, cfg: VaeConfig) -> None:
    with open(path, "w") as fh:
        fh.write(f"pi_n = {cfg.pi_n}\n")
        fh.write(f"latent_dim = {cfg.latent_dim}\n")
        fh.write(f"hidden1 = {cfg.hidden[0]}\n")
        fh.write(f"hidden2 = {cfg.hidden[1]}\n")
        fh.write(f"kl_weight = {cfg.kl_weight!r}\n")


def _load_vae_config(path: Path) -> VaeConfig:
    vals = {}
    for ln, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in {"pi_n", "latent_dim", "hidden1", "hidden2", "kl_weight"}:
            raise BadInputError(f"{path}:{ln}: unknown key {key!r}")
        vals[key] = float(val) if key == "kl_weight" else int(val)
    missing = {"pi_n", "latent_dim", "hidden1", "hidden2", "kl_weight"} - set(vals)
    if missing:
        raise BadInputError(f"{path}: missing keys {sorted(missing)}")
    return VaeConfig(pi_n=vals["pi_n"], latent_dim=vals["latent_dim"],
                     hidden=(vals["hidden1"], vals["hidden2"]),
                     kl_weight=vals["kl_weight"])


def _model_config_from_args(args) -> ModelConfig:
    overrides = dict(V=args.voxel, p=args.patch, M_down=args.queries,
                     pi_n=args.pi_n)
    if args.size is not None:
        return ModelConfig.from_preset(args.size, **overrides)
    return ModelConfig(d=args.width, dit_depth=args.dit_depth,
                       n_heads=args.heads, resampler_depth=args.resampler_depth,
                       **overrides)


def _load_pi_pairs(pi_dir: Path, ids: list[str]):
    """Pixel arrays for each id, one (pi1, pi2) pair per cloud."""
    pairs = []
    for cid in ids:
        imgs = []
        for dim in PI_DIMS:
            p = pi_dir / f"{cid}.pi{dim}.tpi"
            if not p.is_file():
                raise BadInputError(f"missing persistence image {p}")
            imgs.append(load_image(p)[0].pixels)
        pairs.append(tuple(imgs))
    return pairs


# ---------------------------------------------------------------------------
# commands

def cmd_synth(args) -> int:
    shapes = tuple(s.strip() for s in args.shapes.split(",") if s.strip())
    paths = synth.write_dataset(args.out, args.count, args.n_points,
                                shapes=shapes, noise=args.noise, seed=args.seed)
    print(f"wrote {len(paths)} clouds to {args.out}")
    return 0


def cmd_preprocess(args) -> int:
    in_dir = Path(args.in_dir)
    files = sorted(in_dir.glob("*.tpc")) + sorted(in_dir.glob("*.txt"))
    if not files:
        raise BadInputError(f"no .tpc or .txt clouds under {in_dir}")
    out = Path(args.out)
    cloud_dir = out / "clouds"
    cloud_dir.mkdir(parents=True, exist_ok=True)

    clouds = []
    for f in files:
        c = load_cloud(f)
        if c.n > args.n_points:
            rng = make_rng(args.seed, f"subsample/{f.stem}")
            idx = np.sort(rng.choice(c.n, size=args.n_points, replace=False))
            c = PointCloud(c.points[idx], id=f.stem)
        else:
            c = PointCloud(c.points, id=f.stem)
        clouds.append(c)
    normed, stats = normalize(clouds)

    rows = []
    for c in normed:
        path = cloud_dir / f"{c.id}.tpc"
        save_cloud_binary(path, c)
        rows.append((c.id, str(path.relative_to(out)), c.n, _hash_file(path)))
    _write_manifest(out / "manifest.csv", rows)
    with open(out / "normstats.json", "w") as fh:
        json.dump({"mean": stats.mean.tolist(), "scale": stats.scale}, fh)
        fh.write("\n")
    print(f"preprocessed {len(rows)} clouds -> {out / 'manifest.csv'}")
    return 0


def cmd_extract(args) -> int:
    rows = _read_manifest(Path(args.manifest))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    # clouds are independent (own files, own seed label), so fan out; the
    # b_max reduction below is a max and ignores completion order
    def one(rec):
        cloud = load_cloud(rec["path"])
        k = min(args.n_pd, cloud.n)
        idx = farthest_point_sample(cloud, k, seed=derive_seed(args.seed, f"fps/{rec['id']}"))
        sub = PointCloud(cloud.points[idx], id=rec["id"])
        filt = build_vr_filtration(sub, max_dim=args.max_dim)
        dgms = persistence_diagrams(filt)
        local = {}
        for dim in range(args.max_dim):
            save_diagrams(out / f"{rec['id']}.pd{dim}.csv", {dim: dgms[dim]},
                          n_points=sub.n, r_max=filt.r_max)
            pairs = dgms[dim].pairs
            local[dim] = float((pairs[:, 1] - pairs[:, 0]).max()) if pairs.size else 0.0
        return local

    b_max = {dim: 0.0 for dim in range(args.max_dim)}
    with ThreadPoolExecutor() as pool:
        for local in pool.map(one, rows):
            for dim, v in local.items():
                b_max[dim] = max(b_max[dim], v)
    meta = {"count": len(rows), "n_pd": args.n_pd, "max_dim": args.max_dim,
            "b_max": {str(d): v for d, v in b_max.items()}}
    with open(out / "extract_meta.json", "w") as fh:
        json.dump(meta, fh)
        fh.write("\n")
    print(f"extracted diagrams for {len(rows)} clouds -> {out}")
    return 0


def cmd_rasterize(args) -> int:
    pd_dir = Path(args.pd_dir)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dims = tuple(int(d) for d in args.dims.split(","))
    sigma = args.sigma_mode
    try:
        sigma = float(sigma)
    except ValueError:
        pass
    meta = {}
    written = 0
    for dim in dims:
        files = sorted(pd_dir.glob(f"*.pd{dim}.csv"))
        if not files:
            raise BadInputError(f"no .pd{dim}.csv files under {pd_dir}")
        def load_dim(f):
            # a diagram file with no finite pairs reloads as an empty dict
            return load_diagrams(f)[0].get(dim) or PersistenceDiagram(
                dimension=dim, pairs=np.zeros((0, 2)), essential=np.zeros(0))

        loaded = [(f.name.split(".pd")[0], load_dim(f)) for f in files]
        spec = dataset_spec([pd for _, pd in loaded], n=args.n, sigma_policy=sigma)

        def render(item):
            cid, pd = item
            save_image(out / f"{cid}.pi{dim}.tpi", rasterize(pd, spec), spec)

        with ThreadPoolExecutor() as pool:
            list(pool.map(render, loaded))
        written += len(loaded)
        meta[str(dim)] = {"n": spec.n, "sigma": spec.sigma, "b_max": spec.b_max,
                          "birth_range": list(spec.birth_range),
                          "pers_range": list(spec.pers_range),
                          "is_default": spec.is_default}
    with open(out / "rasterize_meta.json", "w") as fh:
        json.dump(meta, fh)
        fh.write("\n")
    print(f"rasterized {written} images -> {out}")
    return 0


def cmd_train_vae(args) -> int:
    pi_dir = Path(args.pi_dir)
    ids = sorted(f.name.split(".pi")[0] for f in pi_dir.glob(f"*.pi{PI_DIMS[0]}.tpi"))
    if not ids:
        raise BadInputError(f"no persistence images under {pi_dir}")
    pairs = _load_pi_pairs(pi_dir, ids)
    images = np.stack([pack_pair(a, b) for a, b in pairs])
    n = pairs[0][0].shape[0]
    cfg = VaeConfig(pi_n=n, latent_dim=args.latent, kl_weight=args.kl_weight)
    params = init_vae_params(cfg, seed=args.seed)
    steps = args.steps
    if args.epochs is not None:
        steps = args.epochs * max(1, int(np.ceil(len(images) / args.batch)))
    history = train_vae(params, cfg, images, steps=steps, lr=args.lr,
                        batch_size=args.batch, seed=args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    T.save_checkpoint(out, params)
    _save_vae_config(out.with_suffix(".cfg"), cfg)
    _write_history(out.parent / "vae_history.csv", history)
    print(f"vae loss {history[0]:.4f} -> {history[-1]:.4f} over {steps} steps; "
          f"saved {out}")
    return 0


def cmd_train(args) -> int:
    rows = _read_manifest(Path(args.manifest))
    config = _model_config_from_args(args)
    pi_dir = Path(args.pi_dir)
    clouds = [load_cloud(rec["path"]).points for rec in rows]
    pairs = _load_pi_pairs(pi_dir, [rec["id"] for rec in rows])
    for a, b in pairs:
        if a.shape != (config.pi_n, config.pi_n):
            raise BadInputError(f"image grid {a.shape} does not match model "
                                f"pi_n={config.pi_n}; re-rasterize or pass --pi-n")
    sched = linear_schedule(T=config.T)
    params = init_params(config, seed=args.seed)

    history = []
    for step in range(args.steps):
        rng = make_rng(args.seed, f"train/{step}")
        total = None
        for _ in range(args.batch):
            i = int(rng.integers(0, len(clouds)))
            loss, _t = training_loss(params, config, clouds[i], pairs[i][0],
                                     pairs[i][1], sched, rng)
            total = loss if total is None else T.add(total, loss)
        total = T.scale(total, 1.0 / args.batch)
        params.zero_grad()
        T.backward(total)
        T.adam_step(params, args.lr)
        history.append(float(total.data))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    T.save_checkpoint(out, params)
    save_config(out.with_suffix(".cfg"), config)
    _write_history(out.parent / "train_history.csv", history)
    print(f"train loss {history[0]:.4f} -> {history[-1]:.4f} over {args.steps} "
          f"steps; saved {out}")
    return 0


def cmd_sample(args) -> int:
    model_path = Path(args.model)
    config = load_config(model_path.with_suffix(".cfg"))
    params = T.load_checkpoint(model_path)
    sched = linear_schedule(T=config.T)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if args.pi_source == "vae":
        vae_path = Path(args.vae)
        vae_cfg = _load_vae_config(vae_path.with_suffix(".cfg"))
        if vae_cfg.pi_n != config.pi_n:
            raise BadInputError(f"vae grid {vae_cfg.pi_n} does not match model "
                                f"pi_n {config.pi_n}")
        vae_params = T.load_checkpoint(vae_path)

        def pi_source(i):
            rng = make_rng(args.seed, f"prior/{i}")
            return sample_prior(vae_params, vae_cfg, rng)
    elif args.pi_source == "zero":
        def pi_source(i):
            z = np.zeros((config.pi_n, config.pi_n))
            return z, z
    else:  # files
        pi_dir = Path(args.pi_dir)
        ids = sorted(f.name.split(".pi")[0]
                     for f in pi_dir.glob(f"*.pi{PI_DIMS[0]}.tpi"))
        if not ids:
            raise BadInputError(f"no persistence images under {pi_dir}")
        pairs = _load_pi_pairs(pi_dir, ids)

        def pi_source(i):
            return pairs[i % len(pairs)]

    for i in range(args.count):
        pi1, pi2 = pi_source(i)
        cloud = draw_sample(params, config, sched, pi1, pi2, args.n_points,
                            seed=derive_seed(args.seed, f"sample/{i}"),
                            steps_override=args.steps,
                            variance_mode=args.variance_mode)
        save_cloud_binary(out / f"sample_{i:03d}.tpc",
                          PointCloud(cloud.points, id=f"sample_{i:03d}"))
    print(f"wrote {args.count} samples to {out}")
    return 0


def cmd_eval(args) -> int:
    gen_files = sorted(Path(args.gen_dir).glob("*.tpc"))
    if not gen_files:
        raise BadInputError(f"no generated clouds under {args.gen_dir}")
    gen = [load_cloud(f).points for f in gen_files]
    ref = [load_cloud(rec["path"]).points
           for rec in _read_manifest(Path(args.ref_manifest))]

    n_min = min(min(len(p) for p in gen), min(len(p) for p in ref))

    def shrink(clouds, kind):
        out = []
        for i, p in enumerate(clouds):
            if len(p) > n_min:
                rng = make_rng(args.seed, f"eval-sub/{kind}/{i}")
                p = p[np.sort(rng.choice(len(p), size=n_min, replace=False))]
            out.append(p)
        return out

    gen, ref = shrink(gen, "gen"), shrink(ref, "ref")
    results = [
        ("1nna", "cd", one_nna(gen, ref, dist=chamfer)),
        ("1nna", "emd", one_nna(gen, ref, dist=emd)),
        ("cov", "cd", coverage(gen, ref, dist=chamfer)),
        ("cov", "emd", coverage(gen, ref, dist=emd)),
    ]
    for _, _, v in results:
        if not np.isfinite(v):
            raise InvariantError("non-finite metric value")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "distance", "value"])
        for name, dist_name, v in results:
            w.writerow([name, dist_name, repr(v)])
    for name, dist_name, v in results:
        print(f"{name}/{dist_name}: {v:.4f}")
    return 0


# ---------------------------------------------------------------------------
# figures

_SVG_SIZE = 360
_SVG_MARGIN = 40
_DIM_COLORS = {0: "#4477aa", 1: "#ee6677", 2: "#228833", 3: "#ccbb44"}


def _pd_svg(diagrams: dict, meta: dict) -> str:
    lo = float(_SVG_MARGIN)
    hi = float(_SVG_SIZE - _SVG_MARGIN)
    axis_max = meta.get("r_max", 0.0)
    for pd in diagrams.values():
        if pd.pairs.size:
            axis_max = max(axis_max, float(pd.pairs.max()))
        if pd.essential.size:
            axis_max = max(axis_max, float(pd.essential.max()))
    if axis_max <= 0:
        axis_max = 1.0

    def sx(v):
        return lo + (hi - lo) * v / axis_max

    def sy(v):
        return hi - (hi - lo) * v / axis_max

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_SVG_SIZE}" '
        f'height="{_SVG_SIZE}" viewBox="0 0 {_SVG_SIZE} {_SVG_SIZE}">',
        f'<rect x="{lo:.1f}" y="{lo:.1f}" width="{hi - lo:.1f}" '
        f'height="{hi - lo:.1f}" fill="none" stroke="#888"/>',
        f'<line x1="{lo:.1f}" y1="{hi:.1f}" x2="{hi:.1f}" y2="{lo:.1f}" '
        f'stroke="#bbb" stroke-dasharray="4 3"/>',
    ]
    for dim in sorted(diagrams):
        pd = diagrams[dim]
        color = _DIM_COLORS.get(dim, "#000")
        for b, d in pd.pairs.tolist():
            parts.append(f'<circle cx="{sx(b):.2f}" cy="{sy(d):.2f}" r="3" '
                         f'fill="{color}" fill-opacity="0.75"/>')
        for b in pd.essential.tolist():
            # classes that never die sit on the top edge as open squares
            parts.append(f'<rect x="{sx(b) - 3:.2f}" y="{lo - 3:.2f}" width="6" '
                         f'height="6" fill="none" stroke="{color}"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _pi_pgm(pixels: np.ndarray) -> str:
    peak = float(pixels.max())
    if peak > 0:
        gray = np.rint(pixels / peak * 255).astype(int)
    else:
        gray = np.zeros_like(pixels, dtype=int)
    lines = [f"P2", f"{pixels.shape[1]} {pixels.shape[0]}", "255"]
    for row in gray:
        lines.append(" ".join(str(v) for v in row))
    return "\n".join(lines) + "\n"


def cmd_show(args) -> int:
    src = Path(args.input)
    if not src.is_file():
        raise BadInputError(f"no such file: {src}")
    out = Path(args.out)
    if src.suffix == ".csv":
        diagrams, meta = load_diagrams(src)
        out.write_text(_pd_svg(diagrams, meta))
    elif src.suffix == ".tpi":
        img, _spec = load_image(src)
        out.write_text(_pi_pgm(img.pixels))
    else:
        raise BadInputError(f"cannot show {src.suffix!r} files; "
                            "expected a .csv diagram or .tpi image")
    print(f"wrote {out}")
    return 0


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="topogen",
                                 description="topology-conditioned point cloud "
                                             "generation pipeline")
    sub = ap.add_subparsers(dest="command", required=True)

    def seeded(p):
        p.add_argument("--seed", type=int, default=0)
        return p

    p = seeded(sub.add_parser("synth", help="write a synthetic dataset"))
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=40)
    p.add_argument("--n-points", type=int, default=2048)
    p.add_argument("--shapes", default="sphere,torus")
    p.add_argument("--noise", type=float, default=0.01)
    p.set_defaults(fn=cmd_synth)

    p = seeded(sub.add_parser("preprocess", help="normalize and manifest clouds"))
    p.add_argument("--in-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n-points", type=int, default=2048)
    p.set_defaults(fn=cmd_preprocess)

    p = seeded(sub.add_parser("extract", help="persistence diagrams per cloud"))
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n-pd", type=int, default=64)
    p.add_argument("--max-dim", type=int, default=3)
    p.set_defaults(fn=cmd_extract)

    p = seeded(sub.add_parser("rasterize", help="diagrams to persistence images"))
    p.add_argument("--pd-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--sigma-mode", default="default",
                   help="preset name or a positive number")
    p.add_argument("--dims", default="1,2")
    p.set_defaults(fn=cmd_rasterize)

    p = seeded(sub.add_parser("train-vae", help="fit the image-pair prior"))
    p.add_argument("--pi-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--epochs", type=int, default=None,
                   help="overrides --steps as passes over the dataset")
    p.add_argument("--lr", type=float, default=5e-3)
    p.add_argument("--batch", type=int, default=10)
    p.add_argument("--latent", type=int, default=32)
    p.add_argument("--kl-weight", type=float, default=1.0)
    p.set_defaults(fn=cmd_train_vae)

    def model_flags(p):
        p.add_argument("--size", choices=["S", "B", "L", "XL"], default=None)
        p.add_argument("--voxel", type=int, default=32)
        p.add_argument("--patch", type=int, default=4)
        p.add_argument("--queries", type=int, default=96)
        p.add_argument("--pi-n", type=int, default=16)
        p.add_argument("--width", type=int, default=1152,
                       help="hidden width when no --size preset is given")
        p.add_argument("--dit-depth", type=int, default=28)
        p.add_argument("--heads", type=int, default=16)
        p.add_argument("--resampler-depth", type=int, default=6)
        return p

    p = model_flags(seeded(sub.add_parser("train", help="fit the denoiser")))
    p.add_argument("--manifest", required=True)
    p.add_argument("--pi-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=300)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch", type=int, default=1)
    p.set_defaults(fn=cmd_train)

    p = seeded(sub.add_parser("sample", help="draw clouds from a checkpoint"))
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--n-points", type=int, default=2048)
    p.add_argument("--steps", type=int, default=None,
                   help="strided sampler steps; default runs all T")
    p.add_argument("--variance-mode", choices=["beta", "posterior"],
                   default="posterior")
    p.add_argument("--pi-source", choices=["vae", "files", "zero"],
                   default="vae")
    p.add_argument("--vae", default=None, help="vae checkpoint for --pi-source vae")
    p.add_argument("--pi-dir", default=None, help="image dir for --pi-source files")
    p.set_defaults(fn=cmd_sample)

    p = seeded(sub.add_parser("eval", help="score generated against reference"))
    p.add_argument("--gen-dir", required=True)
    p.add_argument("--ref-manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("show", help="render a diagram or image to SVG/PGM")
    p.add_argument("input")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_show)

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.fn is cmd_sample and args.pi_source == "vae" and not args.vae:
        print("error: --pi-source vae needs --vae", file=sys.stderr)
        return 2
    if args.fn is cmd_sample and args.pi_source == "files" and not args.pi_dir:
        print("error: --pi-source files needs --pi-dir", file=sys.stderr)
        return 2
    try:
        return args.fn(args)
    except BadInputError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except ResourceCapError as e:
        print(f"resource cap: {e}", file=sys.stderr)
        return 3
    except InvariantError as e:
        print(f"invariant violation: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
