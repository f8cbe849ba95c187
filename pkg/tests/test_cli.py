"""End-to-end checks of the command line surface.

A module-scoped fixture runs the full pipeline once on a six-cloud synthetic
set; individual tests poke at the files it leaves behind. Everything runs
in-process through cli.main so exit codes are observable directly.
"""

import csv
import json
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from topogen import cli
from topogen.geometry import load_cloud
from topogen.homology import load_diagrams
from topogen.model import ModelConfig, load_config
from topogen.pimage import GridSpec, PersistenceImage, load_image, save_image

DATA = Path(__file__).parent / "data"

MICRO_MODEL = ["--voxel", "16", "--patch", "4", "--queries", "8", "--pi-n", "8",
               "--width", "32", "--dit-depth", "1", "--heads", "4",
               "--resampler-depth", "1"]


def run(*args) -> int:
    return cli.main([str(a) for a in args])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert run("synth", "--out", root / "raw", "--count", 6,
               "--n-points", 64, "--seed", 0) == 0
    assert run("preprocess", "--in-dir", root / "raw", "--out", root / "pre",
               "--n-points", 48, "--seed", 1) == 0
    assert run("extract", "--manifest", root / "pre" / "manifest.csv",
               "--out", root / "pd", "--n-pd", 16, "--max-dim", 3,
               "--seed", 2) == 0
    assert run("rasterize", "--pd-dir", root / "pd", "--out", root / "pi",
               "--n", 8, "--seed", 3) == 0
    return root


@pytest.fixture(scope="module")
def trained(pipeline):
    assert run("train-vae", "--pi-dir", pipeline / "pi",
               "--out", pipeline / "vae" / "vae.tck",
               "--steps", 30, "--seed", 4) == 0
    assert run("train", "--manifest", pipeline / "pre" / "manifest.csv",
               "--pi-dir", pipeline / "pi",
               "--out", pipeline / "model" / "model.tck",
               "--steps", 3, "--seed", 5, *MICRO_MODEL) == 0
    return pipeline / "vae" / "vae.tck", pipeline / "model" / "model.tck"


@pytest.fixture(scope="module")
def sampled(pipeline, trained):
    vae, model = trained
    out = pipeline / "gen"
    assert run("sample", "--model", model, "--out", out, "--count", 2,
               "--n-points", 32, "--steps", 4, "--pi-source", "vae",
               "--vae", vae, "--seed", 6) == 0
    return out


# ---------------------------------------------------------------------------
# synth / preprocess

def test_synth_deterministic(tmp_path):
    for d in ("a", "b"):
        assert run("synth", "--out", tmp_path / d, "--count", 3,
                   "--n-points", 32, "--seed", 9) == 0
    assert run("synth", "--out", tmp_path / "c", "--count", 3,
               "--n-points", 32, "--seed", 10) == 0
    files = sorted(p.name for p in (tmp_path / "a").glob("*.tpc"))
    assert len(files) == 3
    same = [(tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
            for f in files]
    assert all(same)
    diff = [(tmp_path / "a" / f).read_bytes() != (tmp_path / "c" / f).read_bytes()
            for f in files]
    assert any(diff)


def test_preprocess_manifest_and_normalization(pipeline):
    rows = list(csv.DictReader(open(pipeline / "pre" / "manifest.csv")))
    assert len(rows) == 6
    assert set(rows[0]) == {"id", "path", "n_points", "hash"}
    pts = [load_cloud(pipeline / "pre" / r["path"]).points for r in rows]
    assert all(p.shape == (48, 3) for p in pts)
    pooled = np.concatenate(pts)
    assert np.allclose(pooled.mean(axis=0), 0.0, atol=1e-9)
    assert np.isclose(np.std(pooled), 1.0, atol=1e-12)
    stats = json.load(open(pipeline / "pre" / "normstats.json"))
    assert len(stats["mean"]) == 3 and stats["scale"] > 0


def test_preprocess_idempotent(pipeline):
    manifest = pipeline / "pre" / "manifest.csv"
    before = manifest.read_bytes()
    assert run("preprocess", "--in-dir", pipeline / "raw",
               "--out", pipeline / "pre", "--n-points", 48, "--seed", 1) == 0
    assert manifest.read_bytes() == before


def test_preprocess_missing_dir_exits_2(tmp_path):
    assert run("preprocess", "--in-dir", tmp_path / "nope",
               "--out", tmp_path / "out") == 2


def test_extract_missing_manifest_exits_2(tmp_path):
    assert run("extract", "--manifest", tmp_path / "nope.csv",
               "--out", tmp_path / "pd") == 2


# ---------------------------------------------------------------------------
# extract / rasterize

def test_extract_outputs(pipeline):
    files = sorted((pipeline / "pd").glob("*.csv"))
    assert len(files) == 6 * 3
    meta = json.load(open(pipeline / "pd" / "extract_meta.json"))
    assert meta["count"] == 6 and meta["n_pd"] == 16
    assert set(meta["b_max"]) == {"0", "1", "2"}
    assert all(v >= 0 for v in meta["b_max"].values())


def _torus_manifest(pipeline):
    path = pipeline / "one_torus.csv"
    path.write_text("id,path,n_points,hash\n"
                    "0001_torus,pre/clouds/0001_torus.tpc,48,x\n")
    return path


def test_extract_torus_has_loops(pipeline):
    mani = _torus_manifest(pipeline)
    out = pipeline / "pd_torus32"
    assert run("extract", "--manifest", mani, "--out", out,
               "--n-pd", 32, "--max-dim", 2, "--seed", 2) == 0
    dgms, meta = load_diagrams(out / "0001_torus.pd1.csv")
    assert meta["n_points"] == 32
    assert dgms[1].pairs.shape[0] >= 1


def test_extract_single_point_has_no_high_dims(pipeline):
    mani = _torus_manifest(pipeline)
    out = pipeline / "pd_npd1"
    assert run("extract", "--manifest", mani, "--out", out,
               "--n-pd", 1, "--max-dim", 3, "--seed", 2) == 0
    # one surviving component, nothing above dimension zero
    d0, _ = load_diagrams(out / "0001_torus.pd0.csv")
    assert d0[0].essential.shape == (1,)
    for dim in (1, 2):
        dk, _ = load_diagrams(out / f"0001_torus.pd{dim}.csv")
        assert dk.get(dim) is None


def test_rasterize_outputs(pipeline):
    files = sorted((pipeline / "pi").glob("*.tpi"))
    assert len(files) == 6 * 2
    meta = json.load(open(pipeline / "pi" / "rasterize_meta.json"))
    assert set(meta) == {"1", "2"} and meta["1"]["n"] == 8
    for f in files:
        img, spec = load_image(f)
        assert img.pixels.shape == (8, 8)
        assert np.all(img.pixels >= 0)
    # rerun into a fresh dir lands byte-identical files
    assert run("rasterize", "--pd-dir", pipeline / "pd",
               "--out", pipeline / "pi2", "--n", 8, "--seed", 3) == 0
    name = files[0].name
    assert (pipeline / "pi2" / name).read_bytes() == files[0].read_bytes()


def test_rasterize_empty_collection_gives_zero_images(pipeline):
    out = pipeline / "pi_npd1"
    assert run("rasterize", "--pd-dir", pipeline / "pd_npd1",
               "--out", out, "--n", 8, "--seed", 3) == 0
    meta = json.load(open(out / "rasterize_meta.json"))
    assert meta["1"]["is_default"] is True
    img, _ = load_image(out / "0001_torus.pi1.tpi")
    assert np.count_nonzero(img.pixels) == 0


# ---------------------------------------------------------------------------
# training / sampling / eval

def test_train_vae_history(pipeline, trained):
    hist = list(csv.DictReader(open(pipeline / "vae" / "vae_history.csv")))
    assert len(hist) == 30
    losses = [float(r["loss"]) for r in hist]
    assert all(np.isfinite(losses))
    assert losses[-1] < losses[0]
    assert (pipeline / "vae" / "vae.cfg").is_file()


def test_train_vae_epochs_override(pipeline):
    out = pipeline / "vae_ep" / "vae.tck"
    assert run("train-vae", "--pi-dir", pipeline / "pi", "--out", out,
               "--epochs", 2, "--batch", 4, "--seed", 4) == 0
    hist = list(csv.DictReader(open(out.parent / "vae_history.csv")))
    assert len(hist) == 2 * 2    # ceil(6 / 4) batches per epoch


def test_train_config_roundtrip(pipeline, trained):
    _, model = trained
    cfg = load_config(model.with_suffix(".cfg"))
    assert cfg == ModelConfig(V=16, p=4, d=32, n_heads=4, dit_depth=1,
                              resampler_depth=1, M_down=8, pi_n=8)
    hist = list(csv.DictReader(open(model.parent / "train_history.csv")))
    assert len(hist) == 3
    assert all(np.isfinite(float(r["loss"])) for r in hist)


def test_train_grid_mismatch_exits_2(pipeline):
    args = MICRO_MODEL.copy()
    args[args.index("--pi-n") + 1] = "16"
    assert run("train", "--manifest", pipeline / "pre" / "manifest.csv",
               "--pi-dir", pipeline / "pi", "--out", pipeline / "bad.tck",
               "--steps", 1, *args) == 2


def test_sample_deterministic(pipeline, trained, sampled):
    vae, model = trained
    files = sorted(sampled.glob("*.tpc"))
    assert len(files) == 2
    assert all(load_cloud(f).points.shape == (32, 3) for f in files)
    assert run("sample", "--model", model, "--out", pipeline / "gen_b",
               "--count", 2, "--n-points", 32, "--steps", 4,
               "--pi-source", "vae", "--vae", vae, "--seed", 6) == 0
    assert run("sample", "--model", model, "--out", pipeline / "gen_c",
               "--count", 2, "--n-points", 32, "--steps", 4,
               "--pi-source", "vae", "--vae", vae, "--seed", 7) == 0
    name = files[0].name
    assert (pipeline / "gen_b" / name).read_bytes() == files[0].read_bytes()
    assert (pipeline / "gen_c" / name).read_bytes() != files[0].read_bytes()


def test_sample_alternate_pi_sources(pipeline, trained):
    _, model = trained
    assert run("sample", "--model", model, "--out", pipeline / "gen_zero",
               "--count", 1, "--n-points", 16, "--steps", 2,
               "--pi-source", "zero", "--seed", 6) == 0
    assert run("sample", "--model", model, "--out", pipeline / "gen_files",
               "--count", 1, "--n-points", 16, "--steps", 2,
               "--pi-source", "files", "--pi-dir", pipeline / "pi",
               "--seed", 6) == 0
    assert run("sample", "--model", model, "--out", pipeline / "gen_bad",
               "--count", 1, "--pi-source", "vae") == 2


def test_sample_truncated_vae_config_exits_2(pipeline, trained):
    vae, model = trained
    crippled = pipeline / "crippled.tck"
    crippled.write_bytes(vae.read_bytes())
    lines = vae.with_suffix(".cfg").read_text().splitlines()
    crippled.with_suffix(".cfg").write_text("\n".join(lines[:-1]) + "\n")
    assert run("sample", "--model", model, "--out", pipeline / "gen_x",
               "--count", 1, "--pi-source", "vae", "--vae", crippled) == 2


def test_eval_identical_sets(pipeline):
    out = pipeline / "metrics_self.csv"
    assert run("eval", "--gen-dir", pipeline / "pre" / "clouds",
               "--ref-manifest", pipeline / "pre" / "manifest.csv",
               "--out", out, "--seed", 8) == 0
    rows = {(r["metric"], r["distance"]): float(r["value"])
            for r in csv.DictReader(open(out))}
    assert rows[("1nna", "cd")] == 0.0
    assert rows[("1nna", "emd")] == 0.0
    assert rows[("cov", "cd")] == 100.0
    assert rows[("cov", "emd")] == 100.0


def test_eval_on_samples(pipeline, sampled):
    out = pipeline / "metrics_gen.csv"
    assert run("eval", "--gen-dir", sampled,
               "--ref-manifest", pipeline / "pre" / "manifest.csv",
               "--out", out, "--seed", 8) == 0
    rows = list(csv.DictReader(open(out)))
    assert len(rows) == 4
    assert all(np.isfinite(float(r["value"])) for r in rows)


def test_eval_emd_cap_exits_3(tmp_path):
    assert run("synth", "--out", tmp_path / "raw", "--count", 1,
               "--n-points", 1025, "--seed", 0) == 0
    assert run("preprocess", "--in-dir", tmp_path / "raw",
               "--out", tmp_path / "pre", "--n-points", 1025) == 0
    assert run("eval", "--gen-dir", tmp_path / "pre" / "clouds",
               "--ref-manifest", tmp_path / "pre" / "manifest.csv",
               "--out", tmp_path / "m.csv") == 3


def test_eval_nonfinite_exits_4(pipeline, monkeypatch):
    monkeypatch.setattr(cli, "one_nna", lambda *a, **k: float("nan"))
    assert run("eval", "--gen-dir", pipeline / "pre" / "clouds",
               "--ref-manifest", pipeline / "pre" / "manifest.csv",
               "--out", pipeline / "m_nan.csv") == 4


# ---------------------------------------------------------------------------
# show

def test_show_diagram_matches_golden(tmp_path):
    out = tmp_path / "scatter.svg"
    assert run("show", DATA / "scatter_case.csv", "--out", out) == 0
    assert out.read_bytes() == (DATA / "scatter_case.svg").read_bytes()


def test_show_image_matches_golden(tmp_path):
    out = tmp_path / "image.pgm"
    assert run("show", DATA / "image_case.tpi", "--out", out) == 0
    assert out.read_bytes() == (DATA / "image_case.pgm").read_bytes()


def test_show_empty_diagram_axes_only(tmp_path):
    src = tmp_path / "empty.pd1.csv"
    src.write_text("# topogen-pd v1 n_points=4 r_max=1.5\ndim,birth,death\n")
    out = tmp_path / "empty.svg"
    assert run("show", src, "--out", out) == 0
    svg = out.read_text()
    assert "<rect" in svg and "<line" in svg
    assert "<circle" not in svg


def test_show_single_hot_pixel_maxes_gray(tmp_path):
    px = np.zeros((4, 4))
    px[2, 1] = 0.37
    spec = GridSpec(n=4, birth_range=(0.0, 1.0), pers_range=(0.0, 1.0),
                    sigma=0.05, b_max=1.0)
    save_image(tmp_path / "hot.tpi", PersistenceImage(pixels=px, dim_tag=1), spec)
    out = tmp_path / "hot.pgm"
    assert run("show", tmp_path / "hot.tpi", "--out", out) == 0
    body = out.read_text().splitlines()[3:]
    vals = [int(v) for row in body for v in row.split()]
    assert sorted(vals)[-1] == 255 and sum(vals) == 255


def test_show_unknown_extension_exits_2(tmp_path):
    f = tmp_path / "x.txt"
    f.write_text("1 2 3\n")
    assert run("show", f, "--out", tmp_path / "x.svg") == 2


def test_pipeline_smoke_forty_clouds(tmp_path):
    # the whole operator loop at the documented toy scale, one core
    t0 = time.time()
    w = tmp_path
    flags = ["--voxel", "16", "--patch", "4", "--queries", "96",
             "--pi-n", "16", "--width", "32", "--dit-depth", "2",
             "--heads", "4", "--resampler-depth", "2"]
    assert run("synth", "--out", w / "raw", "--count", 40,
               "--n-points", 256, "--seed", 0) == 0
    assert run("preprocess", "--in-dir", w / "raw", "--out", w / "pre",
               "--n-points", 256, "--seed", 0) == 0
    assert run("extract", "--manifest", w / "pre" / "manifest.csv",
               "--out", w / "pd", "--n-pd", 32, "--max-dim", 3,
               "--seed", 0) == 0
    assert run("rasterize", "--pd-dir", w / "pd", "--out", w / "pi",
               "--n", 16, "--seed", 0) == 0
    assert run("train-vae", "--pi-dir", w / "pi",
               "--out", w / "vae" / "v.tck", "--steps", 200, "--seed", 0) == 0
    assert run("train", "--manifest", w / "pre" / "manifest.csv",
               "--pi-dir", w / "pi", "--out", w / "model" / "m.tck",
               "--steps", 300, "--seed", 0, *flags) == 0
    assert run("sample", "--model", w / "model" / "m.tck", "--out", w / "gen",
               "--count", 8, "--n-points", 256, "--steps", 25,
               "--pi-source", "vae", "--vae", w / "vae" / "v.tck",
               "--seed", 0) == 0
    assert run("eval", "--gen-dir", w / "gen",
               "--ref-manifest", w / "pre" / "manifest.csv",
               "--out", w / "metrics.csv", "--seed", 0) == 0
    rows = list(csv.DictReader(open(w / "metrics.csv")))
    assert len(rows) == 4
    assert all(np.isfinite(float(r["value"])) for r in rows)
    assert time.time() - t0 < 900


def test_module_invocation_smoke(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "topogen.cli", "synth",
                           "--out", str(tmp_path / "d"), "--count", "1",
                           "--n-points", "16"], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert len(list((tmp_path / "d").glob("*.tpc"))) == 1
