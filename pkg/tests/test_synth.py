import numpy as np
import pytest

from topogen.errors import BadInputError
from topogen.synth import sphere, torus, double_torus, make_cloud, write_dataset
from topogen.geometry import load_cloud_binary


def test_sphere_on_surface():
    c = sphere(500, radius=2.0)
    r = np.linalg.norm(c.points, axis=1)
    assert np.allclose(r, 2.0, atol=1e-12)
    # centroid near origin for an even covering
    assert np.linalg.norm(c.points.mean(axis=0)) < 0.02


def test_torus_on_surface():
    c = torus(500, ring=1.0, tube=0.35)
    rad = np.sqrt(c.points[:, 0] ** 2 + c.points[:, 1] ** 2)
    dist = np.sqrt((rad - 1.0) ** 2 + c.points[:, 2] ** 2)
    assert np.allclose(dist, 0.35, atol=1e-12)


def test_double_torus_two_lobes():
    c = double_torus(600, ring=1.0, tube=0.35)
    assert c.n == 600
    x = c.points[:, 0]
    assert (x < -0.5).sum() > 100 and (x > 0.5).sum() > 100
    # culled the weld interior: nothing deep inside either solid tube
    for cx in (-0.825, 0.825):
        q = c.points - np.array([cx, 0, 0.0])
        rad = np.sqrt(q[:, 0] ** 2 + q[:, 1] ** 2)
        inside = (rad - 1.0) ** 2 + q[:, 2] ** 2 < (0.9 * 0.35) ** 2
        assert inside.sum() == 0


def test_noise_seeded_and_scaled():
    a = torus(200, noise=0.02, seed=5)
    b = torus(200, noise=0.02, seed=5)
    c = torus(200, noise=0.02, seed=6)
    base = torus(200)
    assert np.array_equal(a.points, b.points)
    assert not np.array_equal(a.points, c.points)
    disp = np.linalg.norm(a.points - base.points, axis=1)
    assert 0.01 < disp.mean() < 0.05


def test_noise_zero_is_deterministic():
    assert np.array_equal(sphere(64).points, sphere(64, seed=99).points)


def test_make_cloud_rejects_unknown():
    with pytest.raises(BadInputError):
        make_cloud("klein_bottle", 100)


def test_write_dataset_roundtrip(tmp_path):
    paths = write_dataset(tmp_path, n_clouds=4, n_points=128, seed=3)
    assert len(paths) == 4
    names = [p.name for p in paths]
    assert names == sorted(names)
    assert "sphere" in names[0] and "torus" in names[1]
    c = load_cloud_binary(paths[0])
    assert c.n == 128
    again = write_dataset(tmp_path / "again", n_clouds=4, n_points=128, seed=3)
    assert np.array_equal(load_cloud_binary(again[2]).points,
                          load_cloud_binary(paths[2]).points)
