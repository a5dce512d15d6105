from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cylstereo.errors import CylStereoError, DegenerateGeometry
from cylstereo.geometry import CameraIntrinsics, Extrinsics, ProjectionMatrix, compose_projection, project
from cylstereo.matching import INVALID
from cylstereo.reconstruction import (
    PointCloud,
    StereoPair,
    build_system,
    read_cloud_csv,
    read_ply,
    reconstruct_cloud,
    residual,
    triangulate,
    triangulate_many,
    write_cloud_csv,
    write_ply,
)
from cylstereo.scene import StereoRigSpec

from .conftest import random_rotation

RIG = StereoRigSpec(focal=800.0, baseline=60.0)
PAIR = RIG.stereo_pair()


def _views(P, pair=PAIR):
    return project(P, pair.M_left), project(P, pair.M_right)


def _same_camera_pair():
    m = ProjectionMatrix(np.hstack([np.eye(3), np.zeros((3, 1))]))
    return SimpleNamespace(M_left=m, M_right=m)


def test_canonical_matrices():
    C, D = build_system([0, 0], [0, 0], _same_camera_pair())
    assert np.array_equal(C, [[-1, 0, 0], [0, -1, 0], [-1, 0, 0], [0, -1, 0]])
    assert np.array_equal(D, np.zeros(4))


def test_scalar_expansion(rng):
    l = rng.normal(size=(3, 4))
    r = rng.normal(size=(3, 4))
    s = SimpleNamespace(M_left=ProjectionMatrix(l), M_right=ProjectionMatrix(r))
    ul, vl, ur, vr = 12.5, -3.25, 7.0, 41.0
    C, D = build_system([ul, vl], [ur, vr], s)
    for k in range(3):
        assert C[0, k] == pytest.approx(ul * l[2, k] - l[0, k], abs=1e-14)
        assert C[1, k] == pytest.approx(vl * l[2, k] - l[1, k], abs=1e-14)
        assert C[2, k] == pytest.approx(ur * r[2, k] - r[0, k], abs=1e-14)
        assert C[3, k] == pytest.approx(vr * r[2, k] - r[1, k], abs=1e-14)
    expect_d = [l[0, 3] - ul * l[2, 3], l[1, 3] - vl * l[2, 3], r[0, 3] - ur * r[2, 3], r[1, 3] - vr * r[2, 3]]
    assert np.allclose(D, expect_d, atol=1e-13)


def test_batched_matches_single(rng):
    pl = rng.uniform(0, 600, (7, 2))
    pr = rng.uniform(0, 600, (7, 2))
    C, D = build_system(pl, pr, PAIR)
    for i in range(7):
        c1, d1 = build_system(pl[i], pr[i], PAIR)
        assert np.array_equal(C[i], c1) and np.array_equal(D[i], d1)


def test_scaling_scales_rows():
    lam = 3.5
    scaled = SimpleNamespace(M_left=PAIR.M_left.scaled(lam), M_right=PAIR.M_right.scaled(lam))
    C, D = build_system([100, 200], [90, 200], PAIR)
    C2, D2 = build_system([100, 200], [90, 200], scaled)
    assert np.allclose(C2, lam * C) and np.allclose(D2, lam * D)


def test_roundtrip_single():
    P = np.array([10.0, -5.0, 500.0])
    assert np.linalg.norm(triangulate(*_views(P), PAIR) - P) < 1e-6


def test_roundtrip_1000(rng):
    pts = np.column_stack([rng.uniform(-80, 80, 1000), rng.uniform(-60, 60, 1000), rng.uniform(200, 900, 1000)])
    W, ok = triangulate_many(*_views(pts), PAIR)
    assert ok.all()
    assert np.max(np.linalg.norm(W - pts, axis=1)) < 1e-6


def test_roundtrip_general_rig(rng):
    k = CameraIntrinsics(700.0, 720.0, 320.0, 240.0, skew=0.5)
    R = random_rotation(rng) @ np.eye(3)
    # small relative rotation so both cameras see the point
    R = np.eye(3) + 0.02 * (R - R.T)
    R, _ = np.linalg.qr(R)
    pair = StereoPair(compose_projection(k, Extrinsics.identity()), compose_projection(k, Extrinsics(R, [-90, 5, 3])))
    P = np.array([-20.0, 15.0, 650.0])
    assert np.linalg.norm(triangulate(*_views(P, pair), pair) - P) < 1e-6


def test_no_baseline_rejected():
    with pytest.raises(DegenerateGeometry):
        StereoPair(PAIR.M_left, PAIR.M_left)
    with pytest.raises(DegenerateGeometry):
        triangulate([0, 0], [0, 0], _same_camera_pair())


def test_depth_sensitivity_bound():
    # Z = f B / d, so a half-pixel disparity change moves depth by about Z^2 / (2 f B)
    f, B = 800.0, 100.0
    pair = StereoRigSpec(focal=f, baseline=B).stereo_pair()
    for Z in (300.0, 500.0, 800.0):
        pl, pr = _views(np.array([0.0, 0.0, Z]), pair)
        z_plus = triangulate(pl, pr - [0.5, 0.0], pair)[2]
        z_minus = triangulate(pl, pr + [0.5, 0.0], pair)[2]
        bound = Z**2 * 0.5 / (f * B)
        d = f * B / Z
        exact_minus = f * B / (d - 0.5) - Z
        exact_plus = Z - f * B / (d + 0.5)
        assert z_minus - Z == pytest.approx(exact_minus, rel=1e-9)
        assert Z - z_plus == pytest.approx(exact_plus, rel=1e-9)
        assert exact_plus < bound < exact_minus
        assert abs(0.5 * (z_minus - z_plus) - bound) / bound < 0.01
    d500 = triangulate(*_views(np.array([0.0, 0, 500.0]), pair), pair)
    assert np.allclose(d500, [0, 0, 500], atol=1e-9)


def test_noisy_depth_error_grows_quadratically():
    pair = StereoRigSpec(focal=800.0, baseline=100.0).stereo_pair()
    errs = []
    for Z in (250.0, 500.0, 1000.0):
        pl, pr = _views(np.array([0.0, 0.0, Z]), pair)
        errs.append(triangulate(pl, pr + [0.5, 0.0], pair)[2] - Z)
    assert errs[1] / errs[0] == pytest.approx(4.0, rel=0.05)
    assert errs[2] / errs[1] == pytest.approx(4.0, rel=0.05)


@given(st.floats(0.01, 1e4), st.floats(0.01, 1e4))
def test_scaling_invariance(a, b):
    pair = StereoPair(PAIR.M_left.scaled(a), PAIR.M_right.scaled(b))
    P = np.array([10.0, -5.0, 500.0])
    pl, pr = _views(P)
    assert np.allclose(triangulate(pl, pr, pair), triangulate(pl, pr, PAIR), atol=1e-7)


def test_least_squares_optimality(rng):
    P = np.array([3.0, 4.0, 420.0])
    pl, pr = _views(P)
    pl = pl + rng.normal(0, 0.7, 2)
    pr = pr + rng.normal(0, 0.7, 2)
    W = triangulate(pl, pr, PAIR)
    base = residual(W, pl, pr, PAIR)
    for _ in range(100):
        delta = rng.normal(size=3)
        delta *= rng.uniform(0, 1) / np.linalg.norm(delta)
        assert residual(W + delta, pl, pr, PAIR) >= base


def test_matches_normal_equations(rng):
    pl, pr = np.array([330.0, 210.0]), np.array([251.3, 211.2])
    C, D = build_system(pl, pr, PAIR)
    direct = np.linalg.solve(C.T @ C, C.T @ D)
    assert np.allclose(triangulate(pl, pr, PAIR), direct, atol=1e-8)


def test_reconstruct_all_invalid_is_empty():
    cloud = reconstruct_cloud(np.full((20, 30), INVALID), PAIR)
    assert len(cloud) == 0 and cloud.meta["degenerate_skipped"] == 0


def test_reconstruct_plane_depth():
    f, B, Z = 800.0, 60.0, 480.0
    d = int(round(f * B / Z))
    dmap = np.full((40, 50), INVALID)
    dmap[5:35, 10:40] = d
    cloud = reconstruct_cloud(dmap, PAIR)
    assert len(cloud) == 900
    assert np.allclose(cloud.points[:, 2], f * B / d, atol=1e-9)
    # left pixel + depth recovers the lateral coordinates
    k = RIG.intrinsics
    u, v = cloud.pixels[:, 0], cloud.pixels[:, 1]
    assert np.allclose(cloud.points[:, 0], (u - k.u0) * cloud.points[:, 2] / f, atol=1e-9)
    assert np.allclose(cloud.points[:, 1], (v - k.v0) * cloud.points[:, 2] / f, atol=1e-9)


def test_reconstruct_skips_degenerate():
    dmap = np.full((4, 4), INVALID)
    dmap[1, 1] = 0  # zero disparity: rays parallel
    dmap[2, 2] = 50
    cloud = reconstruct_cloud(dmap, PAIR)
    assert len(cloud) == 1 and cloud.meta["degenerate_skipped"] == 1


def test_ply_roundtrip(tmp_path, rng):
    cloud = PointCloud(rng.normal(0, 100, (250, 3)))
    write_ply(tmp_path / "c.ply", cloud)
    back = read_ply(tmp_path / "c.ply")
    assert np.array_equal(back.points, cloud.points)
    assert (tmp_path / "c.ply").read_text().startswith("ply\nformat ascii 1.0\nelement vertex 250\n")


def test_ply_empty_roundtrip(tmp_path):
    write_ply(tmp_path / "e.ply", PointCloud(np.zeros((0, 3))))
    assert len(read_ply(tmp_path / "e.ply")) == 0


def test_ply_extra_properties(tmp_path):
    text = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float z\nproperty float x\nproperty float y\n"
    text += "property uchar red\nend_header\n3 1 2 255\n6 4 5 0\n"
    (tmp_path / "x.ply").write_text(text)
    assert np.array_equal(read_ply(tmp_path / "x.ply").points, [[1, 2, 3], [4, 5, 6]])


@pytest.mark.parametrize(
    "text",
    ["", "not a ply\n", "ply\nformat binary_little_endian 1.0\nend_header\n",
     "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 3\n"],
)
def test_ply_malformed(tmp_path, text):
    (tmp_path / "bad.ply").write_text(text)
    with pytest.raises(CylStereoError):
        read_ply(tmp_path / "bad.ply")


def test_csv_roundtrip(tmp_path, rng):
    cloud = PointCloud(rng.normal(0, 100, (40, 3)))
    write_cloud_csv(tmp_path / "c.csv", cloud)
    assert (tmp_path / "c.csv").read_text().startswith("x,y,z\n")
    assert np.array_equal(read_cloud_csv(tmp_path / "c.csv").points, cloud.points)


def test_cloud_rejects_non_finite():
    with pytest.raises(CylStereoError):
        PointCloud([[0, 0, np.nan]])
