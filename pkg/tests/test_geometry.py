import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cylstereo.errors import CylStereoError, DepthNonPositive
from cylstereo.geometry import (
    CameraIntrinsics,
    Extrinsics,
    ProjectionMatrix,
    camera_from_dict,
    camera_to_dict,
    camera_to_pixel,
    compose_projection,
    load_camera,
    project,
    rotation_about,
    save_camera,
    world_to_camera,
)

from .conftest import random_rotation

RZ90 = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
UNIT = CameraIntrinsics(1.0, 1.0, 0.0, 0.0)


def test_world_to_camera_identity():
    assert np.allclose(world_to_camera([1, 2, 3], Extrinsics.identity()), [1, 2, 3])


def test_world_to_camera_translation():
    e = Extrinsics(np.eye(3), [0, 0, 100])
    assert np.allclose(world_to_camera([1, 2, 3], e), [1, 2, 103])


def test_world_to_camera_rotation_about_z():
    assert np.allclose(world_to_camera([1, 0, 0], Extrinsics(RZ90, np.zeros(3))), [0, 1, 0])


def test_camera_to_pixel_unit_intrinsics():
    assert np.allclose(camera_to_pixel([1, 2, 2], UNIT), [0.5, 1.0])


def test_camera_to_pixel_principal_point():
    k = CameraIntrinsics(1.0, 1.0, 320.0, 240.0)
    assert np.allclose(camera_to_pixel([1, 2, 2], k), [320.5, 241.0])


@pytest.mark.parametrize("z", [0.0, -1.0])
def test_camera_to_pixel_rejects_nonpositive_depth(z):
    with pytest.raises(DepthNonPositive):
        camera_to_pixel([1, 2, z], UNIT)


def test_camera_to_pixel_skew_term():
    k = CameraIntrinsics(800.0, 810.0, 320.0, 240.0, skew=0.5)
    u, v = camera_to_pixel([10.0, 20.0, 100.0], k)
    assert u == pytest.approx(800 * 0.1 + 0.5 * 0.2 + 320)
    assert v == pytest.approx(810 * 0.2 + 240)


def test_compose_identity_is_canonical():
    m = compose_projection(UNIT, Extrinsics.identity()).m
    assert np.array_equal(m, np.hstack([np.eye(3), np.zeros((3, 1))]))


def test_compose_matches_hand_expansion(rng):
    k = CameraIntrinsics(812.5, 790.25, 311.0, 247.5, skew=0.013)
    R = random_rotation(rng)
    T = np.array([12.0, -7.5, 300.0])
    m = compose_projection(k, Extrinsics(R, T)).m
    # row by row: m_ij = sum_l K_il [R|T]_lj with K upper triangular
    rt = np.hstack([R, T[:, None]])
    expected = np.zeros((3, 4))
    for j in range(4):
        expected[0, j] = k.fx * rt[0, j] + k.skew * rt[1, j] + k.u0 * rt[2, j]
        expected[1, j] = k.fy * rt[1, j] + k.v0 * rt[2, j]
        expected[2, j] = rt[2, j]
    assert np.allclose(m, expected, rtol=0, atol=1e-9)


def test_project_via_matrix_equals_staged_transforms(rng):
    k = CameraIntrinsics(800.0, 805.0, 319.5, 239.5, skew=0.002)
    e = Extrinsics(rotation_about([0.2, 1.0, -0.3], 0.15), [5.0, -3.0, 50.0])
    M = compose_projection(k, e)
    pts = rng.uniform([-100, -100, 200], [100, 100, 900], size=(100, 3))
    staged = camera_to_pixel(world_to_camera(pts, e), k)
    assert np.max(np.abs(project(pts, M) - staged)) < 1e-9


def test_project_canonical_camera():
    M = ProjectionMatrix(np.hstack([np.eye(3), np.zeros((3, 1))]))
    assert np.allclose(project([2, 4, 2], M), [1, 2])
    with pytest.raises(DepthNonPositive):
        project([0, 0, -1], M)


@given(st.floats(0.01, 1e4), st.integers(0, 2**31))
def test_project_scale_invariant(lam, seed):
    rng = np.random.default_rng(seed)
    k = CameraIntrinsics(800.0, 800.0, 320.0, 240.0)
    M = compose_projection(k, Extrinsics(random_rotation(rng) @ np.eye(3), [0, 0, 0]))
    # a point in front of this camera
    p = M.center + 500 * (np.linalg.inv(M.m[:, :3]) @ np.array([300.0, 200.0, 1.0]))
    np.testing.assert_allclose(project(p, M.scaled(lam)), project(p, M), rtol=1e-9, atol=1e-9)


def test_extrinsics_rejects_non_orthonormal():
    with pytest.raises(CylStereoError):
        Extrinsics(np.diag([1.0, 1.0, 1.001]), np.zeros(3))
    with pytest.raises(CylStereoError):
        Extrinsics(np.diag([1.0, 1.0, -1.0]), np.zeros(3))  # reflection


@pytest.mark.parametrize("fx, fy", [(0.0, 1.0), (1.0, -2.0)])
def test_intrinsics_reject_nonpositive_focal(fx, fy):
    with pytest.raises(CylStereoError):
        CameraIntrinsics(fx, fy, 0.0, 0.0)


def test_projection_matrix_rank_check():
    with pytest.raises(CylStereoError):
        ProjectionMatrix(np.zeros((3, 4)))


def test_projection_center_is_camera_center():
    e = Extrinsics(rotation_about([1, 1, 0], 0.3), [10.0, 20.0, 30.0])
    M = compose_projection(CameraIntrinsics(700.0, 700.0, 300.0, 200.0), e)
    assert np.allclose(M.center, e.center)
    assert np.allclose(M.m @ np.append(M.center, 1.0), 0, atol=1e-9)


def test_rotation_about_is_proper():
    R = rotation_about([1, 2, 3], 1.1)
    assert np.allclose(R @ R.T, np.eye(3))
    assert math.isclose(np.linalg.det(R), 1.0)
    assert np.allclose(rotation_about([0, 0, 1], math.pi / 2), RZ90)


def test_camera_json_roundtrip(tmp_path):
    k = CameraIntrinsics(800.0, 801.0, 320.5, 240.25, skew=0.01)
    e = Extrinsics(rotation_about([0, 1, 0], 0.2), [-60.0, 0.0, 1.0])
    doc = camera_to_dict(k, e)
    assert set(doc) == {"fx", "fy", "skew", "u0", "v0", "R", "T"}
    assert len(doc["R"]) == 3 and all(len(r) == 3 for r in doc["R"])
    save_camera(tmp_path / "cam.json", k, e)
    k2, e2 = load_camera(tmp_path / "cam.json")
    assert k2 == k
    assert np.array_equal(e2.R, e.R) and np.array_equal(e2.T, e.T)
    # R is row-major: first row of the file is the first row of R
    assert json.loads((tmp_path / "cam.json").read_text())["R"][0] == list(e.R[0])


def test_camera_json_missing_field():
    with pytest.raises(CylStereoError):
        camera_from_dict({"fx": 1.0})
