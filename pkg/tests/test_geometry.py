import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from gsslam.errors import BehindCameraError, ConfigurationError, InvalidDepthError
from gsslam.geometry import (
    CameraIntrinsics,
    Pose,
    project_mono,
    project_points,
    project_stereo,
    transform_point,
    unproject,
    unproject_depth_map,
)

K500 = CameraIntrinsics(fx=500, fy=500, cx=320, cy=240, width=640, height=480)
K500_STEREO = CameraIntrinsics(fx=500, fy=500, cx=320, cy=240, width=640, height=480, baseline=0.1)


@pytest.mark.parametrize("bad", [
    dict(fx=0, fy=1, cx=1, cy=1, width=4, height=4),
    dict(fx=1, fy=-1, cx=1, cy=1, width=4, height=4),
    dict(fx=1, fy=1, cx=0, cy=1, width=4, height=4),
    dict(fx=1, fy=1, cx=1, cy=4, width=4, height=4),
    dict(fx=1, fy=1, cx=1, cy=1, width=4, height=4, depth_scale=0),
])
def test_intrinsics_invariants(bad):
    with pytest.raises(ConfigurationError):
        CameraIntrinsics(**bad)


def test_intrinsics_scaling_keeps_pixel_centers():
    K = CameraIntrinsics(fx=520, fy=520, cx=319.5, cy=239.5, width=640, height=480)
    k4 = K.scaled(4)
    assert (k4.width, k4.height) == (160, 120)
    assert k4.fx == 130 and k4.cx == pytest.approx(79.5) and k4.cy == pytest.approx(59.5)


def test_project_optical_axis():
    for z in (0.1, 1.0, 7.0):
        p = project_mono((0, 0, z), K500)
        assert (p.u, p.v) == (320, 240)


def test_project_mono_hand_example():
    p = project_mono((1, 2, 4), K500)
    assert (p.u, p.v) == pytest.approx((445, 490), abs=1e-12)
    assert p.u_right is None


def test_project_behind_camera():
    with pytest.raises(BehindCameraError):
        project_mono((0, 0, -1), K500)
    with pytest.raises(BehindCameraError):
        project_stereo((0, 0, 0), K500_STEREO)


def test_project_stereo_examples():
    p = project_stereo((1, 2, 4), K500_STEREO)
    assert p == pytest.approx((445, 490, 432.5), abs=1e-12)
    p = project_stereo((0, 0, 2), K500_STEREO)
    assert p.u_right == pytest.approx(320 - 500 * 0.05)
    k0 = CameraIntrinsics(500, 500, 320, 240, 640, 480, baseline=0.0)
    p = project_stereo((0.3, -0.2, 1.7), k0)
    assert p.u_right == p.u


def test_project_stereo_needs_baseline():
    with pytest.raises(ConfigurationError):
        project_stereo((0, 0, 1), K500)


def test_stereo_rows_equal_mono_exactly():
    rng = np.random.default_rng(3)
    for X in np.c_[rng.normal(size=(50, 2)), rng.uniform(0.2, 5, 50)]:
        m = project_mono(X, K500_STEREO)
        s = project_stereo(X, K500_STEREO)
        assert (m.u, m.v) == (s.u, s.v)


def test_unproject_examples():
    assert unproject((320, 240), 3.0, K500) == pytest.approx([0, 0, 3], abs=0)
    np.testing.assert_allclose(unproject((445, 490), 4.0, K500), [1, 2, 4], atol=1e-9)
    with pytest.raises(InvalidDepthError):
        unproject((445, 490), 0.0, K500)


@settings(max_examples=1000, deadline=None)
@given(
    fx=st.floats(50, 2000), fy=st.floats(50, 2000),
    w=st.integers(8, 1280), h=st.integers(8, 960),
    fcx=st.floats(0.05, 0.95), fcy=st.floats(0.05, 0.95),
    fu=st.floats(0, 1), fv=st.floats(0, 1),
    depth=st.floats(0.05, 50),
)
def test_project_unproject_roundtrip(fx, fy, w, h, fcx, fcy, fu, fv, depth):
    K = CameraIntrinsics(fx, fy, fcx * w, fcy * h, w, h)
    u, v = fu * (w - 1), fv * (h - 1)
    p = project_mono(unproject((u, v), depth, K), K)
    assert abs(p.u - u) < 1e-6 and abs(p.v - v) < 1e-6


def test_transform_examples():
    X = np.array([0.3, -1.2, 2.5])
    assert np.array_equal(transform_point(Pose.identity(), X), X)
    T = Pose(Rotation.from_euler("z", 90, degrees=True).as_quat(), [0, 0, 0])
    np.testing.assert_allclose(transform_point(T, [1, 0, 0]), [0, 1, 0], atol=1e-9)
    T = Pose(Rotation.random(random_state=1).as_quat(), [0.4, -2, 1])
    np.testing.assert_allclose(T.inverse().apply(T.apply(X)), X, atol=1e-9)


def test_transform_preserves_distances():
    rng = np.random.default_rng(0)
    T = Pose(Rotation.random(random_state=7).as_quat(), rng.normal(size=3))
    P = rng.normal(size=(20, 3)) * 3
    Q = T.apply(P)
    d0 = np.linalg.norm(P[:, None] - P[None], axis=-1)
    d1 = np.linalg.norm(Q[:, None] - Q[None], axis=-1)
    np.testing.assert_allclose(d0, d1, atol=1e-9)


def _random_pose(seed):
    rng = np.random.default_rng(seed)
    return Pose(Rotation.random(random_state=seed).as_quat(), rng.normal(size=3))


def test_pose_inverse_and_associativity():
    for s in range(20):
        a, b, c = _random_pose(s), _random_pose(s + 100), _random_pose(s + 200)
        assert a.compose(a.inverse()).allclose(Pose.identity(), atol=1e-9)
        assert a.inverse().compose(a).allclose(Pose.identity(), atol=1e-9)
        assert ((a @ b) @ c).allclose(a @ (b @ c), atol=1e-9)
        np.testing.assert_allclose((a @ b).matrix(), a.matrix() @ b.matrix(), atol=1e-12)


def test_pose_renormalizes_without_changing_rotation():
    q = Rotation.random(random_state=3).as_quat()
    p = Pose(q * 1.7, [0, 0, 0])
    assert abs(np.linalg.norm(p.rotation) - 1) < 1e-12
    assert p.rotation_angle_to(Pose(q, [0, 0, 0])) < 1e-9
    with pytest.raises(ValueError):
        Pose([0, 0, 0, 0], [0, 0, 0])


def test_pose_updates_stay_unit_and_decoupled():
    p = _random_pose(5)
    for k in range(200):
        w = np.array([0.01, -0.02, 0.015]) * np.sin(k)
        r = p.rotate_left(w)
        assert np.array_equal(r.translation, p.translation)
        t = r.translate([1e-3, 0, -2e-3])
        assert np.array_equal(t.rotation, r.rotation)
        p = t
        assert abs(np.linalg.norm(p.rotation) - 1) < 1e-9


def test_rotate_left_matches_exponential_map():
    p = _random_pose(11)
    w = np.array([0.2, -0.1, 0.3])
    expect = Rotation.from_rotvec(w).as_matrix() @ p.R
    np.testing.assert_allclose(p.rotate_left(w).R, expect, atol=1e-12)


def test_pose_is_immutable():
    p = Pose.identity()
    with pytest.raises(ValueError):
        p.translation[0] = 1.0


def test_camera_center():
    p = Pose.from_rt(Rotation.from_euler("y", 30, degrees=True).as_matrix(), [0.1, 0.2, 0.3])
    np.testing.assert_allclose(p.apply(p.camera_center()), 0, atol=1e-12)


def test_vectorized_projection_and_depth_unprojection():
    K = CameraIntrinsics(fx=20, fy=22, cx=4.5, cy=3.5, width=10, height=8)
    depth = np.linspace(0.5, 2.0, 80).reshape(8, 10)
    depth[2, 3] = 0
    pts, rows, cols = unproject_depth_map(depth, K)
    assert len(pts) == 79 and (2, 3) not in set(zip(rows, cols))
    uv, z = project_points(pts, K)
    np.testing.assert_allclose(uv, np.c_[cols, rows], atol=1e-9)
    np.testing.assert_array_equal(z, depth[rows, cols])
    uv, _ = project_points([[0, 0, -1.0]], K)
    assert np.isnan(uv).all()
