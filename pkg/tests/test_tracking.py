from types import SimpleNamespace

import numpy as np
import pytest

import gsslam.tracking as tracking
from gsslam.dataset import Frame, generate_synthetic
from gsslam.errors import ConfigurationError, UntrackableFrameError
from gsslam.gaussian_map import GaussianMap
from gsslam.geometry import CameraIntrinsics, Pose
from gsslam.render import render
from gsslam.tracking import TrackingConfig, image_loss, track_frame, tracking_gradient, tracking_loss


@pytest.fixture(scope="module")
def scene():
    return generate_synthetic(seed=3, n_primitives=500, n_frames=2, profile="static")


def test_config_validation():
    for bad in (dict(outer_rounds=0), dict(iters_rotation=0), dict(lambda_color=-1),
                dict(lambda_color=0, lambda_depth=0), dict(tau_vis=1.0), dict(tau_vis=0.0),
                dict(lr_rotation=0), dict(extrapolation=-1), dict(step_growth=0.5)):
        with pytest.raises(ConfigurationError):
            TrackingConfig(**bad)


def test_constant_color_offset_loss_hand_example():
    H, W = 4, 5
    rgb = np.full((H, W, 3), 0.4)
    out = SimpleNamespace(rgb=rgb, depth=np.full((H, W), 2.0), silhouette=np.ones((H, W)))
    frame = SimpleNamespace(rgb=rgb + 0.1, depth=np.full((H, W), 7.0))
    mask = np.ones((H, W), bool)
    for lc in (0.5, 1.0, 2.0):
        loss = image_loss(out, frame, mask, lambda_color=lc, lambda_depth=0.0)
        assert loss.value == pytest.approx(0.3 * lc, rel=1e-12)
        assert loss.n_pixels == H * W


def test_loss_counts_only_gated_valid_pixels():
    H, W = 2, 2
    out = SimpleNamespace(rgb=np.zeros((H, W, 3)), depth=np.array([[1.0, 1.0], [0.5, 2.0]]),
                          silhouette=np.array([[1.0, 1.0], [0.5, 1.0]]))
    frame = SimpleNamespace(rgb=np.zeros((H, W, 3)), depth=np.array([[1.5, 0.0], [1.0, 1.0]]))
    mask = tracking.tracking_mask(out, frame, 0.99)
    assert mask.tolist() == [[True, False], [False, True]]
    loss = image_loss(out, frame, mask, 0.5, 1.0, s_floor=0.99)
    # |1 - 1.5| and |2 - 1| averaged over the two included pixels
    assert loss.value == pytest.approx(0.75)


def test_zero_silhouette_is_untrackable(scene):
    sc, frames = scene
    far_away = Pose.identity().translate([0, 0, -100.0])
    with pytest.raises(UntrackableFrameError):
        tracking_loss(sc.primitives, far_away, frames[0], sc.intrinsics, TrackingConfig())


def test_empty_map_is_rejected(scene):
    sc, frames = scene
    with pytest.raises(ValueError):
        track_frame(GaussianMap(), frames[0], Pose.identity(), None, sc.intrinsics)


def test_truth_has_zero_loss_and_gradient(scene):
    sc, frames = scene
    pose = sc.world_to_camera(0)
    value, grads = tracking_gradient(sc.primitives, pose, frames[0], sc.intrinsics, TrackingConfig())
    assert value == 0.0
    assert np.linalg.norm(grads.rotation) < 1e-8 and np.linalg.norm(grads.translation) < 1e-8
    res = track_frame(sc.primitives, frames[0], pose, None, sc.intrinsics)
    assert res.pose.allclose(pose, atol=1e-6) and res.final_loss == 0.0 and res.converged


def test_recovers_one_degree_and_one_centimetre(scene):
    sc, frames = scene
    truth = sc.world_to_camera(0)
    # the starting guess is off by 1 deg about y and 1 cm
    start = truth.rotate_left(np.radians([0.0, 1.0, 0.0])).translate([0.01, 0.0, 0.0])
    res = track_frame(sc.primitives, frames[0], start, None, sc.intrinsics)
    assert np.degrees(res.pose.rotation_angle_to(truth)) < 0.1
    assert np.linalg.norm(res.pose.camera_center() - truth.camera_center()) < 2e-3


def _spy(monkeypatch):
    poses, losses = [], []
    real_render, real_loss = tracking.render, tracking.tracking_loss

    def render_spy(gmap, pose, K, **kw):
        poses.append(pose)
        return real_render(gmap, pose, K, **kw)

    def loss_spy(*args, **kw):
        out = real_loss(*args, **kw)
        losses.append(out.value)
        return out

    monkeypatch.setattr(tracking, "render", render_spy)
    monkeypatch.setattr(tracking, "tracking_loss", loss_spy)
    return poses, losses


def test_updates_are_literally_decoupled(scene, monkeypatch):
    sc, frames = scene
    truth = sc.world_to_camera(0)
    start = truth.rotate_left([0.004, -0.01, 0.002]).translate([0.006, -0.004, 0.003])
    poses, _ = _spy(monkeypatch)
    track_frame(sc.primitives, frames[0], start, None, sc.intrinsics,
                TrackingConfig(outer_rounds=3))
    assert len(poses) > 10
    for k in range(1, len(poses)):
        c = poses[k]
        assert any(
            np.array_equal(c.translation, p.translation) or np.array_equal(c.rotation, p.rotation)
            for p in poses[:k]
        )


def test_returns_best_evaluated_loss(scene, monkeypatch):
    sc, frames = scene
    truth = sc.world_to_camera(0)
    start = truth.rotate_left([0.0, 0.02, 0.0]).translate([-0.01, 0.0, 0.0])
    _, losses = _spy(monkeypatch)
    res = track_frame(sc.primitives, frames[0], start, None, sc.intrinsics, TrackingConfig(outer_rounds=4))
    assert res.final_loss == min(losses)
    assert res.final_loss <= losses[0]
    assert res.iterations_used == len(losses)


def test_initial_guess_defaults_to_previous_pose():
    a = Pose.identity().translate([0, 0, 0.1])
    b = Pose.identity().translate([0, 0, 0.2])
    assert tracking.initial_guess(b, a, TrackingConfig()) is b
    cv = tracking.initial_guess(b, a, TrackingConfig(constant_velocity=True))
    np.testing.assert_allclose(cv.translation, [0, 0, 0.3])


def test_loss_invariant_to_image_transpose():
    rng = np.random.default_rng(0)
    n = 80
    centers = np.c_[rng.uniform(-0.5, 0.5, (n, 2)), rng.uniform(1, 2, n)]
    g = GaussianMap(centers, rng.uniform(0.1, 0.3, n), rng.uniform(0.6, 1.0, n), rng.uniform(0, 1, (n, 3)))
    gt = GaussianMap(centers[:, [1, 0, 2]], g.radii, g.opacities, g.colors)
    K = CameraIntrinsics(fx=20, fy=20, cx=10.5, cy=7.5, width=22, height=16)
    Kt = CameraIntrinsics(fx=20, fy=20, cx=7.5, cy=10.5, width=16, height=22)
    out = render(g, Pose.identity(), K)
    frame = Frame(0.0, np.clip(out.rgb + rng.normal(0, 0.05, out.rgb.shape), 0, 1),
                  out.normalized_depth(0.5) + rng.normal(0, 0.01, out.depth.shape))
    frame_t = Frame(0.0, frame.rgb.transpose(1, 0, 2), frame.depth.T)
    cfg = TrackingConfig(tau_vis=0.9)
    a = tracking_loss(g, Pose.identity(), frame, K, cfg)
    b = tracking_loss(gt, Pose.identity(), frame_t, Kt, cfg)
    assert a.n_pixels == b.n_pixels > 0
    assert a.value == pytest.approx(b.value, rel=1e-12)
