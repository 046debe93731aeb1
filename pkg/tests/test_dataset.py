import numpy as np
import pytest
from PIL import Image
from scipy.spatial.transform import Rotation

from gsslam.dataset import (
    Frame,
    Trajectory,
    associate,
    export_tum_layout,
    generate_synthetic,
    interpolate_pose,
    load_depth,
    load_rgb,
    load_tum_sequence,
    open_tum_sequence,
    preset_for_sequence,
    read_file_list,
    read_trajectory,
    synthetic_trajectory,
    tum_intrinsics,
    write_trajectory,
)
from gsslam.errors import DatasetFormatError
from gsslam.geometry import Pose


def test_association_nearest_example():
    assert associate([1.000], [0.990, 1.019], max_gap=0.02) == [(0, 0)]


def test_association_uses_each_depth_once_and_is_stable():
    rgb = [0.0, 0.01, 0.05, 0.2]
    depth = [0.004, 0.049, 0.5]
    pairs = associate(rgb, depth)
    assert pairs == [(0, 0), (2, 1)]
    assert associate(rgb, depth) == pairs
    # 0.01 would also match depth 0 but that depth is taken by the closer rgb 0.0
    assert all(j != 0 for i, j in pairs if i == 1)


def _write_png16(path, arr):
    Image.fromarray(np.asarray(arr, dtype=np.uint16)).save(path)


def test_depth_decoding(tmp_path):
    raw = np.array([[5000, 0], [10000, 2500]])
    _write_png16(tmp_path / "d.png", raw)
    d = load_depth(tmp_path / "d.png")
    assert d.tolist() == [[1.0, 0.0], [2.0, 0.5]]


def test_rgb_area_downsample(tmp_path):
    img = np.zeros((4, 4, 3), np.uint8)
    img[:2, :2] = 255
    Image.fromarray(img).save(tmp_path / "c.png")
    out = load_rgb(tmp_path / "c.png", downsample=2)
    assert out.shape == (2, 2, 3)
    assert out[0, 0].tolist() == [1.0, 1.0, 1.0] and out[1, 1].tolist() == [0.0, 0.0, 0.0]


def test_file_list_parsing(tmp_path):
    p = tmp_path / "rgb.txt"
    p.write_text("# comment\n# another\n1.5 rgb/a.png\n\n2.5 rgb/b.png\n")
    assert read_file_list(p) == [(1.5, "rgb/a.png"), (2.5, "rgb/b.png")]
    p.write_text("oops\n")
    with pytest.raises(DatasetFormatError):
        read_file_list(p)
    with pytest.raises(DatasetFormatError):
        read_file_list(tmp_path / "missing.txt")


def test_trajectory_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    poses = [Pose(Rotation.random(random_state=i).as_quat(), rng.normal(size=3)) for i in range(10)]
    traj = Trajectory([1000.0 + 0.033 * i for i in range(10)], poses)
    write_trajectory(traj, tmp_path / "t.txt")
    back = read_trajectory(tmp_path / "t.txt")
    assert len(back) == 10
    for a, b in zip(traj.poses, back.poses):
        assert a.allclose(b, atol=1e-6)
    np.testing.assert_allclose(back.timestamps, traj.timestamps, atol=1e-6)


def test_trajectory_timestamps_must_increase():
    with pytest.raises(ValueError):
        Trajectory([1.0, 1.0], [Pose(), Pose()])
    t = Trajectory()
    t.append(1.0, Pose())
    with pytest.raises(ValueError):
        t.append(0.5, Pose())


def test_interpolation_is_unit_norm_and_exact_at_samples():
    rng = np.random.default_rng(1)
    poses = [Pose(Rotation.random(random_state=i).as_quat(), rng.normal(size=3)) for i in range(5)]
    traj = Trajectory([0.0, 0.01, 0.02, 0.03, 0.04], poses)
    for t in np.linspace(0, 0.04, 97):
        p = interpolate_pose(traj, t)
        assert abs(np.linalg.norm(p.rotation) - 1) < 1e-9
    assert interpolate_pose(traj, 0.02) is poses[2]
    mid = interpolate_pose(traj, 0.005)
    np.testing.assert_allclose(mid.translation, 0.5 * (poses[0].translation + poses[1].translation))
    half = poses[0].rotation_angle_to(poses[1]) / 2
    assert poses[0].rotation_angle_to(mid) == pytest.approx(half, abs=1e-9)
    assert interpolate_pose(traj, -1.0) is None and interpolate_pose(traj, 1.0) is None


def test_presets_and_scaling():
    K = tum_intrinsics("fr1", downsample=4)
    assert (K.width, K.height) == (160, 120)
    assert K.fx == pytest.approx(517.3 / 4) and K.cx == pytest.approx((318.6 + 0.5) / 4 - 0.5)
    assert preset_for_sequence("rgbd_dataset_freiburg2_xyz") == "fr2"
    with pytest.raises(DatasetFormatError):
        tum_intrinsics("fr9")


def test_synthetic_is_deterministic_per_seed():
    a, fa = generate_synthetic(seed=4, n_primitives=50, n_frames=3, width=24, height=24)
    b, fb = generate_synthetic(seed=4, n_primitives=50, n_frames=3, width=24, height=24)
    assert a.primitives.equals(b.primitives)
    for x, y in zip(fa, fb):
        assert np.array_equal(x.rgb, y.rgb) and np.array_equal(x.depth, y.depth)
    c, _ = generate_synthetic(seed=5, n_primitives=50, n_frames=3, width=24, height=24)
    assert not a.primitives.equals(c.primitives)


def test_synthetic_static_frames_identical_and_box_placement():
    scene, frames = generate_synthetic(seed=0, n_primitives=200, n_frames=2, profile="static", width=16, height=16)
    assert np.array_equal(frames[0].rgb, frames[1].rgb) and np.array_equal(frames[0].depth, frames[1].depth)
    c = scene.primitives.centers
    assert c[:, :2].min() >= -1 and c[:, :2].max() <= 1 and c[:, 2].min() >= 1 and c[:, 2].max() <= 3
    with pytest.raises(ValueError):
        generate_synthetic(n_frames=1)


def test_orbit_full_circle_closes():
    traj = synthetic_trajectory("orbit", 37, arc_degrees=360.0)
    assert traj.poses[0].allclose(traj.poses[-1], atol=1e-6)
    # every orbit camera looks at the orbit centre
    for p in traj.poses[::6]:
        look = p.inverse().apply([0.0, 0.0, 2.0])
        np.testing.assert_allclose(look[:2], 0, atol=1e-12)


def test_synthetic_export_loads_back(tmp_path):
    scene, frames = generate_synthetic(seed=2, n_primitives=80, n_frames=4, width=20, height=20)
    root = export_tum_layout(scene, frames, tmp_path / "seq")
    seq = open_tum_sequence(root)
    assert len(seq) == 4 and seq.intrinsics == scene.intrinsics
    for (frame, gt), src, p in zip(load_tum_sequence(root), frames, scene.trajectory.poses):
        assert np.abs(frame.rgb - src.rgb).max() <= 0.5 / 255 + 1e-12
        assert np.abs(frame.depth - src.depth).max() <= 0.5 / 5000 + 1e-12
        assert gt.allclose(p, atol=1e-6)


def test_missing_index_files(tmp_path):
    with pytest.raises(DatasetFormatError):
        open_tum_sequence(tmp_path / "nope")
    (tmp_path / "rgb.txt").write_text("1.0 rgb/a.png\n")
    with pytest.raises(DatasetFormatError):
        open_tum_sequence(tmp_path)


def test_unpaired_frames_are_skipped_and_counted(tmp_path):
    (tmp_path / "rgb").mkdir()
    (tmp_path / "depth").mkdir()
    for t in ("1.000", "1.033", "1.500"):
        Image.fromarray(np.zeros((4, 4, 3), np.uint8)).save(tmp_path / "rgb" / f"{t}.png")
    for t in ("1.001", "1.034"):
        _write_png16(tmp_path / "depth" / f"{t}.png", np.full((4, 4), 5000))
    (tmp_path / "rgb.txt").write_text("".join(f"{t} rgb/{t}.png\n" for t in ("1.000", "1.033", "1.500")))
    (tmp_path / "depth.txt").write_text("".join(f"{t} depth/{t}.png\n" for t in ("1.001", "1.034")))
    seq = open_tum_sequence(tmp_path, preset="fr1")
    assert len(seq) == 2 and seq.skipped == 1
    frame, gt = next(iter(seq))
    assert gt is None and frame.depth.max() == 1.0


def test_frame_validation():
    with pytest.raises(ValueError):
        Frame(0.0, np.zeros((2, 2, 3)), np.zeros((3, 2)))
    with pytest.raises(ValueError):
        Frame(0.0, np.zeros((2, 2, 3)), -np.ones((2, 2)))
