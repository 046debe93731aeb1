"""RGB-D frame sources: TUM-RGBD sequences and seeded synthetic scenes."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

import numpy as np
from PIL import Image
from scipy.spatial.transform import Rotation, Slerp

from .errors import DatasetFormatError
from .gaussian_map import GaussianMap
from .geometry import CameraIntrinsics, Pose
from .render import render

log = logging.getLogger(__name__)

MAX_ASSOC_GAP = 0.02
TUM_DEPTH_SCALE = 5000.0

# published pinhole calibrations of the three TUM Kinects (640x480)
TUM_PRESETS = {
    "fr1": dict(fx=517.3, fy=516.5, cx=318.6, cy=255.3),
    "fr2": dict(fx=520.9, fy=521.0, cx=325.1, cy=249.7),
    "fr3": dict(fx=535.4, fy=539.2, cx=320.1, cy=247.6),
}


def tum_intrinsics(preset: str, downsample: int = 1) -> CameraIntrinsics:
    if preset not in TUM_PRESETS:
        raise DatasetFormatError(f"unknown intrinsics preset {preset!r}; choose from {sorted(TUM_PRESETS)}")
    K = CameraIntrinsics(width=640, height=480, depth_scale=TUM_DEPTH_SCALE, **TUM_PRESETS[preset])
    return K.scaled(downsample) if downsample > 1 else K


def preset_for_sequence(name: str) -> str:
    """``rgbd_dataset_freiburg2_xyz`` -> ``fr2``; defaults to ``fr1``."""
    for k in ("1", "2", "3"):
        if f"freiburg{k}" in name or f"fr{k}" in name:
            return f"fr{k}"
    return "fr1"


@dataclass
class Frame:
    timestamp: float
    rgb: np.ndarray
    depth: np.ndarray

    def __post_init__(self):
        if self.rgb.shape[:2] != self.depth.shape:
            raise ValueError(f"rgb {self.rgb.shape} and depth {self.depth.shape} sizes differ")
        if np.any(self.depth < 0):
            raise ValueError("depth must be non-negative")


@dataclass
class Trajectory:
    """Timestamped camera-to-world poses."""

    timestamps: list = field(default_factory=list)
    poses: list = field(default_factory=list)

    def __post_init__(self):
        self.timestamps = [float(t) for t in self.timestamps]
        ts = np.asarray(self.timestamps)
        if len(ts) != len(self.poses):
            raise ValueError("timestamps and poses differ in length")
        if len(ts) > 1 and np.any(np.diff(ts) <= 0):
            raise ValueError("trajectory timestamps must be strictly increasing")

    def __len__(self):
        return len(self.poses)

    def append(self, timestamp: float, pose: Pose):
        if self.timestamps and timestamp <= self.timestamps[-1]:
            raise ValueError("trajectory timestamps must be strictly increasing")
        self.timestamps.append(float(timestamp))
        self.poses.append(pose)

    def positions(self) -> np.ndarray:
        return np.array([p.translation for p in self.poses]).reshape(-1, 3)

    def __getitem__(self, sl):
        if isinstance(sl, slice):
            return Trajectory(self.timestamps[sl], self.poses[sl])
        return self.timestamps[sl], self.poses[sl]

    def equals(self, other: "Trajectory") -> bool:
        return self.timestamps == other.timestamps and all(
            np.array_equal(a.rotation, b.rotation) and np.array_equal(a.translation, b.translation)
            for a, b in zip(self.poses, other.poses)
        ) and len(self) == len(other)


def _read_list(path: Path) -> list[list[str]]:
    if not path.is_file():
        raise DatasetFormatError(f"missing index file {path}")
    rows = []
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        rows.append(line.replace(",", " ").split())
    return rows


def read_file_list(path) -> list[tuple[float, str]]:
    """Parse a TUM ``timestamp filename`` index file."""
    out = []
    for row in _read_list(Path(path)):
        try:
            out.append((float(row[0]), row[1]))
        except (IndexError, ValueError) as exc:
            raise DatasetFormatError(f"{path}: malformed line {' '.join(row)!r}") from exc
    return out


def read_trajectory(path) -> Trajectory:
    """Parse ``timestamp tx ty tz qx qy qz qw`` lines (camera-to-world)."""
    ts, poses = [], []
    for row in _read_list(Path(path)):
        if len(row) < 8:
            raise DatasetFormatError(f"{path}: expected 8 columns, got {len(row)}")
        vals = [float(x) for x in row[:8]]
        ts.append(vals[0])
        poses.append(Pose(vals[4:8], vals[1:4]))
    # mocap files occasionally repeat a stamp; keep the first sample
    keep = [0] + [i for i in range(1, len(ts)) if ts[i] > ts[i - 1]] if ts else []
    return Trajectory([ts[i] for i in keep], [poses[i] for i in keep])


def write_trajectory(traj: Trajectory, path) -> None:
    with open(path, "w") as fh:
        fh.write("# timestamp tx ty tz qx qy qz qw\n")
        for t, p in zip(traj.timestamps, traj.poses):
            tx, ty, tz = p.translation
            qx, qy, qz, qw = p.rotation
            fh.write(f"{t:.6f} {tx:.9f} {ty:.9f} {tz:.9f} {qx:.9f} {qy:.9f} {qz:.9f} {qw:.9f}\n")


def associate(first: list[float], second: list[float], max_gap: float = MAX_ASSOC_GAP) -> list[tuple[int, int]]:
    """Greedy nearest-timestamp matching; each entry of ``second`` is used once.

    Candidate pairs within ``max_gap`` are accepted in order of increasing
    time difference. Returns ``(i, j)`` index pairs sorted by ``i``.
    """
    a = np.asarray(first, dtype=np.float64)
    b = np.asarray(second, dtype=np.float64)
    cands = []
    for i, t in enumerate(a):
        lo = np.searchsorted(b, t - max_gap, side="left")
        hi = np.searchsorted(b, t + max_gap, side="right")
        for j in range(lo, hi):
            d = abs(b[j] - t)
            if d <= max_gap:
                cands.append((d, i, j))
    cands.sort()
    used_a, used_b, pairs = set(), set(), []
    for _, i, j in cands:
        if i in used_a or j in used_b:
            continue
        used_a.add(i)
        used_b.add(j)
        pairs.append((i, j))
    return sorted(pairs)


def interpolate_pose(traj: Trajectory, t: float) -> Optional[Pose]:
    """Pose at time ``t``: linear in translation, slerp in rotation.

    Returns ``None`` outside the trajectory's time span.
    """
    ts = np.asarray(traj.timestamps)
    if len(ts) == 0 or t < ts[0] or t > ts[-1]:
        return None
    j = int(np.searchsorted(ts, t, side="left"))
    if ts[j] == t:
        return traj.poses[j]
    i = j - 1
    a, b = traj.poses[i], traj.poses[j]
    w = (t - ts[i]) / (ts[j] - ts[i])
    slerp = Slerp([0.0, 1.0], Rotation.from_quat([a.rotation, b.rotation]))
    q = slerp([w]).as_quat()[0]
    return Pose(q, (1.0 - w) * a.translation + w * b.translation)


def load_rgb(path, downsample: int = 1) -> np.ndarray:
    img = np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0
    if downsample > 1:
        h = img.shape[0] // downsample * downsample
        w = img.shape[1] // downsample * downsample
        img = img[:h, :w].reshape(h // downsample, downsample, w // downsample, downsample, 3).mean(axis=(1, 3))
    return img


def load_depth(path, depth_scale: float = TUM_DEPTH_SCALE, downsample: int = 1) -> np.ndarray:
    """16-bit depth PNG to meters; raw 0 stays 0 (invalid)."""
    raw = np.asarray(Image.open(path), dtype=np.float64)
    if raw.ndim != 2:
        raise DatasetFormatError(f"{path}: depth image must be single-channel")
    if downsample > 1:
        # nearest sample at the block center keeps invalid pixels invalid
        off = downsample // 2
        raw = raw[off::downsample, off::downsample]
    return raw / depth_scale


@dataclass
class TumSequence:
    """Associated frames of one TUM-RGBD sequence, decoded lazily."""

    root: Path
    intrinsics: CameraIntrinsics
    rgb_files: list
    depth_files: list
    timestamps: list
    groundtruth: Optional[Trajectory]
    downsample: int = 1
    skipped: int = 0

    def __len__(self):
        return len(self.timestamps)

    def frame(self, i: int) -> Frame:
        rgb = load_rgb(self.root / self.rgb_files[i], self.downsample)
        depth = load_depth(self.root / self.depth_files[i], self.intrinsics.depth_scale, self.downsample)
        return Frame(self.timestamps[i], rgb, depth)

    def gt_pose(self, i: int) -> Optional[Pose]:
        if self.groundtruth is None:
            return None
        return interpolate_pose(self.groundtruth, self.timestamps[i])

    def __iter__(self) -> Iterator[tuple[Frame, Optional[Pose]]]:
        for i in range(len(self)):
            yield self.frame(i), self.gt_pose(i)


def open_tum_sequence(root, max_assoc_gap: float = MAX_ASSOC_GAP, preset: Optional[str] = None,
                      downsample: int = 1, intrinsics: Optional[CameraIntrinsics] = None) -> TumSequence:
    """Index a TUM-RGBD directory without decoding any image.

    An ``intrinsics.json`` next to ``rgb.txt`` (written for exported
    synthetic scenes) overrides the preset.
    """
    root = Path(root)
    if not root.is_dir():
        raise DatasetFormatError(f"dataset directory {root} does not exist")
    rgb = read_file_list(root / "rgb.txt")
    depth = read_file_list(root / "depth.txt")
    gt = read_trajectory(root / "groundtruth.txt") if (root / "groundtruth.txt").is_file() else None

    if intrinsics is None:
        side = root / "intrinsics.json"
        if side.is_file():
            intrinsics = CameraIntrinsics(**json.loads(side.read_text()))
            if downsample > 1:
                intrinsics = intrinsics.scaled(downsample)
        else:
            intrinsics = tum_intrinsics(preset or preset_for_sequence(root.name), downsample)

    pairs = associate([t for t, _ in rgb], [t for t, _ in depth], max_assoc_gap)
    skipped = len(rgb) - len(pairs)
    if skipped:
        log.info("%s: %d rgb frames without a depth match were skipped", root, skipped)
    return TumSequence(
        root=root,
        intrinsics=intrinsics,
        rgb_files=[rgb[i][1] for i, _ in pairs],
        depth_files=[depth[j][1] for _, j in pairs],
        timestamps=[rgb[i][0] for i, _ in pairs],
        groundtruth=gt,
        downsample=downsample,
        skipped=skipped,
    )


def load_tum_sequence(root, max_assoc_gap: float = MAX_ASSOC_GAP, **kwargs):
    """Stream ``(Frame, ground-truth camera-to-world Pose or None)`` pairs."""
    yield from open_tum_sequence(root, max_assoc_gap, **kwargs)


# --- synthetic scenes -------------------------------------------------------

SYNTH_INTRINSICS = dict(fx=56.0, fy=56.0)


@dataclass
class SyntheticScene:
    primitives: GaussianMap
    trajectory: Trajectory  # camera-to-world
    intrinsics: CameraIntrinsics
    seed: int
    profile: str

    def world_to_camera(self, i: int) -> Pose:
        return self.trajectory.poses[i].inverse()


def synthetic_intrinsics(width: int = 64, height: int = 64, focal: Optional[float] = None) -> CameraIntrinsics:
    f = focal if focal is not None else SYNTH_INTRINSICS["fx"] * width / 64.0
    return CameraIntrinsics(fx=f, fy=f, cx=(width - 1) / 2, cy=(height - 1) / 2,
                            width=width, height=height, depth_scale=TUM_DEPTH_SCALE)


def _look_rotation_y(angle: float) -> np.ndarray:
    return Rotation.from_rotvec([0.0, angle, 0.0]).as_quat()


def synthetic_trajectory(profile: str, n_frames: int, *, arc_degrees: float = 30.0,
                         orbit_center=(0.0, 0.0, 2.0), dolly_distance: float = 0.3,
                         yaw_degrees: float = 10.0, fps: float = 30.0) -> Trajectory:
    """Camera-to-world poses for one of the motion profiles.

    ``orbit``: the camera circles ``orbit_center`` in the x-z plane, always
    facing it, sweeping ``arc_degrees`` from the first to the last frame.
    ``dolly``: straight push along +z by ``dolly_distance``.
    ``rotation``: camera yaws sinusoidally by up to ``yaw_degrees`` with a
    small sideways drift. ``static``: every pose is the identity.
    """
    ts = [k / fps for k in range(n_frames)]
    s = np.linspace(0.0, 1.0, n_frames)
    poses = []
    center = np.asarray(orbit_center, dtype=np.float64)
    for k in range(n_frames):
        if profile == "orbit":
            phi = np.deg2rad(arc_degrees) * s[k]
            rot = Rotation.from_rotvec([0.0, phi, 0.0])
            pos = center + rot.apply(-center)
            poses.append(Pose(rot.as_quat(), pos))
        elif profile == "dolly":
            poses.append(Pose([0, 0, 0, 1.0], [0.0, 0.0, dolly_distance * s[k]]))
        elif profile == "rotation":
            yaw = np.deg2rad(yaw_degrees) * np.sin(2 * np.pi * s[k])
            poses.append(Pose(_look_rotation_y(yaw), [0.05 * s[k], 0.0, 0.0]))
        elif profile == "static":
            poses.append(Pose())
        else:
            raise ValueError(f"unknown motion profile {profile!r}")
    return Trajectory(ts, poses)


def random_gaussians(rng: np.random.Generator, n: int, *, radius_range=(0.08, 0.2),
                     opacity_range=(0.7, 1.0)) -> GaussianMap:
    """``n`` primitives uniformly in the 2x2x2 m box spanning z in [1, 3]."""
    centers = np.c_[rng.uniform(-1.0, 1.0, (n, 2)), rng.uniform(1.0, 3.0, n)]
    return GaussianMap(
        centers,
        radii=rng.uniform(*radius_range, n),
        opacities=rng.uniform(*opacity_range, n),
        colors=rng.uniform(0.0, 1.0, (n, 3)),
    )


def render_frame(gmap: GaussianMap, world_to_camera: Pose, K: CameraIntrinsics, timestamp: float,
                 min_silhouette: float = 0.5) -> Frame:
    """What an ideal RGB-D sensor would record of ``gmap``.

    Depth is the silhouette-normalized rendered depth, reported only where
    the silhouette reaches ``min_silhouette``; elsewhere it is invalid (0).
    """
    out = render(gmap, world_to_camera, K)
    depth = np.zeros_like(out.depth)
    m = out.silhouette >= min_silhouette
    depth[m] = out.depth[m] / out.silhouette[m]
    return Frame(timestamp, out.rgb, depth)


def generate_synthetic(seed: int = 0, n_primitives: int = 500, n_frames: int = 60,
                       profile: str = "orbit", width: int = 64, height: int = 64,
                       **profile_kw) -> tuple[SyntheticScene, list[Frame]]:
    """Seeded random scene plus the frames rendered along a motion profile."""
    if n_primitives < 1 or n_frames < 2:
        raise ValueError("need n_primitives >= 1 and n_frames >= 2")
    rng = np.random.default_rng(seed)
    gmap = random_gaussians(rng, n_primitives)
    K = synthetic_intrinsics(width, height)
    traj = synthetic_trajectory(profile, n_frames, **profile_kw)
    frames = [render_frame(gmap, p.inverse(), K, t) for t, p in zip(traj.timestamps, traj.poses)]
    return SyntheticScene(gmap, traj, K, seed, profile), frames


def export_tum_layout(scene: SyntheticScene, frames: list[Frame], root) -> Path:
    """Write frames and ground truth in the TUM-RGBD directory layout."""
    root = Path(root)
    (root / "rgb").mkdir(parents=True, exist_ok=True)
    (root / "depth").mkdir(parents=True, exist_ok=True)
    K = scene.intrinsics
    rgb_lines, depth_lines = [], []
    for f in frames:
        name = f"{f.timestamp:.6f}.png"
        Image.fromarray(np.round(np.clip(f.rgb, 0, 1) * 255).astype(np.uint8)).save(root / "rgb" / name)
        raw = np.clip(np.round(f.depth * K.depth_scale), 0, 65535).astype(np.uint16)
        Image.fromarray(raw).save(root / "depth" / name)
        rgb_lines.append(f"{f.timestamp:.6f} rgb/{name}")
        depth_lines.append(f"{f.timestamp:.6f} depth/{name}")
    header = "# synthetic sequence seed={} profile={}\n".format(scene.seed, scene.profile)
    (root / "rgb.txt").write_text(header + "\n".join(rgb_lines) + "\n")
    (root / "depth.txt").write_text(header + "\n".join(depth_lines) + "\n")
    write_trajectory(scene.trajectory, root / "groundtruth.txt")
    (root / "intrinsics.json").write_text(json.dumps({
        "fx": K.fx, "fy": K.fy, "cx": K.cx, "cy": K.cy,
        "width": K.width, "height": K.height, "depth_scale": K.depth_scale,
    }, indent=2))
    return root
