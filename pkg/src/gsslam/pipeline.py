"""End-to-end SLAM loop, configuration and on-disk artifacts."""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import yaml
from PIL import Image

from .dataset import (
    MAX_ASSOC_GAP,
    Frame,
    Trajectory,
    generate_synthetic,
    open_tum_sequence,
    write_trajectory,
)
from .errors import ConfigurationError, DatasetFormatError, TrackingLostError
from .gaussian_map import GaussianMap, export_ply, initialize_from_frame, load_checkpoint, save_checkpoint
from .geometry import CameraIntrinsics, Pose
from .mapping import Keyframe, MappingConfig, map_keyframe, select_keyframe
from .metrics import EvalReport, ate_residuals, depth_rmse, plot_report, psnr, ssim, write_report
from .render import render, set_threads
from .tracking import TrackingConfig, track_frame

log = logging.getLogger(__name__)


@dataclass
class SyntheticSpec:
    seed: int = 0
    n_primitives: int = 500
    n_frames: int = 60
    profile: str = "orbit"
    width: int = 64
    height: int = 64
    arc_degrees: float = 30.0


@dataclass
class PipelineConfig:
    dataset: Optional[str] = None
    synthetic: Optional[SyntheticSpec] = None
    preset: Optional[str] = None
    downsample: int = 1
    max_assoc_gap: float = MAX_ASSOC_GAP
    tracking: TrackingConfig = field(default_factory=TrackingConfig)
    mapping: MappingConfig = field(default_factory=MappingConfig)
    out_dir: Optional[str] = None
    max_frames: Optional[int] = None
    checkpoint_every: int = 50
    seed: int = 0
    threads: int = 1
    eval_tau_vis: float = 0.99
    render_keyframes: bool = True
    plots: bool = False

    def validate(self):
        if (self.dataset is None) == (self.synthetic is None):
            raise ConfigurationError("exactly one of dataset / synthetic must be given")
        if self.max_frames is not None and self.max_frames < 1:
            raise ConfigurationError("max_frames must be >= 1")
        if self.downsample < 1:
            raise ConfigurationError("downsample must be >= 1")
        if self.checkpoint_every < 1:
            raise ConfigurationError("checkpoint_every must be >= 1")
        if self.out_dir is not None:
            out = Path(self.out_dir)
            try:
                out.mkdir(parents=True, exist_ok=True)
            except OSError as exc:
                raise ConfigurationError(f"cannot create output directory {out}: {exc}") from exc

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        try:
            if isinstance(d.get("synthetic"), dict):
                d["synthetic"] = SyntheticSpec(**d["synthetic"])
            elif d.get("synthetic") is True:
                d["synthetic"] = SyntheticSpec()
            if isinstance(d.get("tracking"), dict):
                d["tracking"] = TrackingConfig(**d["tracking"])
            if isinstance(d.get("mapping"), dict):
                d["mapping"] = MappingConfig(**d["mapping"])
            return cls(**d)
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from exc

    @classmethod
    def from_yaml(cls, path) -> "PipelineConfig":
        try:
            data = yaml.safe_load(Path(path).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigurationError(f"{path}: top level must be a mapping")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class RunState:
    gmap: GaussianMap
    keyframes: list = field(default_factory=list)
    trajectory: Trajectory = field(default_factory=Trajectory)  # camera-to-world
    telemetry: list = field(default_factory=list)
    intrinsics: Optional[CameraIntrinsics] = None
    groundtruth: Optional[Trajectory] = None
    lost: bool = False


class FrameSource:
    """Sequential frame access with optional ground truth (camera-to-world)."""

    def __init__(self, cfg: PipelineConfig):
        if cfg.synthetic is not None:
            s = cfg.synthetic
            extra = {"arc_degrees": s.arc_degrees} if s.profile == "orbit" else {}
            self.scene, self._frames = generate_synthetic(
                seed=s.seed, n_primitives=s.n_primitives, n_frames=s.n_frames, profile=s.profile,
                width=s.width, height=s.height, **extra,
            )
            self.intrinsics = self.scene.intrinsics
            self.groundtruth = self.scene.trajectory
            self._seq = None
        else:
            self._seq = open_tum_sequence(cfg.dataset, cfg.max_assoc_gap, preset=cfg.preset,
                                          downsample=cfg.downsample)
            self.intrinsics = self._seq.intrinsics
            gt_ts, gt_poses = [], []
            for i in range(len(self._seq)):
                p = self._seq.gt_pose(i)
                if p is not None:
                    gt_ts.append(self._seq.timestamps[i])
                    gt_poses.append(p)
            self.groundtruth = Trajectory(gt_ts, gt_poses) if gt_poses else None
        n = len(self._frames) if self._seq is None else len(self._seq)
        self.n = n if cfg.max_frames is None else min(n, cfg.max_frames)

    def __len__(self):
        return self.n

    def frame(self, i: int) -> Frame:
        return self._frames[i] if self._seq is None else self._seq.frame(i)

    def __iter__(self):
        for i in range(self.n):
            yield self.frame(i)


def save_render_pngs(out, K: CameraIntrinsics, prefix) -> list[Path]:
    """8-bit RGB, 16-bit depth (scaled by ``depth_scale``) and 8-bit silhouette PNGs."""
    prefix = Path(prefix)
    rgb = np.round(np.clip(out.rgb, 0, 1) * 255).astype(np.uint8)
    depth = np.clip(np.round(out.depth * K.depth_scale), 0, 65535).astype(np.uint16)
    sil = np.round(np.clip(out.silhouette, 0, 1) * 255).astype(np.uint8)
    paths = [Path(f"{prefix}_rgb.png"), Path(f"{prefix}_depth.png"), Path(f"{prefix}_silhouette.png")]
    Image.fromarray(rgb).save(paths[0])
    Image.fromarray(depth).save(paths[1])
    Image.fromarray(sil, mode="L").save(paths[2])
    return paths


def evaluate_run(state: RunState, source: FrameSource, tau_vis: float = 0.99) -> EvalReport:
    """Training-view metrics of the final map plus ATE against ground truth."""
    K = state.intrinsics
    rep = EvalReport()
    for i, (t, c2w) in enumerate(zip(state.trajectory.timestamps, state.trajectory.poses)):
        frame = source.frame(i)
        out = render(state.gmap, c2w.inverse(), K)
        rep.timestamps.append(t)
        rep.psnr.append(psnr(np.clip(out.rgb, 0, 1), frame.rgb))
        try:
            rep.depth_rmse.append(depth_rmse(out.normalized_depth(tau_vis), frame.depth))
        except ValueError:
            rep.depth_rmse.append(float("nan"))
        try:
            rep.ssim.append(ssim(np.clip(out.rgb, 0, 1), frame.rgb))
        except ValueError:
            rep.ssim.append(float("nan"))
    if state.groundtruth is not None and len(state.trajectory) >= 3:
        res = ate_residuals(state.trajectory, state.groundtruth)
        rep.ate_rmse = float(np.sqrt(np.mean(res**2)))
        if len(res) == len(state.trajectory):
            rep.ate_error = [float(r) for r in res]
    return rep.finalize()


def _write_outputs(state: RunState, cfg: PipelineConfig, source: FrameSource, final: bool):
    out = Path(cfg.out_dir)
    write_trajectory(state.trajectory, out / "trajectory.txt")
    save_checkpoint(state.gmap, out / "map.gsmap")
    with open(out / "telemetry.jsonl", "w") as fh:
        for row in state.telemetry:
            fh.write(json.dumps(row) + "\n")
    if not final:
        return
    export_ply(state.gmap, out / "map.ply")
    if cfg.render_keyframes:
        kdir = out / "keyframes"
        kdir.mkdir(exist_ok=True)
        for kf in state.keyframes:
            save_render_pngs(render(state.gmap, kf.pose, state.intrinsics), state.intrinsics,
                             kdir / f"kf{kf.index:05d}")


def run_slam(cfg: PipelineConfig, on_frame=None) -> tuple[RunState, Optional[EvalReport]]:
    """Process the configured sequence frame by frame.

    Frame 0 seeds the map at the identity pose and becomes the first
    keyframe. Every later frame is tracked against the current map; frames
    with enough parallax to the latest keyframe are densified into the map,
    after which the keyframe window is optimized and faint primitives are
    pruned. Raises :class:`TrackingLostError` after flushing partial outputs.

    ``on_frame``, if given, is called with each frame's telemetry dict as
    soon as the frame is done.
    """
    cfg.validate()
    log.info("rasterizer threads: %d", set_threads(cfg.threads))
    source = FrameSource(cfg)
    K = source.intrinsics
    state = RunState(gmap=GaussianMap(), intrinsics=K, groundtruth=source.groundtruth)
    prev = prev_prev = None
    n_kf_since_ckpt = 0

    for i, frame in enumerate(source):
        t0 = time.perf_counter()
        if i == 0:
            state.gmap = initialize_from_frame(frame, K, epoch=0)
            pose, loss = Pose.identity(), 0.0
        else:
            try:
                res = track_frame(state.gmap, frame, prev, prev_prev, K, cfg.tracking)
            except TrackingLostError as exc:
                state.lost = True
                log.error("tracking lost at frame %d: %s", i, exc)
                if cfg.out_dir:
                    _write_outputs(state, cfg, source, final=False)
                raise
            pose, loss = res.pose, res.final_loss
        t1 = time.perf_counter()

        is_kf = i == 0 or select_keyframe(state.keyframes[-1], frame, pose, K, cfg.mapping)
        n_added = 0
        if is_kf:
            state.keyframes.append(Keyframe(frame=frame, pose=pose, index=i))
            stats = map_keyframe(state.gmap, state.keyframes, K, cfg.mapping, epoch=i, add_new=i > 0)
            n_added = stats.added
            n_kf_since_ckpt += 1
        t2 = time.perf_counter()

        state.trajectory.append(frame.timestamp, pose.inverse())
        state.telemetry.append({
            "frame": i,
            "track_ms": round(1e3 * (t1 - t0), 3),
            "map_ms": round(1e3 * (t2 - t1), 3),
            "loss": loss,
            "n_gaussians": len(state.gmap),
            "keyframe": bool(is_kf),
            "added": n_added,
            "fps": round(1.0 / max(t2 - t0, 1e-9), 3),
        })
        if on_frame is not None:
            on_frame(state.telemetry[-1])
        log.debug("frame %d loss %.5f gaussians %d kf %s", i, loss, len(state.gmap), is_kf)
        prev_prev, prev = prev, pose
        if cfg.out_dir and n_kf_since_ckpt >= cfg.checkpoint_every:
            save_checkpoint(state.gmap, Path(cfg.out_dir) / "map.gsmap")
            n_kf_since_ckpt = 0

    report = None
    if state.groundtruth is not None or cfg.out_dir:
        report = evaluate_run(state, source, cfg.eval_tau_vis)
    if cfg.out_dir:
        _write_outputs(state, cfg, source, final=True)
        if report is not None:
            write_report(report, cfg.out_dir)
            if cfg.plots:
                plot_report(report, state.trajectory, state.groundtruth, cfg.out_dir)
    return state, report


def render_views(checkpoint, poses, K: CameraIntrinsics, out_dir) -> list[Path]:
    """Render RGB/depth/silhouette PNG triples for world-to-camera ``poses``."""
    gmap = load_checkpoint(checkpoint)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, pose in enumerate(poses):
        paths += save_render_pngs(render(gmap, pose, K), K, out_dir / f"view{i:05d}")
    return paths


def check_dataset(cfg: PipelineConfig):
    if cfg.dataset is not None and not Path(cfg.dataset).is_dir():
        raise DatasetFormatError(f"dataset directory {cfg.dataset} does not exist")
