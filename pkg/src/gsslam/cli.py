"""Command-line entry point: ``gsslam {run,render,eval,synth}``.

Exit codes: 0 success, 2 dataset error, 3 tracking lost
(including a frame with no visible map pixel), 4 config error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .dataset import TUM_PRESETS, export_tum_layout, generate_synthetic, read_trajectory, tum_intrinsics
from .errors import (
    CheckpointFormatError,
    ConfigurationError,
    DatasetFormatError,
    InsufficientOverlapError,
    TrackingLostError,
    UntrackableFrameError,
)
from .geometry import CameraIntrinsics
from .metrics import EvalReport, ate_residuals, plot_report, write_report
from .pipeline import PipelineConfig, SyntheticSpec, render_views, run_slam

EXIT_OK = 0
EXIT_DATASET = 2
EXIT_TRACKING_LOST = 3
EXIT_CONFIG = 4

log = logging.getLogger("gsslam")


def _base_config(args) -> PipelineConfig:
    if args.config:
        return PipelineConfig.from_yaml(args.config)
    return PipelineConfig()


def build_run_config(args) -> PipelineConfig:
    """Config file first, then command-line flags on top."""
    cfg = _base_config(args)
    if args.dataset is not None:
        cfg.dataset = args.dataset
        cfg.synthetic = None
    if args.synthetic:
        cfg.dataset = None
        if cfg.synthetic is None:
            cfg.synthetic = SyntheticSpec()
    if args.frames is not None:
        if cfg.synthetic is None:
            raise ConfigurationError("--frames only applies to synthetic runs")
        cfg.synthetic.n_frames = args.frames
    if args.preset is not None:
        cfg.preset = args.preset
    if args.downsample is not None:
        cfg.downsample = args.downsample
    if args.out is not None:
        cfg.out_dir = args.out
    if args.max_frames is not None:
        cfg.max_frames = args.max_frames
    if args.seed is not None:
        cfg.seed = args.seed
        if cfg.synthetic is not None:
            cfg.synthetic.seed = args.seed
    if args.threads is not None:
        cfg.threads = args.threads
    if args.plots:
        cfg.plots = True
    if cfg.threads < 1:
        raise ConfigurationError("--threads must be >= 1")
    return cfg


def cmd_run(args) -> int:
    cfg = build_run_config(args)
    if cfg.dataset is not None and not Path(cfg.dataset).is_dir():
        raise DatasetFormatError(f"dataset directory {cfg.dataset} does not exist")

    def emit(row):
        print(json.dumps(row), flush=True)

    _, report = run_slam(cfg, on_frame=emit)
    if report is not None:
        print(json.dumps({"summary": report.summary()}), flush=True)
    return EXIT_OK


def _intrinsics_from_args(args) -> CameraIntrinsics:
    if args.intrinsics:
        try:
            data = json.loads(Path(args.intrinsics).read_text())
            K = CameraIntrinsics(**data)
        except (OSError, ValueError, TypeError) as exc:
            raise ConfigurationError(f"cannot read intrinsics {args.intrinsics}: {exc}") from exc
        return K.scaled(args.downsample) if args.downsample > 1 else K
    if args.preset is None:
        raise ConfigurationError("render needs --intrinsics or --preset")
    return tum_intrinsics(args.preset, args.downsample)


def cmd_render(args) -> int:
    K = _intrinsics_from_args(args)
    traj = read_trajectory(args.trajectory)
    poses = [p.inverse() for p in traj.poses]  # file holds camera-to-world
    paths = render_views(args.checkpoint, poses, K, args.out)
    print(json.dumps({"views": len(poses), "files": len(paths)}))
    return EXIT_OK


def cmd_eval(args) -> int:
    est = read_trajectory(args.estimate)
    gt = read_trajectory(args.groundtruth)
    res = ate_residuals(est, gt, tol=args.tolerance)
    rep = EvalReport(ate_rmse=float((res**2).mean() ** 0.5))
    if len(res) == len(est):
        rep.timestamps = list(est.timestamps)
        rep.ate_error = [float(r) for r in res]
        nan = [float("nan")] * len(res)
        rep.psnr, rep.depth_rmse, rep.ssim = list(nan), list(nan), list(nan)
    rep.finalize()
    if args.out:
        write_report(rep, args.out)
        if args.plots:
            plot_report(rep, est, gt, args.out)
    print(json.dumps(rep.summary()))
    return EXIT_OK


def cmd_synth(args) -> int:
    extra = {"arc_degrees": args.arc} if args.profile == "orbit" else {}
    scene, frames = generate_synthetic(seed=args.seed, n_primitives=args.primitives, n_frames=args.frames,
                                       profile=args.profile, width=args.size, height=args.size, **extra)
    root = export_tum_layout(scene, frames, args.out)
    print(json.dumps({"out": str(root), "frames": len(frames), "primitives": len(scene.primitives)}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gsslam", description="Gaussian-splatting RGB-D SLAM")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run SLAM on a TUM sequence or a synthetic scene")
    r.add_argument("--dataset", help="TUM-RGBD sequence directory")
    r.add_argument("--synthetic", action="store_true", help="generate and run a synthetic orbit scene")
    r.add_argument("--frames", type=int, help="synthetic sequence length")
    r.add_argument("--preset", choices=sorted(TUM_PRESETS))
    r.add_argument("--downsample", type=int)
    r.add_argument("--config", help="YAML config file; flags override its values")
    r.add_argument("--out", help="output directory")
    r.add_argument("--max-frames", type=int)
    r.add_argument("--seed", type=int)
    r.add_argument("--threads", type=int)
    r.add_argument("--plots", action="store_true", help="write PNG plots (needs matplotlib)")
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("render", help="render views of a saved map")
    v.add_argument("--checkpoint", required=True)
    v.add_argument("--trajectory", required=True, help="TUM-format camera-to-world poses")
    v.add_argument("--preset", choices=sorted(TUM_PRESETS))
    v.add_argument("--intrinsics", help="JSON file with CameraIntrinsics fields")
    v.add_argument("--downsample", type=int, default=1)
    v.add_argument("--out", required=True)
    v.set_defaults(func=cmd_render)

    e = sub.add_parser("eval", help="ATE of an estimated trajectory against ground truth")
    e.add_argument("--estimate", required=True)
    e.add_argument("--groundtruth", required=True)
    e.add_argument("--tolerance", type=float, default=0.02, help="timestamp matching tolerance (s)")
    e.add_argument("--out")
    e.add_argument("--plots", action="store_true")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("synth", help="write a synthetic sequence in TUM layout")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--primitives", type=int, default=500)
    s.add_argument("--frames", type=int, default=60)
    s.add_argument("--profile", default="orbit", choices=("orbit", "dolly", "rotation", "static"))
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--arc", type=float, default=30.0, help="orbit arc in degrees")
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (DatasetFormatError, CheckpointFormatError, InsufficientOverlapError) as exc:
        log.error("%s", exc)
        return EXIT_DATASET
    except (TrackingLostError, UntrackableFrameError) as exc:
        log.error("%s", exc)
        return EXIT_TRACKING_LOST
    except ConfigurationError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
