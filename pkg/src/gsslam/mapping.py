"""Keyframe selection and fixed-pose optimization of the Gaussian map."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DegenerateParallaxError
from .gaussian_map import DELTA_ADD, EPS_OPACITY, R_MAX, R_MIN, TAU_ADD, densify, prune
from .geometry import CameraIntrinsics, Pose
from .render import render, render_backward
from .tracking import image_loss


@dataclass
class Keyframe:
    frame: object
    pose: Pose
    index: int


@dataclass
class MappingConfig:
    parallax_threshold: float = 15.0
    grid_stride: int = 8
    map_iters: int = 60
    lr_center: float = 1e-4
    lr_radius: float = 5e-4
    lr_opacity: float = 5e-2
    lr_color: float = 2.5e-3
    window_size: int = 8
    lambda_color: float = 0.5
    lambda_depth: float = 1.0
    backtrack: bool = True
    tau_add: float = TAU_ADD
    delta_add: float = DELTA_ADD
    eps_opacity: float = EPS_OPACITY
    r_min: float = R_MIN
    r_max: float = R_MAX

    def __post_init__(self):
        if not self.parallax_threshold > 0:
            raise ConfigurationError("parallax_threshold must be positive")
        if self.map_iters < 1 or self.window_size < 1 or self.grid_stride < 1:
            raise ConfigurationError("map_iters, window_size and grid_stride must be >= 1")

    def learning_rates(self) -> dict:
        return {
            "centers": self.lr_center,
            "radii": self.lr_radius,
            "opacities": self.lr_opacity,
            "colors": self.lr_color,
        }


def average_parallax(kf: Keyframe, current, current_pose: Pose, K: CameraIntrinsics,
                     stride: int = 8) -> float:
    """Mean pixel displacement of a keyframe sample grid reprojected into ``current``.

    Grid pixels with valid keyframe depth are lifted to 3D, moved by the
    relative pose and reprojected. Samples leaving the image or landing
    behind the camera are dropped.
    """
    depth = kf.frame.depth
    rows = np.arange(0, depth.shape[0], stride)
    cols = np.arange(0, depth.shape[1], stride)
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    rr, cc = rr.ravel(), cc.ravel()
    z = depth[rr, cc]
    ok = z > 0
    if not ok.any():
        raise DegenerateParallaxError("keyframe has no valid depth on the sample grid")
    rr, cc, z = rr[ok], cc[ok], z[ok]
    pts = np.stack([(cc - K.cx) / K.fx * z, (rr - K.cy) / K.fy * z, z], axis=1)
    rel = current_pose.compose(kf.pose.inverse())
    q = rel.apply(pts)
    front = q[:, 2] > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        u = K.fx * q[:, 0] / q[:, 2] + K.cx
        v = K.fy * q[:, 1] / q[:, 2] + K.cy
    inside = front & (u >= -0.5) & (u < K.width - 0.5) & (v >= -0.5) & (v < K.height - 0.5)
    if not inside.any():
        raise DegenerateParallaxError("no keyframe sample reprojects into the current frame")
    disp = np.hypot(u[inside] - cc[inside], v[inside] - rr[inside])
    return float(disp.mean())


def select_keyframe(kf_latest: Keyframe | None, current, current_pose: Pose,
                    K: CameraIntrinsics, cfg: MappingConfig | None = None) -> bool:
    cfg = cfg or MappingConfig()
    if kf_latest is None:
        return True
    try:
        return average_parallax(kf_latest, current, current_pose, K, cfg.grid_stride) > cfg.parallax_threshold
    except DegenerateParallaxError:
        return True


class Adam:
    """Adam over named parameter arrays, each with its own step size."""

    def __init__(self, lrs: dict, beta1=0.9, beta2=0.999, eps=1e-15):
        self.lrs = dict(lrs)
        self.b1, self.b2, self.eps = beta1, beta2, eps
        self.m = {}
        self.v = {}
        self.t = 0

    def reset(self):
        self.m.clear()
        self.v.clear()
        self.t = 0

    def step(self, params: dict, grads: dict):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for name, lr in self.lrs.items():
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            m = self.m[name]
            v = self.v[name]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            params[name] -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def mapping_loss(gmap, kf: Keyframe, K: CameraIntrinsics, cfg: MappingConfig, out=None):
    """Ungated L1 loss over every valid-depth pixel of one keyframe."""
    if out is None:
        out = render(gmap, kf.pose, K)
    mask = kf.frame.depth > 0
    return image_loss(out, kf.frame, mask, cfg.lambda_color, cfg.lambda_depth), out


def window_loss(gmap, keyframes, K, cfg) -> float:
    return float(np.mean([mapping_loss(gmap, kf, K, cfg)[0].value for kf in keyframes]))


def _snapshot(gmap):
    return {k: v.copy() for k, v in gmap.params().items()}


def _restore(gmap, snap):
    gmap.centers, gmap.radii, gmap.opacities, gmap.colors = (
        snap["centers"].copy(), snap["radii"].copy(), snap["opacities"].copy(), snap["colors"].copy())


def optimize_scene(gmap, keyframes, K: CameraIntrinsics, cfg: MappingConfig | None = None) -> float:
    """Refine primitive parameters against a window of fixed-pose keyframes.

    Keyframes are visited round-robin, newest first. With ``cfg.backtrack``
    the window loss is checked after every pass over the window; a pass
    that raised it is undone and all step sizes are halved. Returns the
    final mean loss over the window.
    """
    cfg = cfg or MappingConfig()
    keyframes = list(keyframes)
    if not keyframes:
        raise ValueError("optimize_scene needs at least one keyframe")
    if len(gmap) == 0:
        raise ValueError("optimize_scene needs a non-empty map")
    order = keyframes[::-1]
    opt = Adam(cfg.learning_rates())
    epoch_len = len(order)
    best = window_loss(gmap, order, K, cfg) if cfg.backtrack else None
    snap = _snapshot(gmap) if cfg.backtrack else None

    for it in range(cfg.map_iters):
        kf = order[it % epoch_len]
        loss, out = mapping_loss(gmap, kf, K, cfg)
        if loss.n_pixels and loss.value > 0.0:
            g = render_backward(out, loss.grad_rgb, loss.grad_depth, loss.grad_silhouette)
            params = gmap.params()
            opt.step(params, {"centers": g.centers, "radii": g.radii,
                              "opacities": g.opacities, "colors": g.colors})
            gmap.clamp(cfg.r_min)
        end_of_epoch = (it + 1) % epoch_len == 0 or it + 1 == cfg.map_iters
        if cfg.backtrack and end_of_epoch:
            current = window_loss(gmap, order, K, cfg)
            if current > best:
                _restore(gmap, snap)
                opt.lrs = {k: 0.5 * v for k, v in opt.lrs.items()}
                opt.reset()
            else:
                best = current
                snap = _snapshot(gmap)

    return best if cfg.backtrack else window_loss(gmap, order, K, cfg)


@dataclass
class MappingStats:
    added: int = 0
    removed: int = 0
    loss: float = float("nan")
    extra: dict = field(default_factory=dict)


def map_keyframe(gmap, keyframes, K: CameraIntrinsics, cfg: MappingConfig | None = None,
                 epoch: int = 0, add_new: bool = True) -> MappingStats:
    """Full keyframe event on the newest keyframe: densify, optimize, prune."""
    cfg = cfg or MappingConfig()
    newest = keyframes[-1]
    stats = MappingStats()
    if add_new:
        out = render(gmap, newest.pose, K)
        stats.added = densify(gmap, newest.frame, newest.pose, out, K,
                              tau_add=cfg.tau_add, delta_add=cfg.delta_add, epoch=epoch)
    window = keyframes[-cfg.window_size:]
    stats.loss = optimize_scene(gmap, window, K, cfg)
    stats.removed = prune(gmap, cfg.eps_opacity, cfg.r_min, cfg.r_max)
    return stats
