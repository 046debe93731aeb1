"""Camera tracking by inverse rendering.

The pose of a new frame is refined against the current map by gradient
descent on an L1 color + depth loss. Rotation and translation are updated
in separate, alternating phases: a rotation-only phase never touches the
translation vector and vice versa.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import ConfigurationError, TrackingLostError, UntrackableFrameError
from .geometry import CameraIntrinsics, Pose
from .render import render, render_backward


@dataclass
class TrackingConfig:
    iters_rotation: int = 5
    iters_translation: int = 5
    outer_rounds: int = 10
    lr_rotation: float = 2e-3
    lr_translation: float = 1e-3
    lambda_color: float = 0.5
    lambda_depth: float = 1.0
    tau_vis: float = 0.99
    converge_tol: float = 1e-5
    divergence_factor: float = 10.0
    max_backtracks: int = 3
    # step-size multiplier after an accepted step (1.0 = plain fixed-rate descent)
    step_growth: float = 1.5
    # doubling trials along each round's net displacement (0 = off)
    extrapolation: int = 4
    # start from the constant-velocity extrapolation instead of the last pose
    constant_velocity: bool = False

    def __post_init__(self):
        if min(self.iters_rotation, self.iters_translation, self.outer_rounds) < 1:
            raise ConfigurationError("iteration counts must be >= 1")
        if self.lambda_color < 0 or self.lambda_depth < 0 or (self.lambda_color == 0 and self.lambda_depth == 0):
            raise ConfigurationError("loss weights must be >= 0 and not both zero")
        if not 0.0 < self.tau_vis < 1.0:
            raise ConfigurationError("tau_vis must lie in (0, 1)")
        if self.lr_rotation <= 0 or self.lr_translation <= 0:
            raise ConfigurationError("learning rates must be positive")
        if self.step_growth < 1.0:
            raise ConfigurationError("step_growth must be >= 1")
        if self.extrapolation < 0:
            raise ConfigurationError("extrapolation must be >= 0")
        if self.max_backtracks < 0:
            raise ConfigurationError("max_backtracks must be >= 0")


@dataclass
class TrackingResult:
    pose: Pose
    final_loss: float
    iterations_used: int
    converged: bool


@dataclass
class ImageLoss:
    """Scalar loss plus its gradient w.r.t. the raw rendered images."""

    value: float
    n_pixels: int
    grad_rgb: np.ndarray
    grad_depth: np.ndarray
    grad_silhouette: np.ndarray


def image_loss(out, frame, mask, lambda_color: float, lambda_depth: float,
               s_floor: float = 0.5) -> ImageLoss:
    """Mean over ``mask`` of ``λc·Σ|C−I| + λd·|D/max(S, s_floor) − Z|``.

    The color residual is summed over channels. Silhouette values above
    ``s_floor`` give the usual normalized depth ``D/S``; below it the
    denominator is frozen, which keeps the loss finite on uncovered pixels
    and still pulls rendered depth toward the observation.
    """
    n = int(mask.sum())
    H, W = mask.shape
    if n == 0:
        z = np.zeros((H, W))
        return ImageLoss(0.0, 0, np.zeros((H, W, 3)), z, z.copy())
    S = out.silhouette
    denom = np.maximum(S, s_floor)
    dn = out.depth / denom
    rc = out.rgb - frame.rgb
    rd = dn - frame.depth
    m3 = mask[..., None]
    value = (lambda_color * np.abs(rc[mask]).sum() + lambda_depth * np.abs(rd[mask]).sum()) / n

    g_rgb = np.where(m3, lambda_color * np.sign(rc) / n, 0.0)
    g_dn = np.where(mask, lambda_depth * np.sign(rd) / n, 0.0)
    g_depth = g_dn / denom
    g_sil = np.where(S > s_floor, -g_dn * out.depth / (denom * denom), 0.0)
    return ImageLoss(float(value), n, g_rgb, g_depth, g_sil)


def tracking_mask(out, frame, tau_vis: float) -> np.ndarray:
    return (out.silhouette > tau_vis) & (frame.depth > 0)


def tracking_loss(gmap, pose: Pose, frame, K: CameraIntrinsics, cfg: TrackingConfig,
                  out=None) -> ImageLoss:
    """Visibility-gated L1 loss of ``frame`` against the map rendered at ``pose``.

    Only pixels whose rendered silhouette exceeds ``cfg.tau_vis`` and whose
    sensor depth is valid take part.
    """
    if len(gmap) == 0:
        raise ValueError("tracking needs a non-empty map")
    if out is None:
        out = render(gmap, pose, K)
    mask = tracking_mask(out, frame, cfg.tau_vis)
    if not mask.any():
        raise UntrackableFrameError("no pixel passes the visibility gate")
    return image_loss(out, frame, mask, cfg.lambda_color, cfg.lambda_depth, s_floor=cfg.tau_vis)


def tracking_gradient(gmap, pose: Pose, frame, K: CameraIntrinsics, cfg: TrackingConfig):
    """Loss value and the pose gradient ``(d/d rotation, d/d translation)``."""
    out = render(gmap, pose, K)
    loss = tracking_loss(gmap, pose, frame, K, cfg, out=out)
    grads = render_backward(out, loss.grad_rgb, loss.grad_depth, loss.grad_silhouette)
    return loss.value, grads


def initial_guess(prev_pose: Pose, prev_prev_pose: Pose | None, cfg: TrackingConfig) -> Pose:
    if cfg.constant_velocity and prev_prev_pose is not None:
        return prev_pose.compose(prev_prev_pose.inverse()).compose(prev_pose)
    return prev_pose


def track_frame(gmap, frame, prev_pose: Pose, prev_prev_pose: Pose | None,
                K: CameraIntrinsics, cfg: TrackingConfig | None = None) -> TrackingResult:
    """Estimate the world-to-camera pose of ``frame``.

    Each outer round runs ``iters_rotation`` rotation-only steps followed by
    ``iters_translation`` translation-only steps. Every step is a short
    backtracking search: a candidate that raises the loss is discarded and
    the group's step size halved, up to ``max_backtracks`` times. An
    accepted step multiplies the group's step size by ``step_growth``.

    Rotation about y and translation along x move the image almost the same
    way, so alternating updates crawl along that valley. After each round
    the tracker therefore retries the round's net displacement scaled by
    1, 2, 4, ... (``extrapolation`` trials), applied as a rotation-only move
    followed by a translation-only move so the decoupling stays literal.
    The pose is only replaced by lower-or-equal-loss candidates, so the
    returned pose is the best one evaluated.
    """
    cfg = cfg or TrackingConfig()
    if len(gmap) == 0:
        raise ValueError("tracking needs a non-empty map")

    pose = initial_guess(prev_pose, prev_prev_pose, cfg)
    loss, grads = tracking_gradient(gmap, pose, frame, K, cfg)
    initial_loss = loss
    lr = {"rotation": cfg.lr_rotation, "translation": cfg.lr_translation}
    evals = 1
    converged = False
    bad_rounds = 0

    def evaluate(cand):
        nonlocal evals
        evals += 1
        out = render(gmap, cand, K)
        try:
            return out, tracking_loss(gmap, cand, frame, K, cfg, out=out)
        except UntrackableFrameError:
            return out, None

    def accept(out, cand_loss):
        return render_backward(out, cand_loss.grad_rgb, cand_loss.grad_depth, cand_loss.grad_silhouette)

    for _ in range(cfg.outer_rounds):
        round_start, round_pose = loss, pose
        for group, n_steps in (("rotation", cfg.iters_rotation), ("translation", cfg.iters_translation)):
            for _ in range(n_steps):
                if loss == 0.0:
                    break
                for _ in range(cfg.max_backtracks + 1):
                    step = lr[group]
                    if group == "rotation":
                        cand = pose.rotate_left(-step * grads.rotation)
                    else:
                        cand = pose.translate(-step * grads.translation)
                    out, cand_loss = evaluate(cand)
                    if cand_loss is not None and cand_loss.value <= loss:
                        break
                    lr[group] *= 0.5
                else:
                    continue
                lr[group] *= cfg.step_growth
                pose, loss = cand, cand_loss.value
                grads = accept(out, cand_loss)

        if cfg.extrapolation and loss > 0.0 and pose is not round_pose:
            # the round's net move points along the valley; walk further along it
            # with a rotation-only then a translation-only step per trial
            d_rot = (Rotation.from_quat(pose.rotation) * Rotation.from_quat(round_pose.rotation).inv()).as_rotvec()
            d_t = pose.translation - round_pose.translation
            base, best = pose, None
            for k in range(cfg.extrapolation):
                alpha = float(2 ** k)
                mid = base.rotate_left(alpha * d_rot)
                trial = [(mid, *evaluate(mid))]
                end = mid.translate(alpha * d_t)
                trial.append((end, *evaluate(end)))
                trial = [c for c in trial if c[2] is not None and c[2].value <= loss]
                if not trial:
                    break
                best = min(trial, key=lambda c: c[2].value)
                pose, loss = best[0], best[2].value
            if best is not None:
                grads = accept(best[1], best[2])

        if loss > cfg.divergence_factor * initial_loss:
            bad_rounds += 1
            if bad_rounds >= 2:
                raise TrackingLostError("tracking loss diverged", best_pose=pose, best_loss=loss)
        else:
            bad_rounds = 0
        if loss == 0.0 or (round_start - loss) < cfg.converge_tol * round_start:
            converged = True
            break

    if not math.isfinite(loss):
        raise TrackingLostError("non-finite tracking loss", best_pose=pose, best_loss=loss)
    return TrackingResult(pose=pose, final_loss=loss, iterations_used=evals, converged=converged)
