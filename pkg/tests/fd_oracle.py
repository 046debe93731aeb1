"""Central finite-difference oracle for the rasterizer and its losses.

Independent of ``render_backward``: it only calls the forward renderer and
perturbs one scalar at a time.
"""

import numpy as np

from gsslam.gaussian_map import GaussianMap
from gsslam.geometry import CameraIntrinsics, Pose
from gsslam.render import render
from gsslam.tracking import image_loss

PARAM_NAMES = ("mu_x", "mu_y", "mu_z", "radius", "opacity", "c_r", "c_g", "c_b")


class SimpleFrame:
    def __init__(self, rgb, depth):
        self.rgb = rgb
        self.depth = depth


def random_scene(seed, n=5, size=8):
    rng = np.random.default_rng(seed)
    K = CameraIntrinsics(fx=8.0, fy=8.0, cx=(size - 1) / 2, cy=(size - 1) / 2, width=size, height=size)
    centers = np.c_[rng.uniform(-0.4, 0.4, (n, 2)), rng.uniform(1.0, 2.0, n)]
    gmap = GaussianMap(
        centers,
        radii=rng.uniform(0.12, 0.35, n),
        opacities=rng.uniform(0.2, 0.9, n),
        colors=rng.uniform(0.1, 0.9, (n, 3)),
    )
    pose = Pose.identity().rotate_left(rng.normal(0, 0.02, 3)).translate(rng.normal(0, 0.02, 3))
    frame = SimpleFrame(rng.uniform(0, 1, (size, size, 3)), rng.uniform(1.0, 2.0, (size, size)))
    return gmap, pose, K, frame


def _flat(gmap):
    return np.concatenate([gmap.centers, gmap.radii[:, None], gmap.opacities[:, None], gmap.colors], axis=1)


def _unflat(x):
    return GaussianMap(x[:, 0:3], x[:, 3], x[:, 4], x[:, 5:8])


def evaluate(gmap, pose, K, frame, *, gated, tau_vis=0.5, lc=0.5, ld=1.0):
    """Loss value and a discrete signature of every non-smooth branch taken."""
    out = render(gmap, pose, K)
    if gated:
        mask = (out.silhouette > tau_vis) & (frame.depth > 0)
        s_floor = tau_vis
    else:
        mask = frame.depth > 0
        s_floor = 0.5
    loss = image_loss(out, frame, mask, lc, ld, s_floor=s_floor)
    H, W = mask.shape
    contrib = tuple(tuple(out.contributors(r, c)[0]) for r in range(H) for c in range(W))
    dn = out.depth / np.maximum(out.silhouette, s_floor)
    sig = (
        contrib,
        mask.tobytes(),
        np.sign(out.rgb - frame.rgb).tobytes(),
        np.sign(dn - frame.depth).tobytes(),
        (out.silhouette > s_floor).tobytes(),
    )
    return loss.value, sig, out, loss


def finite_difference(gmap, pose, K, frame, *, gated, h=1e-4, **kw):
    """Central differences for every primitive scalar and the six pose scalars.

    Returns ``(grad_prims (N, 8), grad_rot (3,), grad_trans (3,), smooth)``
    where ``smooth`` is False if any stencil crossed a discontinuity.
    """
    _, base_sig, _, _ = evaluate(gmap, pose, K, frame, gated=gated, **kw)
    x0 = _flat(gmap)
    gp = np.zeros_like(x0)
    smooth = True

    def central(f_plus, f_minus):
        nonlocal smooth
        lp, sp, _, _ = f_plus
        lm, sm, _, _ = f_minus
        if sp != base_sig or sm != base_sig:
            smooth = False
        return (lp - lm) / (2 * h)

    for i in range(x0.shape[0]):
        for j in range(x0.shape[1]):
            xp = x0.copy()
            xm = x0.copy()
            xp[i, j] += h
            xm[i, j] -= h
            gp[i, j] = central(
                evaluate(_unflat(xp), pose, K, frame, gated=gated, **kw),
                evaluate(_unflat(xm), pose, K, frame, gated=gated, **kw),
            )
    grot = np.zeros(3)
    gtr = np.zeros(3)
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        grot[k] = central(
            evaluate(gmap, pose.rotate_left(e), K, frame, gated=gated, **kw),
            evaluate(gmap, pose.rotate_left(-e), K, frame, gated=gated, **kw),
        )
        gtr[k] = central(
            evaluate(gmap, pose.translate(e), K, frame, gated=gated, **kw),
            evaluate(gmap, pose.translate(-e), K, frame, gated=gated, **kw),
        )
    return gp, grot, gtr, smooth


def relative_error(analytic, numeric, floor=1e-8):
    a = np.asarray(analytic, dtype=np.float64)
    b = np.asarray(numeric, dtype=np.float64)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))
