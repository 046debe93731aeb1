"""RGB-D SLAM on isotropic 3D Gaussian splats.

The map is a set of colored, isotropic Gaussians rendered by a tile-based
CPU splatting rasterizer with analytic gradients. Camera poses are tracked
by inverse rendering with alternating rotation-only and translation-only
descent, and the map is refined over a sliding window of keyframes.
"""

import warnings

warnings.filterwarnings("ignore", message="The TBB threading layer requires TBB")

from .errors import (  # noqa: E402
    GSSlamError,
    TrackingLostError,
    UntrackableFrameError,
)
from .geometry import CameraIntrinsics, Pose  # noqa: E402
from .gaussian_map import GaussianMap, GaussianPrimitive  # noqa: E402
from .render import render, render_backward  # noqa: E402

__all__ = [
    "CameraIntrinsics",
    "GSSlamError",
    "GaussianMap",
    "GaussianPrimitive",
    "Pose",
    "TrackingLostError",
    "UntrackableFrameError",
    "render",
    "render_backward",
]
__version__ = "0.1.0"
