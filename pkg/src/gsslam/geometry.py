"""Pinhole camera model, rigid poses and point projections.

Conventions
-----------
* Pixel centers sit at integer coordinates, origin top-left, ``u`` to the
  right and ``v`` downward.
* A :class:`Pose` maps world coordinates into the camera frame
  (``X_c = R X_w + t``). Trajectories written to disk store the inverse,
  camera-to-world.
* Quaternions are scalar-last ``(qx, qy, qz, qw)``, the same order used by
  the TUM file format and :mod:`scipy.spatial.transform`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import BehindCameraError, ConfigurationError, InvalidDepthError


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    baseline: Optional[float] = None
    depth_scale: float = 5000.0

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ConfigurationError(f"focal lengths must be positive, got {self.fx}, {self.fy}")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ConfigurationError(
                f"principal point ({self.cx}, {self.cy}) outside a {self.width}x{self.height} image"
            )
        if not self.depth_scale > 0:
            raise ConfigurationError("depth_scale must be positive")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def scaled(self, factor: int) -> "CameraIntrinsics":
        """Intrinsics for an image downsampled by an integer ``factor``.

        Keeps the integer-pixel-center convention, so the principal point
        shifts by half a pixel before and after scaling.
        """
        return CameraIntrinsics(
            fx=self.fx / factor,
            fy=self.fy / factor,
            cx=(self.cx + 0.5) / factor - 0.5,
            cy=(self.cy + 0.5) / factor - 0.5,
            width=self.width // factor,
            height=self.height // factor,
            baseline=self.baseline,
            depth_scale=self.depth_scale,
        )


class PixelPoint(NamedTuple):
    u: float
    v: float
    u_right: Optional[float] = None


def _rotation(q) -> Rotation:
    return Rotation.from_quat(np.asarray(q, dtype=np.float64))


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid world-to-camera transform with a unit-quaternion rotation."""

    rotation: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 0.0, 1.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        q = np.array(self.rotation, dtype=np.float64).reshape(4)
        n = np.linalg.norm(q)
        if not np.isfinite(n) or n == 0.0:
            raise ValueError("rotation quaternion must be finite and nonzero")
        if abs(n - 1.0) > 1e-12:
            q = q / n
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        q.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", q)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_matrix(cls, T) -> "Pose":
        T = np.asarray(T, dtype=np.float64)
        return cls(Rotation.from_matrix(T[:3, :3]).as_quat(), T[:3, 3])

    @classmethod
    def from_rt(cls, R, t) -> "Pose":
        return cls(Rotation.from_matrix(np.asarray(R, dtype=np.float64)).as_quat(), t)

    @property
    def R(self) -> np.ndarray:
        return _rotation(self.rotation).as_matrix()

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.translation
        return T

    def apply(self, X) -> np.ndarray:
        """Transform one point ``(3,)`` or a batch ``(N, 3)``."""
        X = np.asarray(X, dtype=np.float64)
        return X @ self.R.T + self.translation

    def inverse(self) -> "Pose":
        rot = _rotation(self.rotation).inv()
        return Pose(rot.as_quat(), -rot.apply(self.translation))

    def compose(self, other: "Pose") -> "Pose":
        """``self ∘ other``: apply ``other`` first, then ``self``."""
        r1 = _rotation(self.rotation)
        r2 = _rotation(other.rotation)
        return Pose((r1 * r2).as_quat(), r1.apply(other.translation) + self.translation)

    __matmul__ = compose

    def rotate_left(self, omega) -> "Pose":
        """Left-multiply the rotation by ``exp(omega)``; translation is left untouched."""
        dq = Rotation.from_rotvec(np.asarray(omega, dtype=np.float64))
        return Pose((dq * _rotation(self.rotation)).as_quat(), self.translation)

    def translate(self, delta) -> "Pose":
        return Pose(self.rotation, self.translation + np.asarray(delta, dtype=np.float64))

    def camera_center(self) -> np.ndarray:
        return self.inverse().translation

    def rotation_angle_to(self, other: "Pose") -> float:
        """Geodesic angle in radians between the two rotations."""
        rel = _rotation(self.rotation).inv() * _rotation(other.rotation)
        return float(np.linalg.norm(rel.as_rotvec()))

    def allclose(self, other: "Pose", atol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.matrix(), other.matrix(), rtol=0.0, atol=atol)
        )

    def __repr__(self):
        q = np.array2string(self.rotation, precision=6)
        t = np.array2string(self.translation, precision=6)
        return f"Pose(rotation={q}, translation={t})"


def transform_point(T: Pose, X) -> np.ndarray:
    return T.apply(X)


def project_mono(X, K: CameraIntrinsics) -> PixelPoint:
    x, y, z = (float(c) for c in np.asarray(X, dtype=np.float64).reshape(3))
    if not z > 0:
        raise BehindCameraError(f"point has non-positive depth z={z}")
    return PixelPoint(K.fx * x / z + K.cx, K.fy * y / z + K.cy)


def project_stereo(X, K: CameraIntrinsics) -> PixelPoint:
    """Rectified stereo projection: left-image pixel plus right-image column."""
    if K.baseline is None:
        raise ConfigurationError("stereo projection needs a baseline")
    x, y, z = (float(c) for c in np.asarray(X, dtype=np.float64).reshape(3))
    u, v, _ = project_mono((x, y, z), K)
    return PixelPoint(u, v, K.fx * (x - K.baseline) / z + K.cx)


def unproject(p, depth: float, K: CameraIntrinsics) -> np.ndarray:
    if not depth > 0:
        raise InvalidDepthError(f"depth must be positive, got {depth}")
    u, v = float(p[0]), float(p[1])
    return np.array([(u - K.cx) / K.fx * depth, (v - K.cy) / K.fy * depth, depth])


def project_points(X, K: CameraIntrinsics):
    """Vectorized mono projection of ``(N, 3)`` camera-frame points.

    Returns ``(uv, z)``; rows with ``z <= 0`` are NaN in ``uv``.
    """
    X = np.asarray(X, dtype=np.float64).reshape(-1, 3)
    z = X[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        uv = np.stack([K.fx * X[:, 0] / z + K.cx, K.fy * X[:, 1] / z + K.cy], axis=1)
    uv[z <= 0] = np.nan
    return uv, z


def unproject_depth_map(depth, K: CameraIntrinsics, mask=None):
    """Camera-frame points for every pixel of ``depth`` selected by ``mask``.

    Returns ``(points (N, 3), rows, cols)``; pixels with depth <= 0 are skipped.
    """
    depth = np.asarray(depth, dtype=np.float64)
    valid = depth > 0
    if mask is not None:
        valid &= mask
    rows, cols = np.nonzero(valid)
    z = depth[rows, cols]
    pts = np.stack([(cols - K.cx) / K.fx * z, (rows - K.cy) / K.fy * z, z], axis=1)
    return pts, rows, cols


def skew(w) -> np.ndarray:
    x, y, z = w
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
