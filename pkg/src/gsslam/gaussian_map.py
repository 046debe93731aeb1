"""Explicit scene map made of isotropic 3D Gaussians.

Each primitive carries eight numbers: an RGB color, a world-frame center,
a scalar radius and an opacity. The map is stored as parallel numpy
arrays so the renderer can consume it without copying.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CheckpointFormatError, EmptyInitializationError
from .geometry import CameraIntrinsics, Pose, unproject_depth_map

INIT_OPACITY = 0.5

# densification / pruning defaults
TAU_ADD = 0.5
DELTA_ADD = 0.05
EPS_OPACITY = 0.005
R_MIN = 1e-6
R_MAX = 1.0

CHECKPOINT_MAGIC = b"GSMAP01\0"


@dataclass(frozen=True)
class GaussianPrimitive:
    color: tuple
    center: tuple
    radius: float
    opacity: float

    def as_array(self) -> np.ndarray:
        """Flat ``[μx, μy, μz, r, o, cr, cg, cb]`` (checkpoint order)."""
        return np.array([*self.center, self.radius, self.opacity, *self.color], dtype=np.float64)


class GaussianMap:
    """Growable struct-of-arrays store of Gaussian primitives.

    Survivors keep their relative order under :meth:`keep`, so indices into
    the map stay meaningful for anyone holding a mask computed before a prune.
    """

    def __init__(self, centers=None, radii=None, opacities=None, colors=None, epochs=None):
        self.centers = np.zeros((0, 3)) if centers is None else np.asarray(centers, np.float64).reshape(-1, 3).copy()
        n = len(self.centers)
        self.radii = np.zeros(0) if radii is None else np.asarray(radii, np.float64).reshape(n).copy()
        self.opacities = np.zeros(0) if opacities is None else np.asarray(opacities, np.float64).reshape(n).copy()
        self.colors = np.zeros((0, 3)) if colors is None else np.asarray(colors, np.float64).reshape(n, 3).copy()
        if epochs is None:
            epochs = np.zeros(n, dtype=np.int64)
        self.epochs = np.asarray(epochs, dtype=np.int64).reshape(n).copy()
        self.clamp()

    @classmethod
    def from_primitives(cls, prims, epoch=0):
        prims = list(prims)
        if not prims:
            return cls()
        return cls(
            centers=[p.center for p in prims],
            radii=[p.radius for p in prims],
            opacities=[p.opacity for p in prims],
            colors=[p.color for p in prims],
            epochs=np.full(len(prims), epoch),
        )

    def __len__(self):
        return len(self.centers)

    def __getitem__(self, i) -> GaussianPrimitive:
        return GaussianPrimitive(
            color=tuple(self.colors[i]),
            center=tuple(self.centers[i]),
            radius=float(self.radii[i]),
            opacity=float(self.opacities[i]),
        )

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def copy(self) -> "GaussianMap":
        return GaussianMap(self.centers, self.radii, self.opacities, self.colors, self.epochs)

    def params(self) -> dict:
        return {"centers": self.centers, "radii": self.radii, "opacities": self.opacities, "colors": self.colors}

    def append(self, centers, radii, opacities, colors, epoch=0) -> int:
        centers = np.asarray(centers, np.float64).reshape(-1, 3)
        n = len(centers)
        self.centers = np.concatenate([self.centers, centers])
        self.radii = np.concatenate([self.radii, np.broadcast_to(radii, (n,))])
        self.opacities = np.concatenate([self.opacities, np.broadcast_to(opacities, (n,))])
        self.colors = np.concatenate([self.colors, np.broadcast_to(colors, (n, 3))])
        self.epochs = np.concatenate([self.epochs, np.full(n, epoch, dtype=np.int64)])
        self.clamp()
        return n

    def keep(self, mask) -> int:
        mask = np.asarray(mask, dtype=bool)
        removed = int(len(self) - mask.sum())
        self.centers = self.centers[mask]
        self.radii = self.radii[mask]
        self.opacities = self.opacities[mask]
        self.colors = self.colors[mask]
        self.epochs = self.epochs[mask]
        return removed

    def clamp(self, r_min: float = R_MIN):
        """Project parameters back onto their valid ranges (in place)."""
        np.clip(self.opacities, 0.0, 1.0, out=self.opacities)
        np.clip(self.colors, 0.0, 1.0, out=self.colors)
        np.maximum(self.radii, r_min, out=self.radii)

    def is_valid(self) -> bool:
        return bool(
            np.all(np.isfinite(self.centers))
            and np.all(self.radii > 0)
            and np.all((self.opacities >= 0) & (self.opacities <= 1))
            and np.all((self.colors >= 0) & (self.colors <= 1))
        )

    def equals(self, other: "GaussianMap") -> bool:
        return all(
            np.array_equal(getattr(self, k), getattr(other, k))
            for k in ("centers", "radii", "opacities", "colors", "epochs")
        )


def _gaussians_from_pixels(frame, K, pose, mask):
    pts, rows, cols = unproject_depth_map(frame.depth, K, mask)
    if pose is not None:
        pts = pose.inverse().apply(pts)
    radii = frame.depth[rows, cols] / K.fx
    colors = frame.rgb[rows, cols]
    return pts, radii, colors


def initialize_from_frame(frame, K: CameraIntrinsics, epoch: int = 0) -> GaussianMap:
    """One primitive per valid-depth pixel, seen from an identity pose.

    Each primitive gets the pixel color, opacity 0.5 and a radius of
    ``depth / fx`` so that it projects to a one-pixel radius.
    """
    if not np.any(frame.depth > 0):
        raise EmptyInitializationError("frame has no valid depth pixels")
    pts, radii, colors = _gaussians_from_pixels(frame, K, None, None)
    return GaussianMap(pts, radii, np.full(len(pts), INIT_OPACITY), colors, np.full(len(pts), epoch))


def densify_mask(frame, render, tau_add: float = TAU_ADD, delta_add: float = DELTA_ADD) -> np.ndarray:
    """Pixels the current map fails to explain: low silhouette or bad depth."""
    valid = frame.depth > 0
    sil = render.silhouette
    depth = render.depth / np.maximum(sil, 1e-12)
    bad_depth = np.abs(depth - frame.depth) > delta_add * frame.depth
    return valid & ((sil < tau_add) | bad_depth)


def densify(gmap: GaussianMap, frame, pose: Pose, render, K: CameraIntrinsics,
            tau_add: float = TAU_ADD, delta_add: float = DELTA_ADD, epoch: int = 0) -> int:
    """Add primitives where ``render`` (made at ``pose``) misses the observation.

    Returns the number of primitives added.
    """
    mask = densify_mask(frame, render, tau_add, delta_add)
    if not mask.any():
        return 0
    pts, radii, colors = _gaussians_from_pixels(frame, K, pose, mask)
    return gmap.append(pts, radii, INIT_OPACITY, colors, epoch)


def prune(gmap: GaussianMap, eps_opacity: float = EPS_OPACITY,
          r_min: float = R_MIN, r_max: float = R_MAX) -> int:
    keep = (gmap.opacities >= eps_opacity) & (gmap.radii >= r_min) & (gmap.radii <= r_max)
    return gmap.keep(keep)


def save_checkpoint(gmap: GaussianMap, path) -> None:
    """Write the binary map checkpoint.

    Layout: 8-byte magic, little-endian uint64 count, then per primitive
    eight little-endian float32 ``[μx, μy, μz, r, o, cr, cg, cb]``.
    """
    rows = np.concatenate(
        [gmap.centers, gmap.radii[:, None], gmap.opacities[:, None], gmap.colors], axis=1
    ).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(gmap)))
        fh.write(rows.tobytes())


def load_checkpoint(path) -> GaussianMap:
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:8] != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic")
    (count,) = struct.unpack("<Q", data[8:16])
    body = data[16:]
    if len(body) != count * 32:
        raise CheckpointFormatError(f"{path}: expected {count} primitives, found {len(body)} payload bytes")
    rows = np.frombuffer(body, dtype="<f4").reshape(count, 8).astype(np.float64)
    if not np.all(np.isfinite(rows)):
        raise CheckpointFormatError(f"{path}: non-finite values")
    return GaussianMap(rows[:, 0:3], rows[:, 3], rows[:, 4], rows[:, 5:8])


def export_ply(gmap: GaussianMap, path) -> None:
    """ASCII PLY point cloud with 8-bit colors, one vertex per primitive."""
    rgb = np.round(gmap.colors * 255).astype(np.uint8)
    with open(path, "w") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {len(gmap)}\n")
        fh.write("property float x\nproperty float y\nproperty float z\n")
        fh.write("property uchar red\nproperty uchar green\nproperty uchar blue\n")
        fh.write("end_header\n")
        for (x, y, z), (r, g, b) in zip(gmap.centers, rgb):
            fh.write(f"{x:.6f} {y:.6f} {z:.6f} {r} {g} {b}\n")
