"""ATE with rigid alignment, and the image metrics, on hand-built inputs."""

import numpy as np
from scipy.spatial.transform import Rotation

from gsslam.dataset import Trajectory
from gsslam.geometry import Pose
from gsslam.metrics import ate_rmse, depth_rmse, psnr, ssim

rng = np.random.default_rng(0)

# %% a wiggly ground-truth path and a noisy estimate of it
n = 50
centers = np.cumsum(rng.normal(0, 0.02, (n, 3)), axis=0)
gt = Trajectory([0.1 * i for i in range(n)], [Pose(translation=c) for c in centers])
noisy = [Pose(translation=c + rng.normal(0, 0.005, 3)) for c in centers]
est = Trajectory(gt.timestamps, noisy)
print(f"ATE of 5 mm per-axis noise: {1000 * ate_rmse(est, gt):.2f} mm")

# %% the estimate may live in any world frame; alignment removes that
T = Pose(Rotation.from_euler("xyz", [20, -40, 75], degrees=True).as_quat(), [3.0, -1.0, 2.0])
moved = Trajectory(est.timestamps, [T.compose(p) for p in est.poses])
print(f"ATE after moving the whole estimate: {1000 * ate_rmse(moved, gt):.2f} mm")

# %% image metrics
img = rng.uniform(size=(64, 64, 3))
print(f"PSNR at MSE 0.01: {psnr(img, img + 0.1):.2f} dB")
print(f"SSIM(x, x) = {ssim(img, img):.6f}, SSIM(x, 1 - x) = {ssim(img, 1 - img):.4f}")
depth = rng.uniform(1, 3, (64, 64))
print(f"depth RMSE with a 1 cm offset: {1000 * depth_rmse(depth + 0.01, depth):.2f} mm")
