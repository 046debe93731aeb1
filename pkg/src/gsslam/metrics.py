"""Trajectory and image-quality metrics, and report emission."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import correlate1d

from .errors import InsufficientOverlapError, UndefinedMetricError

PSNR_CAP = 100.0
MATCH_TOLERANCE = 0.02


def match_timestamps(est, gt, tol: float = MATCH_TOLERANCE):
    """Index pairs ``(i_est, j_gt)`` of nearest timestamps within ``tol``."""
    gt_ts = np.asarray(gt.timestamps)
    pairs = []
    if len(gt_ts) == 0:
        return pairs
    for i, t in enumerate(est.timestamps):
        j = int(np.searchsorted(gt_ts, t))
        best = None
        for k in (j - 1, j):
            if 0 <= k < len(gt_ts) and abs(gt_ts[k] - t) <= tol:
                if best is None or abs(gt_ts[k] - t) < abs(gt_ts[best] - t):
                    best = k
        if best is not None:
            pairs.append((i, best))
    return pairs


def rigid_align(src: np.ndarray, dst: np.ndarray):
    """Least-squares rotation ``R`` and translation ``t`` with ``R src + t ≈ dst``.

    Closed form via the SVD of the cross-covariance; no scale.
    """
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    H = (src - mu_s).T @ (dst - mu_d)
    U, _, Vt = np.linalg.svd(H)
    D = np.eye(3)
    D[2, 2] = np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0
    R = Vt.T @ D @ U.T
    return R, mu_d - R @ mu_s


def ate_residuals(est, gt, tol: float = MATCH_TOLERANCE, min_matches: int = 3) -> np.ndarray:
    """Per-pose position error norms after rigid alignment of ``est`` onto ``gt``."""
    pairs = match_timestamps(est, gt, tol)
    if len(pairs) < min_matches:
        raise InsufficientOverlapError(f"only {len(pairs)} matched poses, need {min_matches}")
    P = np.array([est.poses[i].translation for i, _ in pairs])
    Q = np.array([gt.poses[j].translation for _, j in pairs])
    R, t = rigid_align(P, Q)
    return np.linalg.norm(P @ R.T + t - Q, axis=1)


def ate_rmse(est, gt, tol: float = MATCH_TOLERANCE, min_matches: int = 3) -> float:
    """Absolute trajectory error (m): RMSE of aligned position residuals."""
    res = ate_residuals(est, gt, tol, min_matches)
    return float(np.sqrt(np.mean(res**2)))


def psnr(rendered, reference, cap: float = PSNR_CAP) -> float:
    a = np.asarray(rendered, dtype=np.float64)
    b = np.asarray(reference, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return cap
    return min(cap, 10.0 * np.log10(1.0 / mse))


def depth_rmse(rendered, reference, silhouette=None, tau_vis: float = 0.99) -> float:
    """RMSE (m) over pixels where both depths are valid and the silhouette passes."""
    a = np.asarray(rendered, dtype=np.float64)
    b = np.asarray(reference, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    mask = (a > 0) & (b > 0)
    if silhouette is not None:
        mask &= np.asarray(silhouette) > tau_vis
    if not mask.any():
        raise UndefinedMetricError("no pixel with valid depth in both maps")
    return float(np.sqrt(np.mean((a[mask] - b[mask]) ** 2)))


def to_gray(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3:
        return img @ np.array([0.299, 0.587, 0.114])
    return img


def gaussian_kernel(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    k = np.exp(-(x**2) / (2 * sigma**2))
    return k / k.sum()


def _filter_valid(img, k):
    # separable correlation, cropped to the fully-overlapping region
    out = correlate1d(correlate1d(img, k, axis=0, mode="constant"), k, axis=1, mode="constant")
    h = len(k) // 2
    return out[h:img.shape[0] - h, h:img.shape[1] - h]


def _ssim_maps(x, y, k, c1, c2):
    mx = _filter_valid(x, k)
    my = _filter_valid(y, k)
    sxx = _filter_valid(x * x, k) - mx * mx
    syy = _filter_valid(y * y, k) - my * my
    sxy = _filter_valid(x * y, k) - mx * my
    cs = (2 * sxy + c2) / (sxx + syy + c2)
    lum = (2 * mx * my + c1) / (mx * mx + my * my + c1)
    return lum, cs


def ssim(rendered, reference, window: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean single-scale SSIM of the grayscale images (data range 1)."""
    x = to_gray(rendered)
    y = to_gray(reference)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    if min(x.shape) < window:
        raise ValueError(f"images must be at least {window} pixels on each side")
    lum, cs = _ssim_maps(x, y, gaussian_kernel(window, sigma), k1**2, k2**2)
    return float(np.mean(lum * cs))


MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)


def ms_ssim(rendered, reference, window: int = 11, sigma: float = 1.5,
            weights=MS_SSIM_WEIGHTS) -> float:
    """Multi-scale SSIM over as many 2x-downsampled levels as the image allows."""
    x = to_gray(rendered)
    y = to_gray(reference)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    k = gaussian_kernel(window, sigma)
    c1, c2 = 0.01**2, 0.03**2
    levels = []
    for _ in weights:
        if min(x.shape) < window:
            break
        levels.append(_ssim_maps(x, y, k, c1, c2))
        h, w = (x.shape[0] // 2) * 2, (x.shape[1] // 2) * 2
        x = x[:h, :w].reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))
        y = y[:h, :w].reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))
    if not levels:
        raise ValueError(f"images must be at least {window} pixels on each side")
    w = np.asarray(weights[: len(levels)])
    w = w / w.sum()
    vals = [max(float(np.mean(cs)), 0.0) for _, cs in levels[:-1]]
    lum, cs = levels[-1]
    vals.append(max(float(np.mean(lum * cs)), 0.0))
    return float(np.prod(np.power(vals, w)))


@dataclass
class EvalReport:
    ate_rmse: float = float("nan")
    psnr_mean: float = float("nan")
    depth_rmse_mean: float = float("nan")
    ssim_mean: float = float("nan")
    timestamps: list = field(default_factory=list)
    psnr: list = field(default_factory=list)
    depth_rmse: list = field(default_factory=list)
    ssim: list = field(default_factory=list)
    ate_error: list = field(default_factory=list)
    # PSNR etc. are measured on the frames the map was built from
    views: str = "training"

    def summary(self) -> dict:
        """Headline numbers; undefined means become ``None`` so the JSON stays strict."""
        vals = {
            "ate_rmse": self.ate_rmse,
            "psnr_mean": self.psnr_mean,
            "depth_rmse_mean": self.depth_rmse_mean,
            "ssim_mean": self.ssim_mean,
        }
        out = {k: (float(v) if v is not None and np.isfinite(v) else None) for k, v in vals.items()}
        out["views"] = self.views
        return out

    def finalize(self):
        for name in ("psnr", "depth_rmse", "ssim"):
            vals = [v for v in getattr(self, name) if np.isfinite(v)]
            setattr(self, f"{name}_mean", float(np.mean(vals)) if vals else float("nan"))
        return self


def write_report(report: EvalReport, out_dir) -> tuple[Path, Path]:
    """Per-frame CSV plus summary JSON in ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "metrics.csv"
    n = len(report.timestamps)
    ate = report.ate_error if len(report.ate_error) == n else [float("nan")] * n
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "timestamp", "psnr", "depth_rmse", "ssim", "ate_error"])
        for i in range(n):
            w.writerow([i, f"{report.timestamps[i]:.6f}", report.psnr[i], report.depth_rmse[i],
                        report.ssim[i], ate[i]])
    json_path = out_dir / "summary.json"
    json_path.write_text(json.dumps(report.summary(), indent=2))
    return csv_path, json_path


def load_report(out_dir) -> dict:
    return json.loads((Path(out_dir) / "summary.json").read_text())


def plot_report(report: EvalReport, est=None, gt=None, out_dir="."):
    """Top-down trajectory plot and per-frame metric curves (needs matplotlib)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    paths = []
    if est is not None and gt is not None:
        fig, ax = plt.subplots(figsize=(5, 5))
        pairs = match_timestamps(est, gt)
        if len(pairs) >= 3:
            P = np.array([est.poses[i].translation for i, _ in pairs])
            Q = np.array([gt.poses[j].translation for _, j in pairs])
            R, t = rigid_align(P, Q)
            P = P @ R.T + t
            ax.plot(Q[:, 0], Q[:, 2], "k-", label="ground truth")
            ax.plot(P[:, 0], P[:, 2], "r--", label="estimated")
        ax.set_xlabel("x [m]")
        ax.set_ylabel("z [m]")
        ax.axis("equal")
        ax.legend()
        fig.savefig(out_dir / "trajectory_topdown.png", dpi=120)
        plt.close(fig)
        paths.append(out_dir / "trajectory_topdown.png")
    fig, axes = plt.subplots(3, 1, figsize=(6, 7), sharex=True)
    for ax, name, unit in zip(axes, ("psnr", "depth_rmse", "ssim"), ("dB", "m", "")):
        ax.plot(getattr(report, name))
        ax.set_ylabel(f"{name} {unit}".strip())
    axes[-1].set_xlabel("frame")
    fig.tight_layout()
    fig.savefig(out_dir / "metrics.png", dpi=120)
    plt.close(fig)
    paths.append(out_dir / "metrics.png")
    return paths
