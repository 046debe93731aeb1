"""Differentiable splatting rasterizer for isotropic Gaussians.

Forward pass: every primitive is projected to a 2D disc (center, radius in
pixels, camera depth), sorted front to back and alpha-composited per pixel
into color, depth and silhouette images. Pixels are processed in 16x16
tiles; each tile only visits primitives whose 3-sigma disc overlaps it.

Backward pass: the composition at every pixel is replayed from the tile
lists and swept back to front, which gives exact derivatives of the three
images with respect to each projected primitive. These are chained to the
3D parameters and to a left-multiplied rotation increment / translation of
the camera pose.

Both passes are deterministic: each tile owns its pixels and its slice of
the per-entry gradient buffer, and the final reduction runs sequentially
in tile order, so the thread count never changes a single bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numba
import numpy as np
from numba import njit, prange

from .geometry import CameraIntrinsics, Pose, project_mono

TILE_SIZE = 16
Z_NEAR = 0.01
CUTOFF_SIGMAS = 3.0
T_MIN = 1e-4


def set_threads(n: int) -> int:
    """Set the rasterizer worker count (bounded by NUMBA_NUM_THREADS)."""
    n = max(1, min(int(n), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n)
    return n


@dataclass(frozen=True)
class ProjectedGaussian:
    center2d: tuple
    depth: float
    radius2d: float
    opacity: float
    color: tuple
    source_index: int = -1


def project_gaussian(g, pose: Pose, K: CameraIntrinsics, source_index: int = -1,
                     z_near: float = Z_NEAR) -> Optional[ProjectedGaussian]:
    """Splat one primitive onto the image plane; ``None`` when culled."""
    Xc = pose.apply(np.asarray(g.center, dtype=np.float64))
    z = float(Xc[2])
    if z <= z_near:
        return None
    uv = project_mono(Xc, K)
    return ProjectedGaussian(
        center2d=(uv.u, uv.v), depth=z, radius2d=g.radius * K.fx / z,
        opacity=g.opacity, color=tuple(g.color), source_index=source_index,
    )


@njit(cache=True, inline="always")
def _weight(px, py, u, v, rho, o):
    dx = px - u
    dy = py - v
    q = dx * dx + dy * dy
    r2 = rho * rho
    if q > CUTOFF_SIGMAS * CUTOFF_SIGMAS * r2:
        return 0.0
    return o * np.exp(-0.5 * q / r2)


def eval_weight(g: ProjectedGaussian, p) -> float:
    """Opacity-scaled Gaussian falloff at pixel ``p``; exactly 0 past 3 radii."""
    u, v = g.center2d
    return float(_weight(float(p[0]), float(p[1]), u, v, g.radius2d, g.opacity))


@njit(cache=True, inline="always")
def _composite_pixel(px, py, ids, start, end, u, v, rho, dep, op, col, t_min):
    T = 1.0
    cr = 0.0
    cg = 0.0
    cb = 0.0
    d = 0.0
    s = 0.0
    stop = end
    for k in range(start, end):
        g = ids[k]
        f = _weight(px, py, u[g], v[g], rho[g], op[g])
        if f <= 0.0:
            continue
        w = f * T
        cr += col[g, 0] * w
        cg += col[g, 1] * w
        cb += col[g, 2] * w
        d += dep[g] * w
        s += w
        T = T * (1.0 - f)
        if T < t_min:
            stop = k + 1
            break
    return cr, cg, cb, d, s, stop


@njit(cache=True, inline="always")
def _row_candidates(py, tv, tr, m, rows):
    # keeps exactly the entries whose cutoff test can pass on this row:
    # fl(dx*dx + dy*dy) >= fl(dy*dy), so a culled entry would have weight 0 anyway
    n = 0
    lim = CUTOFF_SIGMAS * CUTOFF_SIGMAS
    for k in range(m):
        dy = py - tv[k]
        if dy * dy > lim * (tr[k] * tr[k]):
            continue
        rows[n] = k
        n += 1
    return n


@njit(cache=True, parallel=True)
def _forward_tiles(u, v, rho, dep, op, col, offsets, entries, W, H, tile, ntx, t_min,
                   rgb, depth, sil, last):
    n_tiles = len(offsets) - 1
    for t in prange(n_tiles):
        ty = t // ntx
        tx = t - ty * ntx
        start = offsets[t]
        end = offsets[t + 1]
        m = end - start
        # contiguous per-tile copies; values are untouched so results match the naive path
        tu = np.empty(m)
        tv = np.empty(m)
        tr = np.empty(m)
        td = np.empty(m)
        to = np.empty(m)
        tc = np.empty((m, 3))
        rows = np.empty(m, np.int64)
        for k in range(m):
            g = entries[start + k]
            tu[k] = u[g]
            tv[k] = v[g]
            tr[k] = rho[g]
            td[k] = dep[g]
            to[k] = op[g]
            tc[k, 0] = col[g, 0]
            tc[k, 1] = col[g, 1]
            tc[k, 2] = col[g, 2]
        for py in range(ty * tile, min(H, (ty + 1) * tile)):
            n = _row_candidates(float(py), tv, tr, m, rows)
            for px in range(tx * tile, min(W, (tx + 1) * tile)):
                cr, cg, cb, d, s, stop = _composite_pixel(
                    float(px), float(py), rows, 0, n, tu, tv, tr, td, to, tc, t_min)
                rgb[py, px, 0] = cr
                rgb[py, px, 1] = cg
                rgb[py, px, 2] = cb
                depth[py, px] = d
                sil[py, px] = s
                last[py, px] = end if stop == n else start + rows[stop - 1] + 1


@njit(cache=True)
def _forward_naive(u, v, rho, dep, op, col, order, W, H, t_min, rgb, depth, sil):
    n = len(order)
    for py in range(H):
        for px in range(W):
            cr, cg, cb, d, s, stop = _composite_pixel(
                float(px), float(py), order, 0, n, u, v, rho, dep, op, col, t_min)
            rgb[py, px, 0] = cr
            rgb[py, px, 1] = cg
            rgb[py, px, 2] = cb
            depth[py, px] = d
            sil[py, px] = s


@njit(cache=True)
def _bin_tiles(order, u, v, rho, W, H, tile, ntx, nty):
    # +1 px margin keeps binning conservative against rounding in the cutoff test
    n = len(order)
    x0 = np.empty(n, np.int64)
    x1 = np.empty(n, np.int64)
    y0 = np.empty(n, np.int64)
    y1 = np.empty(n, np.int64)
    counts = np.zeros(ntx * nty + 1, np.int64)
    for i in range(n):
        g = order[i]
        ext = CUTOFF_SIGMAS * rho[g] + 1.0
        lo_x = max(0.0, np.floor(u[g] - ext))
        hi_x = min(W - 1.0, np.ceil(u[g] + ext))
        lo_y = max(0.0, np.floor(v[g] - ext))
        hi_y = min(H - 1.0, np.ceil(v[g] + ext))
        if lo_x > hi_x or lo_y > hi_y:
            x0[i] = 1
            x1[i] = 0
            y0[i] = 1
            y1[i] = 0
            continue
        x0[i] = int(lo_x) // tile
        x1[i] = int(hi_x) // tile
        y0[i] = int(lo_y) // tile
        y1[i] = int(hi_y) // tile
        for ty in range(y0[i], y1[i] + 1):
            for tx in range(x0[i], x1[i] + 1):
                counts[ty * ntx + tx + 1] += 1
    offsets = np.cumsum(counts)
    fill = offsets[:-1].copy()
    entries = np.empty(offsets[-1], np.int64)
    for i in range(n):
        for ty in range(y0[i], y1[i] + 1):
            for tx in range(x0[i], x1[i] + 1):
                t = ty * ntx + tx
                entries[fill[t]] = order[i]
                fill[t] += 1
    return offsets, entries


@njit(cache=True, parallel=True)
def _backward_tiles(u, v, rho, dep, op, col, offsets, entries, last, W, H, tile, ntx,
                    g_rgb, g_depth, g_sil, entry_grad):
    # entry_grad columns: du, dv, drho, ddepth, dopacity, dcolor[3]
    n_tiles = len(offsets) - 1
    for t in prange(n_tiles):
        ty = t // ntx
        tx = t - ty * ntx
        start = offsets[t]
        end = offsets[t + 1]
        m = end - start
        fs = np.empty(m)
        es = np.empty(m)
        Ts = np.empty(m)
        ks = np.empty(m, np.int64)
        for py in range(ty * tile, min(H, (ty + 1) * tile)):
            for px in range(tx * tile, min(W, (tx + 1) * tile)):
                gr = g_rgb[py, px, 0]
                gg = g_rgb[py, px, 1]
                gb = g_rgb[py, px, 2]
                gd = g_depth[py, px]
                gs = g_sil[py, px]
                if gr == 0.0 and gg == 0.0 and gb == 0.0 and gd == 0.0 and gs == 0.0:
                    continue
                fpx = float(px)
                fpy = float(py)
                T = 1.0
                n = 0
                for k in range(start, last[py, px]):
                    g = entries[k]
                    f = _weight(fpx, fpy, u[g], v[g], rho[g], op[g])
                    if f <= 0.0:
                        continue
                    fs[n] = f
                    es[n] = f / op[g]
                    Ts[n] = T
                    ks[n] = k
                    n += 1
                    T = T * (1.0 - f)
                # back-to-front accumulators: composite of everything behind entry i
                ar = 0.0
                ag = 0.0
                ab = 0.0
                ad = 0.0
                a_s = 0.0
                for j in range(n - 1, -1, -1):
                    k = ks[j]
                    g = entries[k]
                    f = fs[j]
                    Ti = Ts[j]
                    cr = col[g, 0]
                    cg = col[g, 1]
                    cb = col[g, 2]
                    di = dep[g]
                    gf = Ti * (gr * (cr - ar) + gg * (cg - ag) + gb * (cb - ab)
                               + gd * (di - ad) + gs * (1.0 - a_s))
                    w = f * Ti
                    dx = fpx - u[g]
                    dy = fpy - v[g]
                    r = rho[g]
                    r2 = r * r
                    entry_grad[k, 0] += gf * f * dx / r2
                    entry_grad[k, 1] += gf * f * dy / r2
                    entry_grad[k, 2] += gf * f * (dx * dx + dy * dy) / (r2 * r)
                    entry_grad[k, 3] += gd * w
                    entry_grad[k, 4] += gf * es[j]
                    entry_grad[k, 5] += gr * w
                    entry_grad[k, 6] += gg * w
                    entry_grad[k, 7] += gb * w
                    om = 1.0 - f
                    ar = cr * f + om * ar
                    ag = cg * f + om * ag
                    ab = cb * f + om * ab
                    ad = di * f + om * ad
                    a_s = f + om * a_s


@njit(cache=True)
def _reduce_entries(entries, entry_grad, n_proj):
    out = np.zeros((n_proj, 8))
    for k in range(len(entries)):
        g = entries[k]
        for c in range(8):
            out[g, c] += entry_grad[k, c]
    return out


@dataclass
class RenderCache:
    """Everything the backward pass needs to replay the composition."""

    pose: Pose
    K: CameraIntrinsics
    source_index: np.ndarray  # projected row -> map index
    cam: np.ndarray  # camera-frame centers of projected rows
    radii3d: np.ndarray
    u: np.ndarray
    v: np.ndarray
    rho: np.ndarray
    depth: np.ndarray
    opacity: np.ndarray
    color: np.ndarray
    offsets: np.ndarray
    entries: np.ndarray
    last: np.ndarray
    tile: int
    ntx: int
    t_min: float
    n_map: int


@dataclass
class RenderOutput:
    rgb: np.ndarray
    depth: np.ndarray
    silhouette: np.ndarray
    cache: Optional[RenderCache] = None

    def normalized_depth(self, tau_vis: float = 0.99) -> np.ndarray:
        """``D / S`` where the silhouette exceeds ``tau_vis``, else 0."""
        out = np.zeros_like(self.depth)
        m = self.silhouette > tau_vis
        out[m] = self.depth[m] / self.silhouette[m]
        return out

    def contributors(self, row: int, col: int):
        """Ordered ``(map indices, weights f_i)`` composited at one pixel."""
        c = self.cache
        if c is None:
            raise RuntimeError("render output carries no contributor cache")
        t = (row // c.tile) * c.ntx + col // c.tile
        idx, ws = [], []
        for k in range(c.offsets[t], c.last[row, col]):
            g = c.entries[k]
            f = _weight(float(col), float(row), c.u[g], c.v[g], c.rho[g], c.opacity[g])
            if f > 0.0:
                idx.append(int(c.source_index[g]))
                ws.append(f)
        return np.array(idx, dtype=np.int64), np.array(ws)


@dataclass
class GradientSet:
    centers: np.ndarray
    radii: np.ndarray
    opacities: np.ndarray
    colors: np.ndarray
    rotation: np.ndarray  # left axis-angle increment
    translation: np.ndarray

    def primitive_vector(self) -> np.ndarray:
        return np.concatenate([self.centers, self.radii[:, None], self.opacities[:, None], self.colors], axis=1)


def _project_all(gmap, pose: Pose, K: CameraIntrinsics, z_near: float):
    cam = gmap.centers @ pose.R.T + pose.translation
    visible = np.nonzero(cam[:, 2] > z_near)[0]
    cam = cam[visible]
    z = cam[:, 2]
    u = K.fx * cam[:, 0] / z + K.cx
    v = K.fy * cam[:, 1] / z + K.cy
    rho = gmap.radii[visible] * K.fx / z
    return visible, cam, u, v, rho, z


def _depth_order(z):
    # stable sort on depth; ties fall back to map order
    return np.argsort(z, kind="stable").astype(np.int64)


def render(gmap, pose: Pose, K: CameraIntrinsics, *, t_min: float = T_MIN,
           tile: int = TILE_SIZE, z_near: float = Z_NEAR) -> RenderOutput:
    """Rasterize ``gmap`` seen from ``pose`` into color, depth and silhouette images."""
    W, H = K.width, K.height
    visible, cam, u, v, rho, z = _project_all(gmap, pose, K, z_near)
    op = np.ascontiguousarray(gmap.opacities[visible])
    col = np.ascontiguousarray(gmap.colors[visible])
    ntx = -(-W // tile)
    nty = -(-H // tile)
    order = _depth_order(z)
    offsets, entries = _bin_tiles(order, u, v, rho, W, H, tile, ntx, nty)
    rgb = np.empty((H, W, 3))
    depth = np.empty((H, W))
    sil = np.empty((H, W))
    last = np.empty((H, W), np.int64)
    _forward_tiles(u, v, rho, z, op, col, offsets, entries, W, H, tile, ntx, t_min, rgb, depth, sil, last)
    cache = RenderCache(
        pose=pose, K=K, source_index=visible, cam=cam, radii3d=gmap.radii[visible],
        u=u, v=v, rho=rho, depth=z, opacity=op, color=col, offsets=offsets,
        entries=entries, last=last, tile=tile, ntx=ntx, t_min=t_min, n_map=len(gmap),
    )
    return RenderOutput(rgb, depth, sil, cache)


def render_naive(gmap, pose: Pose, K: CameraIntrinsics, *, t_min: float = T_MIN,
                 z_near: float = Z_NEAR) -> RenderOutput:
    """Reference rasterizer: every pixel walks the full depth-sorted list."""
    W, H = K.width, K.height
    visible, cam, u, v, rho, z = _project_all(gmap, pose, K, z_near)
    op = np.ascontiguousarray(gmap.opacities[visible])
    col = np.ascontiguousarray(gmap.colors[visible])
    order = _depth_order(z)
    rgb = np.empty((H, W, 3))
    depth = np.empty((H, W))
    sil = np.empty((H, W))
    _forward_naive(u, v, rho, z, op, col, order, W, H, t_min, rgb, depth, sil)
    return RenderOutput(rgb, depth, sil, None)


def render_backward(out: RenderOutput, grad_rgb, grad_depth=None, grad_silhouette=None) -> GradientSet:
    """Chain per-pixel loss gradients back to primitive and pose parameters.

    ``grad_rgb`` is ``(H, W, 3)``; ``grad_depth`` and ``grad_silhouette``
    are ``(H, W)`` gradients with respect to the raw composited depth and
    silhouette. Missing arrays are treated as zero.
    """
    c = out.cache
    if c is None:
        raise RuntimeError("render output carries no contributor cache; cannot differentiate")
    K = c.K
    H, W = K.height, K.width
    g_rgb = np.ascontiguousarray(grad_rgb, dtype=np.float64)
    g_d = np.zeros((H, W)) if grad_depth is None else np.ascontiguousarray(grad_depth, dtype=np.float64)
    g_s = np.zeros((H, W)) if grad_silhouette is None else np.ascontiguousarray(grad_silhouette, dtype=np.float64)

    entry_grad = np.zeros((len(c.entries), 8))
    _backward_tiles(c.u, c.v, c.rho, c.depth, c.opacity, c.color, c.offsets, c.entries, c.last,
                    W, H, c.tile, c.ntx, g_rgb, g_d, g_s, entry_grad)
    g2 = _reduce_entries(c.entries, entry_grad, len(c.u))

    gu, gv, grho, gdep = g2[:, 0], g2[:, 1], g2[:, 2], g2[:, 3]
    x, y, z = c.cam[:, 0], c.cam[:, 1], c.cam[:, 2]
    fx, fy = K.fx, K.fy
    iz = 1.0 / z
    g_cam = np.empty_like(c.cam)
    g_cam[:, 0] = gu * fx * iz
    g_cam[:, 1] = gv * fy * iz
    g_cam[:, 2] = gdep - (gu * fx * x + gv * fy * y + grho * c.radii3d * fx) * iz * iz

    n = c.n_map
    R = c.pose.R
    centers = np.zeros((n, 3))
    radii = np.zeros(n)
    opac = np.zeros(n)
    colors = np.zeros((n, 3))
    centers[c.source_index] = g_cam @ R
    radii[c.source_index] = grho * fx * iz
    opac[c.source_index] = g2[:, 4]
    colors[c.source_index] = g2[:, 5:8]
    lever = c.cam - c.pose.translation
    return GradientSet(
        centers=centers, radii=radii, opacities=opac, colors=colors,
        rotation=np.cross(lever, g_cam).sum(axis=0),
        translation=g_cam.sum(axis=0),
    )
