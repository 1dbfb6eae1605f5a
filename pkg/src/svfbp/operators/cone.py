"""Cone-beam forward projection (ray-driven) and backprojection (voxel-driven).

The two are independent discretisations, not exact transposes of each other.
:func:`cone_backproject_adjoint` is the exact transpose of
:func:`cone_backproject` and carries gradients from the volume back to the
detector.

Batched arrays put the sample axis first: projections ``(K, N, rows, cols)``
and volumes ``(K, nz, ny, nx)``.
"""

from __future__ import annotations

import math

import numba
import numpy as np

from ..geometry import ConeBeamGeometry, Trajectory


@numba.njit(cache=True)
def _trilinear(vol, fz, fy, fx):
    nz, ny, nx = vol.shape
    z0 = math.floor(fz)
    y0 = math.floor(fy)
    x0 = math.floor(fx)
    tz = fz - z0
    ty = fy - y0
    tx = fx - x0
    if 0 <= z0 and z0 + 1 < nz and 0 <= y0 and y0 + 1 < ny and 0 <= x0 and x0 + 1 < nx:
        # interior: all eight corners valid, same summation order as the general path
        acc = 0.0
        acc += (1.0 - tz) * (1.0 - ty) * (1.0 - tx) * vol[z0, y0, x0]
        acc += (1.0 - tz) * (1.0 - ty) * tx * vol[z0, y0, x0 + 1]
        acc += (1.0 - tz) * ty * (1.0 - tx) * vol[z0, y0 + 1, x0]
        acc += (1.0 - tz) * ty * tx * vol[z0, y0 + 1, x0 + 1]
        acc += tz * (1.0 - ty) * (1.0 - tx) * vol[z0 + 1, y0, x0]
        acc += tz * (1.0 - ty) * tx * vol[z0 + 1, y0, x0 + 1]
        acc += tz * ty * (1.0 - tx) * vol[z0 + 1, y0 + 1, x0]
        acc += tz * ty * tx * vol[z0 + 1, y0 + 1, x0 + 1]
        return acc
    acc = 0.0
    for dz in range(2):
        iz = z0 + dz
        if iz < 0 or iz >= nz:
            continue
        wz = tz if dz else 1.0 - tz
        for dy in range(2):
            iy = y0 + dy
            if iy < 0 or iy >= ny:
                continue
            wy = ty if dy else 1.0 - ty
            for dx in range(2):
                ix = x0 + dx
                if ix < 0 or ix >= nx:
                    continue
                wx = tx if dx else 1.0 - tx
                acc += wz * wy * wx * vol[iz, iy, ix]
    return acc


@numba.njit(cache=True)
def _forward_kernel(vol, spacing, sources, origins, axes_x, axes_y, det_x, det_y, step, reach, out):
    # samples farther than ``reach`` from the centre read only zero voxels and are skipped
    nz, ny, nx = vol.shape
    sz, sy, sx = spacing[0], spacing[1], spacing[2]
    hx, hy, hz = nx * sx / 2, ny * sy / 2, nz * sz / 2
    cz, cy, cx = (nz - 1) / 2, (ny - 1) / 2, (nx - 1) / 2
    for iv in range(sources.shape[0]):
        ax0, ax1, ax2 = sources[iv, 0], sources[iv, 1], sources[iv, 2]
        for r in range(det_y.shape[0]):
            for c in range(det_x.shape[0]):
                d0 = origins[iv, 0] + det_x[c] * axes_x[iv, 0] + det_y[r] * axes_y[iv, 0] - ax0
                d1 = origins[iv, 1] + det_x[c] * axes_x[iv, 1] + det_y[r] * axes_y[iv, 1] - ax1
                d2 = origins[iv, 2] + det_x[c] * axes_x[iv, 2] + det_y[r] * axes_y[iv, 2] - ax2
                norm = math.sqrt(d0 * d0 + d1 * d1 + d2 * d2)
                d0 /= norm
                d1 /= norm
                d2 /= norm
                t0, t1 = _slab(ax0, d0, hx, -1e30, 1e30)
                t0, t1 = _slab(ax1, d1, hy, t0, t1)
                t0, t1 = _slab(ax2, d2, hz, t0, t1)
                if t1 <= t0:
                    out[iv, r, c] = 0.0
                    continue
                n = int(math.ceil((t1 - t0) / step))
                dt = (t1 - t0) / n
                # ray-sphere overlap; the unit direction gives |a + t d|^2 = t^2 + 2 b t + |a|^2
                b = ax0 * d0 + ax1 * d1 + ax2 * d2
                disc = b * b - (ax0 * ax0 + ax1 * ax1 + ax2 * ax2 - reach * reach)
                if disc <= 0.0:
                    out[iv, r, c] = 0.0
                    continue
                root = math.sqrt(disc)
                j0 = max(0, int(math.floor((-b - root - t0) / dt - 0.5)))
                j1 = min(n, int(math.ceil((-b + root - t0) / dt - 0.5)) + 1)
                acc = 0.0
                for j in range(j0, j1):
                    t = t0 + (j + 0.5) * dt
                    acc += _trilinear(vol, (ax2 + t * d2) / sz + cz, (ax1 + t * d1) / sy + cy,
                                      (ax0 + t * d0) / sx + cx)
                out[iv, r, c] = acc * dt


@numba.njit(cache=True)
def _slab(a, d, h, t0, t1):
    # clip the ray parameter interval to |a + t d| <= h
    if abs(d) < 1e-15:
        if abs(a) > h:
            return 1.0, 0.0
        return t0, t1
    ta = (-h - a) / d
    tb = (h - a) / d
    if ta > tb:
        ta, tb = tb, ta
    return max(t0, ta), min(t1, tb)


@numba.njit(cache=True)
def _project_voxel(x, y, z, a, ax, ay, az, D):
    dx = x - a[0]
    dy = y - a[1]
    dz = z - a[2]
    depth = dx * az[0] + dy * az[1] + dz * az[2]  # negative in front of the source
    t = -D / depth
    u = t * (dx * ax[0] + dy * ax[1] + dz * ax[2])
    v = t * (dx * ay[0] + dy * ay[1] + dz * ay[2])
    r2 = dx * dx + dy * dy + dz * dz
    return u, v, r2


@numba.njit(cache=True)
def _backproject_kernel(projs, sources, axes_x, axes_y, axes_z, lam_w, vz, vy, vx, mask,
                        D, pix, mode, scale, out):
    # projs (K, N, rows, cols); out (K, nz, ny, nx); mode 1: 1/r^2, 0: footprint-matched
    K, N, rows, cols = projs.shape
    dy_pix, dx_pix = pix[0], pix[1]
    cr, cc = (rows - 1) / 2, (cols - 1) / 2
    for iz in range(vz.shape[0]):
        for iy in range(vy.shape[0]):
            for ix in range(vx.shape[0]):
                if not mask[iz, iy, ix]:
                    continue
                for iv in range(N):
                    u, v, r2 = _project_voxel(vx[ix], vy[iy], vz[iz], sources[iv],
                                              axes_x[iv], axes_y[iv], axes_z[iv], D)
                    fc = u / dx_pix + cc
                    fr = v / dy_pix + cr
                    c0 = math.floor(fc)
                    r0 = math.floor(fr)
                    if c0 < -1 or c0 >= cols or r0 < -1 or r0 >= rows:
                        continue
                    tc = fc - c0
                    tr = fr - r0
                    if mode == 1:
                        w = lam_w[iv] / r2
                    else:
                        cos2 = D * D / (u * u + v * v + D * D)
                        w = lam_w[iv] * scale / (r2 * cos2 * math.sqrt(cos2))
                    w00 = w * (1 - tr) * (1 - tc)
                    w01 = w * (1 - tr) * tc
                    w10 = w * tr * (1 - tc)
                    w11 = w * tr * tc
                    ok_r0 = r0 >= 0
                    ok_r1 = r0 + 1 < rows
                    ok_c0 = c0 >= 0
                    ok_c1 = c0 + 1 < cols
                    for k in range(K):
                        acc = 0.0
                        if ok_r0 and ok_c0:
                            acc += w00 * projs[k, iv, r0, c0]
                        if ok_r0 and ok_c1:
                            acc += w01 * projs[k, iv, r0, c0 + 1]
                        if ok_r1 and ok_c0:
                            acc += w10 * projs[k, iv, r0 + 1, c0]
                        if ok_r1 and ok_c1:
                            acc += w11 * projs[k, iv, r0 + 1, c0 + 1]
                        out[k, iz, iy, ix] += acc


@numba.njit(cache=True)
def _backproject_adjoint_kernel(vols, sources, axes_x, axes_y, axes_z, lam_w, vz, vy, vx, mask,
                                D, pix, mode, scale, out):
    # exact transpose of _backproject_kernel; out (K, N, rows, cols)
    K, N, rows, cols = out.shape
    dy_pix, dx_pix = pix[0], pix[1]
    cr, cc = (rows - 1) / 2, (cols - 1) / 2
    for iv in range(N):
        for iz in range(vz.shape[0]):
            for iy in range(vy.shape[0]):
                for ix in range(vx.shape[0]):
                    if not mask[iz, iy, ix]:
                        continue
                    u, v, r2 = _project_voxel(vx[ix], vy[iy], vz[iz], sources[iv],
                                              axes_x[iv], axes_y[iv], axes_z[iv], D)
                    fc = u / dx_pix + cc
                    fr = v / dy_pix + cr
                    c0 = math.floor(fc)
                    r0 = math.floor(fr)
                    if c0 < -1 or c0 >= cols or r0 < -1 or r0 >= rows:
                        continue
                    tc = fc - c0
                    tr = fr - r0
                    if mode == 1:
                        w = lam_w[iv] / r2
                    else:
                        cos2 = D * D / (u * u + v * v + D * D)
                        w = lam_w[iv] * scale / (r2 * cos2 * math.sqrt(cos2))
                    w00 = w * (1 - tr) * (1 - tc)
                    w01 = w * (1 - tr) * tc
                    w10 = w * tr * (1 - tc)
                    w11 = w * tr * tc
                    ok_r0 = r0 >= 0
                    ok_r1 = r0 + 1 < rows
                    ok_c0 = c0 >= 0
                    ok_c1 = c0 + 1 < cols
                    for k in range(K):
                        g = vols[k, iz, iy, ix]
                        if g == 0.0:
                            continue
                        if ok_r0 and ok_c0:
                            out[k, iv, r0, c0] += w00 * g
                        if ok_r0 and ok_c1:
                            out[k, iv, r0, c0 + 1] += w01 * g
                        if ok_r1 and ok_c0:
                            out[k, iv, r0 + 1, c0] += w10 * g
                        if ok_r1 and ok_c1:
                            out[k, iv, r0 + 1, c0 + 1] += w11 * g


def _as_batch(arr: np.ndarray, ndim: int) -> tuple[np.ndarray, bool]:
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    if arr.ndim == ndim:
        return arr[None], True
    if arr.ndim == ndim + 1:
        return arr, False
    raise ValueError(f"expected {ndim}- or {ndim + 1}-dimensional array, got shape {arr.shape}")


def cone_forward(volume: np.ndarray, traj: Trajectory, geom: ConeBeamGeometry | None = None,
                 step: float | None = None) -> np.ndarray:
    """Ray-driven line integrals through ``volume`` for every view.

    Rays run from the source through each pixel centre; samples are trilinear
    with zero outside the volume, at a step no larger than half the finest
    voxel spacing. Returns ``(N, rows, cols)`` (or ``(K, N, rows, cols)``).
    """
    geom = geom or traj.geom
    vols, single = _as_batch(volume, 3)
    if vols.shape[1:] != geom.volume_shape:
        raise ValueError(f"volume shape {vols.shape[1:]} != geometry {geom.volume_shape}")
    step = step or 0.5 * min(geom.volume_spacing)
    det_x, det_y = geom.detector_coords()
    out = np.zeros((vols.shape[0], len(traj)) + geom.detector_shape)
    spacing = np.asarray(geom.volume_spacing, dtype=np.float64)
    z, y, x = geom.voxel_coords()
    r2 = z[:, None, None] ** 2 + y[None, :, None] ** 2 + x[None, None, :] ** 2
    for k in range(vols.shape[0]):
        nonzero = vols[k] != 0
        if not nonzero.any():
            continue
        # trilinear samples reach at most one voxel diagonal beyond the farthest nonzero voxel
        reach = math.sqrt(r2[nonzero].max()) + 1.01 * math.sqrt(float(np.sum(spacing**2)))
        _forward_kernel(vols[k], spacing, traj.sources, traj.origins, traj.axes_x, traj.axes_y,
                        det_x, det_y, float(step), reach, out[k])
    return out[0] if single else out


def footprint_scale(geom: ConeBeamGeometry) -> float:
    """Voxel volume over pixel area times D^2, the unweighted backprojection scale."""
    vol = float(np.prod(geom.volume_spacing))
    pix = geom.detector_spacing[0] * geom.detector_spacing[1]
    return vol * geom.sdd**2 / pix


def _bp_args(traj, geom, lambda_weights, weight_by_distance, mask):
    vz, vy, vx = geom.voxel_coords()
    if lambda_weights is None:
        lambda_weights = np.ones(len(traj))
    lambda_weights = np.ascontiguousarray(lambda_weights, dtype=np.float64)
    if lambda_weights.shape != (len(traj),):
        raise ValueError("lambda_weights must have one entry per view")
    if mask is None:
        mask = geom.support_mask()
    mode = 1 if weight_by_distance else 0
    pix = np.asarray(geom.detector_spacing, dtype=np.float64)
    return (traj.sources, traj.axes_x, traj.axes_y, traj.axes_z, lambda_weights, vz, vy, vx,
            np.ascontiguousarray(mask, dtype=np.bool_), float(geom.sdd), pix, mode,
            footprint_scale(geom))


def cone_backproject(projections: np.ndarray, traj: Trajectory, geom: ConeBeamGeometry | None = None,
                     weight_by_distance: bool = True, lambda_weights=None, mask=None) -> np.ndarray:
    """Voxel-driven backprojection of one projection per view.

    Each voxel ``x`` inside the support ball is projected through the source
    onto the detector and the image is sampled bilinearly. With
    ``weight_by_distance`` the sample is scaled by ``1/|x - a|^2``; without it
    the sample is scaled by the ray-footprint factor that makes this an
    approximate transpose of :func:`cone_forward`.
    ``lambda_weights`` are per-view quadrature weights (default ones).
    """
    geom = geom or traj.geom
    projs, single = _as_batch(projections, 3)
    if projs.shape[1:] != (len(traj),) + geom.detector_shape:
        raise ValueError(
            f"projections shape {projs.shape[1:]} != ({len(traj)}, *{geom.detector_shape})"
        )
    out = np.zeros((projs.shape[0],) + geom.volume_shape)
    _backproject_kernel(projs, *_bp_args(traj, geom, lambda_weights, weight_by_distance, mask), out)
    return out[0] if single else out


def cone_backproject_adjoint(volume: np.ndarray, traj: Trajectory, geom: ConeBeamGeometry | None = None,
                             weight_by_distance: bool = True, lambda_weights=None, mask=None) -> np.ndarray:
    """Exact transpose of :func:`cone_backproject` (volume -> detector stack)."""
    geom = geom or traj.geom
    vols, single = _as_batch(volume, 3)
    if vols.shape[1:] != geom.volume_shape:
        raise ValueError(f"volume shape {vols.shape[1:]} != geometry {geom.volume_shape}")
    out = np.zeros((vols.shape[0], len(traj)) + geom.detector_shape)
    _backproject_adjoint_kernel(vols, *_bp_args(traj, geom, lambda_weights, weight_by_distance, mask), out)
    return out[0] if single else out
