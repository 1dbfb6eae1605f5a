"""Operators acting along the ``s`` axis of a sinogram (the last axis)."""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.ndimage import correlate1d


def diff_s(sino: np.ndarray, ds: float) -> np.ndarray:
    """Central difference along ``s``; one-sided at the two ends."""
    sino = np.asarray(sino, dtype=np.float64)
    if sino.shape[-1] < 3:
        raise ValueError("diff_s needs at least 3 samples along s")
    out = np.empty_like(sino)
    out[..., 1:-1] = (sino[..., 2:] - sino[..., :-2]) / (2 * ds)
    out[..., 0] = (sino[..., 1] - sino[..., 0]) / ds
    out[..., -1] = (sino[..., -1] - sino[..., -2]) / ds
    return out


def diff_s_adjoint(sino: np.ndarray, ds: float) -> np.ndarray:
    """Exact transpose of :func:`diff_s` (``-diff_s`` away from the ends)."""
    b = np.asarray(sino, dtype=np.float64)
    if b.shape[-1] < 3:
        raise ValueError("diff_s needs at least 3 samples along s")
    out = np.zeros_like(b)
    half = b[..., 1:-1] / (2 * ds)
    out[..., :-2] -= half
    out[..., 2:] += half
    out[..., 0] -= b[..., 0] / ds
    out[..., 1] += b[..., 0] / ds
    out[..., -2] -= b[..., -1] / ds
    out[..., -1] += b[..., -1] / ds
    return out


def gaussian_kernel(sigma: float, kernel_size: int) -> np.ndarray:
    if kernel_size % 2 != 1 or kernel_size < 1:
        raise ValueError(f"kernel_size must be odd and positive, got {kernel_size}")
    if sigma <= 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    x = np.arange(kernel_size) - kernel_size // 2
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def desk_smoothing(num_s: int, full_sigma: float = 20.0, full_kernel: int = 121, full_num_s: int = 785):
    """Rescale the full-size smoothing setting to a grid with ``num_s`` bins."""
    ratio = num_s / full_num_s
    sigma = full_sigma * ratio
    k = int(round(full_kernel * ratio))
    if k % 2 == 0:
        k += 1 if full_kernel * ratio >= k else -1
    return sigma, max(k, 1)


@lru_cache(maxsize=16)
def _smoothing_matrix(n: int, sigma: float, kernel_size: int) -> np.ndarray:
    # column j is the response to a unit impulse at j, so y = x @ M.T
    m = correlate1d(np.eye(n), gaussian_kernel(sigma, kernel_size), axis=0, mode="reflect")
    m.setflags(write=False)
    return m


def gaussian_smooth_s(sino: np.ndarray, sigma: float, kernel_size: int) -> np.ndarray:
    """Normalised truncated Gaussian along ``s`` with half-sample reflective borders."""
    sino = np.asarray(sino, dtype=np.float64)
    m = _smoothing_matrix(sino.shape[-1], float(sigma), int(kernel_size))
    return sino @ m.T


def gaussian_smooth_s_adjoint(sino: np.ndarray, sigma: float, kernel_size: int) -> np.ndarray:
    sino = np.asarray(sino, dtype=np.float64)
    m = _smoothing_matrix(sino.shape[-1], float(sigma), int(kernel_size))
    return sino @ m
