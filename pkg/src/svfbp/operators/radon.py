"""Parallel-beam 2D Radon transform of detector images and its exact adjoint.

The line with normal angle ``mu`` at signed distance ``s`` is sampled at
``v in [-e, e]`` with midpoint spacing no larger than half the finest pixel
pitch; samples are bilinearly interpolated (zero outside the detector) and
scaled by the step. The operator is assembled once as a sparse matrix, so the
adjoint is its transpose.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from ..geometry import ConeBeamGeometry, SinogramGrid


class Radon2D:
    def __init__(self, detector_shape, detector_spacing, grid: SinogramGrid, oversample: float = 2.0):
        self.detector_shape = tuple(int(v) for v in detector_shape)
        self.detector_spacing = tuple(float(v) for v in detector_spacing)
        self.grid = grid
        rows, cols = self.detector_shape
        dy, dx = self.detector_spacing
        e = grid.clip_radius
        n_v = int(math.ceil(2 * e * oversample / min(dx, dy)))
        self.step = 2 * e / n_v
        v = -e + (np.arange(n_v) + 0.5) * self.step
        s = grid.s

        row_idx, col_idx, vals = [], [], []
        for i, mu in enumerate(grid.angles):
            c, sn = math.cos(mu), math.sin(mu)
            x = s[:, None] * c - v[None, :] * sn
            y = s[:, None] * sn + v[None, :] * c
            fc = x / dx + (cols - 1) / 2
            fr = y / dy + (rows - 1) / 2
            c0 = np.floor(fc).astype(np.int64)
            r0 = np.floor(fr).astype(np.int64)
            tc = fc - c0
            tr = fr - r0
            line = np.broadcast_to((i * grid.num_s + np.arange(grid.num_s))[:, None], fc.shape)
            for dr, dc, w in (
                (0, 0, (1 - tr) * (1 - tc)),
                (0, 1, (1 - tr) * tc),
                (1, 0, tr * (1 - tc)),
                (1, 1, tr * tc),
            ):
                rr = r0 + dr
                cc = c0 + dc
                ok = (rr >= 0) & (rr < rows) & (cc >= 0) & (cc < cols) & (w > 0)
                row_idx.append(line[ok])
                col_idx.append(rr[ok] * cols + cc[ok])
                vals.append(w[ok] * self.step)
        mat = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(row_idx), np.concatenate(col_idx))),
            shape=(grid.num_angles * grid.num_s, rows * cols),
        )
        self.matrix = mat.tocsr()
        self.matrix.sum_duplicates()
        self.matrix_t = self.matrix.T.tocsr()

    @property
    def sino_shape(self) -> tuple[int, int]:
        return self.grid.shape

    def forward(self, p: np.ndarray) -> np.ndarray:
        """Radon transform over the trailing (rows, cols) axes."""
        p = np.asarray(p, dtype=np.float64)
        lead = p.shape[:-2]
        if p.shape[-2:] != self.detector_shape:
            raise ValueError(f"projection shape {p.shape[-2:]} != detector {self.detector_shape}")
        flat = p.reshape(-1, p.shape[-2] * p.shape[-1]).T
        out = self.matrix @ flat
        return np.ascontiguousarray(out.T).reshape(lead + self.sino_shape)

    def adjoint(self, sino: np.ndarray) -> np.ndarray:
        """Transpose: scatter sinogram values back along the sampled lines."""
        sino = np.asarray(sino, dtype=np.float64)
        lead = sino.shape[:-2]
        if sino.shape[-2:] != self.sino_shape:
            raise ValueError(f"sinogram shape {sino.shape[-2:]} != grid {self.sino_shape}")
        flat = sino.reshape(-1, self.sino_shape[0] * self.sino_shape[1]).T
        out = self.matrix_t @ flat
        return np.ascontiguousarray(out.T).reshape(lead + self.detector_shape)


@lru_cache(maxsize=8)
def _cached(detector_shape, detector_spacing, grid) -> Radon2D:
    return Radon2D(detector_shape, detector_spacing, grid)


def radon_operator(geom: ConeBeamGeometry, grid: SinogramGrid) -> Radon2D:
    return _cached(geom.detector_shape, geom.detector_spacing, grid)


def radon_2d(p: np.ndarray, geom: ConeBeamGeometry, grid: SinogramGrid) -> np.ndarray:
    return radon_operator(geom, grid).forward(p)


def radon_2d_adjoint(sino: np.ndarray, geom: ConeBeamGeometry, grid: SinogramGrid) -> np.ndarray:
    return radon_operator(geom, grid).adjoint(sino)
