"""Diagonal (pointwise) weightings. Each is self-adjoint."""

from __future__ import annotations

import numpy as np

from ..geometry import ConeBeamGeometry, SinogramGrid


def _detector_r2(geom: ConeBeamGeometry) -> np.ndarray:
    x, y = geom.detector_coords()
    return x[None, :] ** 2 + y[:, None] ** 2


def cosine_weight_map(geom: ConeBeamGeometry) -> np.ndarray:
    D = geom.sdd
    return D / np.sqrt(_detector_r2(geom) + D * D)


def detector_weight_map(geom: ConeBeamGeometry) -> np.ndarray:
    return _detector_r2(geom) + geom.sdd**2


def sino_weight_map(grid: SinogramGrid, D: float) -> np.ndarray:
    s = grid.s
    return np.broadcast_to((s * s + D * D) / (D * D), grid.shape)


def cosine_weight(p: np.ndarray, geom: ConeBeamGeometry) -> np.ndarray:
    """``p * D / sqrt(x^2 + y^2 + D^2)`` over the trailing (rows, cols) axes."""
    return p * cosine_weight_map(geom)


def detector_weight(p: np.ndarray, geom: ConeBeamGeometry) -> np.ndarray:
    """``p * (x^2 + y^2 + D^2)``."""
    return p * detector_weight_map(geom)


def sino_weight(sino: np.ndarray, grid: SinogramGrid, D: float) -> np.ndarray:
    """``sino * (s^2 + D^2) / D^2`` over the trailing (mu, s) axes."""
    return sino * sino_weight_map(grid, D)
