"""SIRT-type algebraic iterative reconstruction and a wall-clock timer."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass

import numpy as np

from .geometry import ConeBeamGeometry, Trajectory
from .operators import cone_backproject, cone_forward

log = logging.getLogger(__name__)


class AirDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class AirConfig:
    iterations: int = 300
    relaxation: float = 1.0
    nonneg: bool = True
    restrict_to_support: bool = True

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not 0 < self.relaxation <= 2:
            raise ValueError("relaxation must lie in (0, 2]")

    def to_dict(self) -> dict:
        return asdict(self)


def _backproject(p, traj, geom, mask):
    return cone_backproject(p, traj, geom, weight_by_distance=False, mask=mask)


def air_reconstruct(projections: np.ndarray, traj: Trajectory, geom: ConeBeamGeometry | None = None,
                    cfg: AirConfig = AirConfig(), callback=None) -> np.ndarray:
    """``v <- v + relax * C A^T R (p - A v)`` starting from zero.

    ``R`` and ``C`` are the inverse row and column sums of the projector;
    rows or columns that sum to zero contribute nothing. ``callback(k, v,
    residual_norm)`` is called after every iteration.
    """
    geom = geom or traj.geom
    p = np.asarray(projections, dtype=np.float64)
    if p.shape != (len(traj),) + geom.detector_shape:
        raise ValueError(f"projections {p.shape} do not match {len(traj)} views of {geom.detector_shape}")
    mask = geom.support_mask() if cfg.restrict_to_support else np.ones(geom.volume_shape, dtype=bool)
    ones = mask.astype(np.float64)
    row = cone_forward(ones, traj, geom)
    col = _backproject(np.ones_like(p), traj, geom, mask)
    R = np.divide(1.0, row, out=np.zeros_like(row), where=row > 1e-12)
    C = np.divide(1.0, col, out=np.zeros_like(col), where=col > 1e-12)
    v = np.zeros(geom.volume_shape)
    for k in range(cfg.iterations):
        resid = p - cone_forward(v, traj, geom)
        rnorm = float(np.linalg.norm(resid))
        if not np.isfinite(rnorm):
            raise AirDiverged(f"iteration {k}: non-finite residual")
        v += cfg.relaxation * C * _backproject(R * resid, traj, geom, mask)
        if cfg.nonneg:
            np.maximum(v, 0.0, out=v)
        if callback is not None:
            callback(k, v, rnorm)
    return v


def timed(fn, *args, **kwargs):
    """Run ``fn`` and return ``(result, seconds)`` measured with a monotonic clock."""
    t0 = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - t0
