"""Shift-variant filtered backprojection with per-view redundancy weights.

Per view ``lambda`` the chain is::

    S   = w_sino . D . A2d . w_cos . g                    (intermediate function)
    g^F = w_d . A2d^T . D . ((G w_red) * S)               (shift-variant filter)
    f   = relu( sum_lambda q_lambda / |x - a|^2 . g^F )   (backprojection)

with ``G`` the Gaussian layer along ``s`` and ``q_lambda`` the quadrature
weight of the view. By default ``G`` smooths the weight array itself
(``smooth_target="weights"``); ``"data"`` instead smooths the weighted
intermediate function, ``G (w_red * S)``.
Everything between ``w_red`` and the ReLU is linear, which is what the
training code relies on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import ConeBeamGeometry, SinogramGrid, Trajectory
from .operators import (
    cone_backproject,
    cone_backproject_adjoint,
    cosine_weight_map,
    desk_smoothing,
    detector_weight_map,
    diff_s,
    diff_s_adjoint,
    gaussian_smooth_s,
    gaussian_smooth_s_adjoint,
    radon_operator,
    sino_weight_map,
)

SMOOTH_TARGETS = ("data", "weights", "none")


@dataclass(frozen=True)
class PipelineConfig:
    geom: ConeBeamGeometry
    grid: SinogramGrid
    smoothing: tuple[float, int] | None = None
    smooth_target: str = "weights"
    nonneg: bool = True

    def __post_init__(self):
        if self.smooth_target not in SMOOTH_TARGETS:
            raise ValueError(f"smooth_target must be one of {SMOOTH_TARGETS}")
        if self.smoothing is not None:
            sigma, k = self.smoothing
            if sigma <= 0 or int(k) % 2 != 1:
                raise ValueError(f"smoothing needs sigma > 0 and odd kernel size, got {self.smoothing}")

    @classmethod
    def for_geometry(cls, geom: ConeBeamGeometry, num_angles: int | None = None, s_oversample: int = 1,
                     **kw) -> "PipelineConfig":
        """Grid sized to the detector and the Gaussian layer rescaled to ``num_s``."""
        grid = SinogramGrid.for_detector(geom, num_angles, s_oversample)
        kw.setdefault("smoothing", desk_smoothing(grid.num_s))
        return cls(geom=geom, grid=grid, **kw)

    @property
    def smoothing_active(self) -> bool:
        return self.smoothing is not None and self.smooth_target != "none"

    def to_dict(self) -> dict:
        return {
            "geometry": self.geom.to_dict(),
            "grid": self.grid.to_dict(),
            "smoothing": list(self.smoothing) if self.smoothing is not None else None,
            "smooth_target": self.smooth_target,
            "nonneg": self.nonneg,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        sm = d.get("smoothing")
        return cls(
            geom=ConeBeamGeometry.from_dict(d["geometry"]),
            grid=SinogramGrid.from_dict(d["grid"]),
            smoothing=(float(sm[0]), int(sm[1])) if sm is not None else None,
            smooth_target=d.get("smooth_target", "weights"),
            nonneg=bool(d.get("nonneg", True)),
        )


@dataclass
class RedundancyWeights:
    """Weight array of shape ``(num_views, num_angles, num_s)``."""

    data: np.ndarray
    grid: SinogramGrid
    trajectory_hash: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3 or self.data.shape[1:] != self.grid.shape:
            raise ValueError(f"weights shape {self.data.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("weights contain non-finite values")

    @property
    def num_projections(self) -> int:
        return self.data.shape[0]


class ShiftVariantFBP:
    """Batched forward and vector-Jacobian products of the reconstruction chain.

    Projection stacks are ``(K, N, rows, cols)``; intermediate functions and
    weights live on ``(.., N, num_angles, num_s)``.
    """

    def __init__(self, traj: Trajectory, cfg: PipelineConfig):
        if traj.geom.detector_shape != cfg.geom.detector_shape or traj.geom.volume_shape != cfg.geom.volume_shape:
            raise ValueError("trajectory geometry does not match pipeline geometry")
        self.traj = traj
        self.cfg = cfg
        self.radon = radon_operator(cfg.geom, cfg.grid)
        self.w_cos = cosine_weight_map(cfg.geom)
        self.w_d = detector_weight_map(cfg.geom)
        self.w_sino = np.ascontiguousarray(sino_weight_map(cfg.grid, cfg.geom.sdd))
        self.lambda_weights = traj.quadrature_weights
        self.mask = cfg.geom.support_mask()

    # --- pieces -------------------------------------------------------------

    def intermediate(self, projections: np.ndarray) -> np.ndarray:
        """Intermediate function ``S`` for every view (no weights involved)."""
        radon = self.radon.forward(projections * self.w_cos)
        return self.w_sino * diff_s(radon, self.cfg.grid.s_spacing)

    def _smooth(self, x):
        sigma, k = self.cfg.smoothing
        return gaussian_smooth_s(x, sigma, k)

    def _smooth_t(self, x):
        sigma, k = self.cfg.smoothing
        return gaussian_smooth_s_adjoint(x, sigma, k)

    def effective_weights(self, weights: np.ndarray) -> np.ndarray:
        if self.cfg.smoothing_active and self.cfg.smooth_target == "weights":
            return self._smooth(weights)
        return weights

    def filter(self, S: np.ndarray, weights: np.ndarray) -> np.ndarray:
        """Filtered projections ``g^F`` from ``S`` and (broadcastable) weights."""
        q = self.effective_weights(weights) * S
        if self.cfg.smoothing_active and self.cfg.smooth_target == "data":
            q = self._smooth(q)
        q = diff_s(q, self.cfg.grid.s_spacing)
        return self.w_d * self.radon.adjoint(q)

    def backproject(self, filtered: np.ndarray) -> np.ndarray:
        return cone_backproject(filtered, self.traj, self.cfg.geom, weight_by_distance=True,
                                lambda_weights=self.lambda_weights, mask=self.mask)

    def linear_recon(self, S: np.ndarray, weights: np.ndarray) -> np.ndarray:
        """Reconstruction before the ReLU, from cached ``S`` of shape (K, N, ..)."""
        return self.backproject(self.filter(S, weights))

    def reconstruct_from_intermediate(self, S, weights):
        f = self.linear_recon(S, weights)
        return np.maximum(f, 0.0) if self.cfg.nonneg else f

    # --- gradients ----------------------------------------------------------

    def weight_vjp(self, S: np.ndarray, grad_linear: np.ndarray) -> np.ndarray:
        """Gradient w.r.t. the weights given ``dL/d(linear_recon)`` of shape (K, vol).

        ``S`` is (K, N, num_angles, num_s); the result is summed over samples.
        """
        b = cone_backproject_adjoint(grad_linear, self.traj, self.cfg.geom, weight_by_distance=True,
                                     lambda_weights=self.lambda_weights, mask=self.mask)
        b = self.radon.forward(self.w_d * b)
        b = diff_s_adjoint(b, self.cfg.grid.s_spacing)
        if self.cfg.smoothing_active and self.cfg.smooth_target == "data":
            b = self._smooth_t(b)
        g = np.einsum("k...,k...->...", S, b) if S.ndim == 4 else S * b
        if self.cfg.smoothing_active and self.cfg.smooth_target == "weights":
            g = self._smooth_t(g)
        return g


def grangeat_intermediate(projection: np.ndarray, cfg: PipelineConfig) -> np.ndarray:
    """``S = w_sino D A2d w_cos g`` for one projection (or any leading batch)."""
    radon = radon_operator(cfg.geom, cfg.grid)
    r = radon.forward(projection * cosine_weight_map(cfg.geom))
    return sino_weight_map(cfg.grid, cfg.geom.sdd) * diff_s(r, cfg.grid.s_spacing)


def shift_variant_filter(S: np.ndarray, weights: np.ndarray, cfg: PipelineConfig) -> np.ndarray:
    """``g^F = w_d A2d^T D G (w * S)`` for one view's weight slice."""
    radon = radon_operator(cfg.geom, cfg.grid)
    w = weights
    if cfg.smoothing_active and cfg.smooth_target == "weights":
        w = gaussian_smooth_s(w, *cfg.smoothing)
    q = w * S
    if cfg.smoothing_active and cfg.smooth_target == "data":
        q = gaussian_smooth_s(q, *cfg.smoothing)
    return detector_weight_map(cfg.geom) * radon.adjoint(diff_s(q, cfg.grid.s_spacing))


def reconstruct(projections: np.ndarray, weights, traj: Trajectory, cfg: PipelineConfig) -> np.ndarray:
    """Full reconstruction of one projection stack ``(N, rows, cols)``."""
    w = weights.data if isinstance(weights, RedundancyWeights) else np.asarray(weights)
    projections = np.asarray(projections, dtype=np.float64)
    n = len(traj)
    if projections.shape[0] != n or w.shape[0] not in (1, n):
        raise ValueError(
            f"length mismatch: {projections.shape[0]} projections, {w.shape[0]} weight slices, {n} views"
        )
    model = ShiftVariantFBP(traj, cfg)
    S = model.intermediate(projections)
    f = model.backproject(model.filter(S, w))
    return np.maximum(f, 0.0) if cfg.nonneg else f


def analytic_circular_weights(traj: Trajectory, cfg: PipelineConfig) -> RedundancyWeights:
    """Closed-form weights for a circular orbit.

    ``-1/(4 pi^2) * 1/2 * D^2 |cos mu| / (s^2 + D^2)``, identical for every view.
    """
    if not traj.is_circular():
        raise ValueError("analytic weights exist only for circular trajectories")
    D = cfg.geom.sdd
    mu = cfg.grid.angles
    s = cfg.grid.s
    cos_mu = np.abs(np.cos(mu))
    cos_mu[cos_mu < 1e-15] = 0.0  # cos(pi/2) is 6e-17 in floating point
    w2d = -1.0 / (4 * math.pi**2) * 0.5 * D**2 * cos_mu[:, None] / (s[None, :] ** 2 + D**2)
    data = np.broadcast_to(w2d, (len(traj),) + cfg.grid.shape).copy()
    return RedundancyWeights(data=data, grid=cfg.grid, trajectory_hash=traj.content_hash(),
                             meta={"source": "analytic-circular"})
