"""Learning the redundancy weights.

The loss is ``MSE + gamma * (1 - SSIM)`` between min-max normalised volumes.
Gradients are propagated by hand through the normalisation, the ReLU, the
backprojection (exact transpose) and the 2D filter chain, so no autodiff
framework is needed. Optimisation is AdamW under a one-cycle schedule.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .geometry import Trajectory
from .metrics import ssim_and_grad
from .pipeline import PipelineConfig, RedundancyWeights, ShiftVariantFBP

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    gamma: float = 0.1
    epochs: int = 100
    lr_min: float = 0.1
    lr_max: float = 1.0
    schedule: str = "onecycle"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    init_range: tuple[float, float] = (-1.0, 0.0)
    seed: int = 0
    nonneg_in_training: bool = True
    share_across_views: bool = False
    ssim_window: int = 7
    patience: int | None = None

    def __post_init__(self):
        self.init_range = tuple(float(v) for v in self.init_range)
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.lr_min < self.lr_max and self.schedule == "onecycle":
            raise ValueError("one-cycle schedule needs lr_min < lr_max")
        low, high = self.init_range
        if not low < high <= 0:
            raise ValueError(f"init_range must satisfy low < high <= 0, got {self.init_range}")
        if self.schedule not in ("onecycle", "constant"):
            raise ValueError(f"unknown schedule {self.schedule!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["init_range"] = list(self.init_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)

    def lr_at(self, epoch: int) -> float:
        if self.schedule == "constant":
            return self.lr_max
        return onecycle_lr(epoch, self.epochs, self.lr_min, self.lr_max)


@dataclass
class TrainState:
    weights: np.ndarray
    first_moment: np.ndarray
    second_moment: np.ndarray
    step: int = 0
    history: list = field(default_factory=list)

    @classmethod
    def fresh(cls, weights: np.ndarray) -> "TrainState":
        w = np.array(weights, dtype=np.float64)
        return cls(w, np.zeros_like(w), np.zeros_like(w))

    def full_weights(self, num_views: int) -> np.ndarray:
        if self.weights.shape[0] == num_views:
            return self.weights.copy()
        return np.broadcast_to(self.weights, (num_views,) + self.weights.shape[1:]).copy()


# --- loss ---------------------------------------------------------------------


def _normalize_with_grad_fn(x: np.ndarray):
    lo_i = int(np.argmin(x))
    hi_i = int(np.argmax(x))
    lo = x.flat[lo_i]
    span = x.flat[hi_i] - lo
    if not span > 0:
        raise ValueError("reconstruction has zero dynamic range")
    xn = (x - lo) / span

    def backward(g):
        out = g / span
        out.flat[lo_i] -= np.sum(g * (1 - xn)) / span
        out.flat[hi_i] -= np.sum(g * xn) / span
        return out

    return xn, backward


def loss(recon: np.ndarray, gt: np.ndarray, gamma: float = 0.1, win: int = 7):
    """``MSE + gamma * (1 - SSIM)`` after min-max normalising both volumes.

    Returns ``(value, d value / d recon)``.
    """
    recon = np.asarray(recon, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if recon.shape != gt.shape:
        raise ValueError(f"shape mismatch {recon.shape} vs {gt.shape}")
    rn, back = _normalize_with_grad_fn(recon)
    g_lo, g_hi = gt.min(), gt.max()
    if not g_hi > g_lo:
        raise ValueError("ground truth has zero dynamic range")
    gn = (gt - g_lo) / (g_hi - g_lo)
    diff = rn - gn
    value = float(np.mean(diff * diff))
    grad = 2 * diff / diff.size
    if gamma:
        s, ds = ssim_and_grad(rn, gn, win=win)
        value += gamma * (1 - s)
        grad = grad - gamma * ds
    return value, back(grad)


# --- optimiser and schedule ---------------------------------------------------


def adamw_step(state: TrainState, grad: np.ndarray, lr: float, beta1=0.9, beta2=0.999, eps=1e-8,
               weight_decay=0.01) -> TrainState:
    """One decoupled-weight-decay Adam update, in place. Returns ``state``."""
    if grad.shape != state.weights.shape:
        raise ValueError(f"gradient shape {grad.shape} != weights {state.weights.shape}")
    state.step += 1
    t = state.step
    state.first_moment *= beta1
    state.first_moment += (1 - beta1) * grad
    state.second_moment *= beta2
    state.second_moment += (1 - beta2) * grad * grad
    m_hat = state.first_moment / (1 - beta1**t)
    v_hat = state.second_moment / (1 - beta2**t)
    state.weights *= 1 - lr * weight_decay
    state.weights -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return state


def onecycle_lr(epoch: int, total: int, lr_min: float, lr_max: float, pct_start: float = 0.3,
                final_div: float = 100.0) -> float:
    """Cosine one-cycle: lr_min -> lr_max over the first 30%, then -> lr_min/100."""
    if not 0 <= epoch < total:
        raise ValueError(f"epoch {epoch} outside [0, {total})")
    peak = pct_start * total
    if epoch <= peak:
        frac = epoch / peak if peak > 0 else 1.0
        return lr_max + (lr_min - lr_max) * (1 + math.cos(math.pi * frac)) / 2
    tail = (total - 1) - peak
    frac = (epoch - peak) / tail
    lr_end = lr_min / final_div
    return lr_end + (lr_max - lr_end) * (1 + math.cos(math.pi * frac)) / 2


def init_weights(shape, low: float = -1.0, high: float = 0.0, seed: int = 0) -> np.ndarray:
    if not low < high:
        raise ValueError("need low < high")
    return np.random.default_rng(seed).uniform(low, high, size=shape)


# --- gradient of the full chain -----------------------------------------------


def grad_weights(projections, weights, traj: Trajectory, pcfg: PipelineConfig, loss_grad, S=None):
    """Gradient of a scalar loss w.r.t. the weights given ``dL/d(recon)``.

    ``projections`` is ``(N, rows, cols)`` or a batch ``(K, N, rows, cols)``
    with a matching batch of ``loss_grad`` volumes. Pass ``S`` to reuse a
    cached intermediate function.
    """
    model = ShiftVariantFBP(traj, pcfg)
    w = weights.data if isinstance(weights, RedundancyWeights) else np.asarray(weights)
    projections = np.asarray(projections, dtype=np.float64)
    single = projections.ndim == 3
    if single:
        projections = projections[None]
        loss_grad = np.asarray(loss_grad)[None]
    if loss_grad.shape != (projections.shape[0],) + pcfg.geom.volume_shape:
        raise ValueError("loss gradient shape does not match the reconstruction")
    if S is None:
        S = model.intermediate(projections)
    g = np.asarray(loss_grad, dtype=np.float64)
    if pcfg.nonneg:
        g = g * (model.linear_recon(S, w) > 0)
    return model.weight_vjp(S, g)


class Objective:
    """Mean training loss over a fixed sample set as a function of the weights."""

    def __init__(self, projections, volumes, traj, pcfg: PipelineConfig, gamma=0.1, win=7,
                 nonneg=True, S=None):
        self.model = ShiftVariantFBP(traj, pcfg)
        self.volumes = np.asarray(volumes, dtype=np.float64)
        self.S = self.model.intermediate(np.asarray(projections, dtype=np.float64)) if S is None else S
        self.gamma = gamma
        self.win = win
        self.nonneg = nonneg

    def value_and_grad(self, weights: np.ndarray, need_grad: bool = True):
        f = self.model.linear_recon(self.S, weights)
        recon = np.maximum(f, 0) if self.nonneg else f
        k = len(self.volumes)
        total = 0.0
        grads = np.empty_like(f)
        for i in range(k):
            v, g = loss(recon[i], self.volumes[i], self.gamma, self.win)
            total += v
            grads[i] = g / k
        if not need_grad:
            return total / k, None
        if self.nonneg:
            grads *= f > 0
        gw = self.model.weight_vjp(self.S, grads)
        if weights.shape[0] == 1 and gw.shape[0] != 1:
            gw = gw.sum(axis=0, keepdims=True)
        return total / k, gw

    def value(self, weights: np.ndarray) -> float:
        return self.value_and_grad(weights, need_grad=False)[0]


def train(train_set, traj: Trajectory, cfg: TrainConfig, pcfg: PipelineConfig, val_set=None,
          state: TrainState | None = None, start_epoch: int = 0, callback=None) -> TrainState:
    """Full-batch training of the redundancy weights.

    ``train_set``/``val_set`` are ``(projections (K, N, rows, cols), volumes (K, nz, ny, nx))``.
    The intermediate functions are computed once. ``state``/``start_epoch``
    resume an interrupted run; ``callback(epoch, state)`` runs after each epoch.
    """
    pcfg_train = pcfg if pcfg.nonneg == cfg.nonneg_in_training else PipelineConfig(
        pcfg.geom, pcfg.grid, pcfg.smoothing, pcfg.smooth_target, cfg.nonneg_in_training)
    obj = Objective(*train_set, traj, pcfg_train, cfg.gamma, cfg.ssim_window, cfg.nonneg_in_training)
    val_obj = None
    if val_set is not None and len(val_set[0]):
        val_obj = Objective(*val_set, traj, pcfg_train, cfg.gamma, cfg.ssim_window, cfg.nonneg_in_training)
    n_views = len(traj)
    if state is None:
        shape = ((1 if cfg.share_across_views else n_views),) + pcfg.grid.shape
        state = TrainState.fresh(init_weights(shape, *cfg.init_range, seed=cfg.seed))
    best, stale = math.inf, 0
    for epoch in range(start_epoch, cfg.epochs):
        lr = cfg.lr_at(epoch)
        try:
            value, grad = obj.value_and_grad(state.weights)
        except ValueError as exc:
            raise TrainingDiverged(f"epoch {epoch}: {exc}") from exc
        if not (math.isfinite(value) and np.all(np.isfinite(grad))):
            raise TrainingDiverged(f"epoch {epoch}: non-finite loss or gradient (loss={value})")
        record = {"epoch": epoch, "lr": lr, "train_loss": value}
        if val_obj is not None:
            record["val_loss"] = val_obj.value(state.weights)
        adamw_step(state, grad, lr, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay)
        if not np.all(np.isfinite(state.weights)):
            raise TrainingDiverged(f"epoch {epoch}: weights became non-finite")
        state.history.append(record)
        log.info("epoch %d lr %.3g train %.6f%s", epoch, lr, value,
                 f" val {record['val_loss']:.6f}" if "val_loss" in record else "")
        if callback is not None:
            callback(epoch, state)
        if cfg.patience is not None and "val_loss" in record:
            if record["val_loss"] < best:
                best, stale = record["val_loss"], 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    log.info("early stop at epoch %d", epoch)
                    break
    return state
