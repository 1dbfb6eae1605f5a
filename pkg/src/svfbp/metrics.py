"""Image-quality metrics: MSE, PSNR, windowed SSIM (with gradient), histogram matching."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import uniform_filter

PSNR_INF_SENTINEL = 999.0
K1, K2 = 0.01, 0.03


def minmax_normalize(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    lo, hi = x.min(), x.max()
    if not hi > lo:
        raise ValueError("cannot normalise an array with zero dynamic range")
    return (x - lo) / (hi - lo)


def mse(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def psnr_from_mse(m: float, peak: float = 1.0) -> float:
    """PSNR in dB; ``inf`` for identical inputs (see :data:`PSNR_INF_SENTINEL`)."""
    if m == 0:
        return math.inf
    return 10.0 * math.log10(peak * peak / m)


def psnr(a, b, peak: float = 1.0) -> float:
    return psnr_from_mse(mse(a, b), peak)


def _ssim_terms(x, y, win, data_range):
    ndim = x.ndim
    n_pts = win**ndim
    cov = n_pts / (n_pts - 1)
    c1 = (K1 * data_range) ** 2
    c2 = (K2 * data_range) ** 2
    filt = lambda a: uniform_filter(a, size=win, mode="reflect")  # noqa: E731
    ux, uy = filt(x), filt(y)
    vx = cov * (filt(x * x) - ux * ux)
    vy = cov * (filt(y * y) - uy * uy)
    vxy = cov * (filt(x * y) - ux * uy)
    a1 = 2 * ux * uy + c1
    a2 = 2 * vxy + c2
    b1 = ux * ux + uy * uy + c1
    b2 = vx + vy + c2
    s = a1 * a2 / (b1 * b2)
    return s, (ux, uy, a1, a2, b1, b2, cov)


def _interior(shape, pad):
    m = np.zeros(shape, dtype=bool)
    m[tuple(slice(pad, n - pad) for n in shape)] = True
    return m


def ssim(x: np.ndarray, y: np.ndarray, win: int = 7, data_range: float = 1.0) -> float:
    """Mean SSIM with a uniform ``win``-sized window (2D or 3D).

    Constants K1=0.01, K2=0.03, sample covariance, and the border of half a
    window excluded from the mean.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    if win % 2 != 1 or min(x.shape) < win:
        raise ValueError(f"window {win} must be odd and fit inside {x.shape}")
    s, _ = _ssim_terms(x, y, win, data_range)
    pad = (win - 1) // 2
    return float(s[_interior(x.shape, pad)].mean())


def ssim_and_grad(x: np.ndarray, y: np.ndarray, win: int = 7, data_range: float = 1.0):
    """Mean SSIM and its gradient with respect to ``x``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    s, (ux, uy, a1, a2, b1, b2, cov) = _ssim_terms(x, y, win, data_range)
    pad = (win - 1) // 2
    inner = _interior(x.shape, pad)
    value = float(s[inner].mean())
    m = inner / inner.sum()
    # partials of the local SSIM map w.r.t. the local moments
    d_ux = 2 * uy * a2 / (b1 * b2) - s * 2 * ux / b1
    d_vx = -s / b2
    d_vxy = 2 * a1 / (b1 * b2)
    g_ux = m * (d_ux - d_vx * cov * 2 * ux - d_vxy * cov * uy)
    g_uxx = m * d_vx * cov
    g_uxy = m * d_vxy * cov
    # box filter transpose; the masks vanish within pad of the border so no reflection is hit
    box_t = lambda a: uniform_filter(a, size=win, mode="constant")  # noqa: E731
    grad = box_t(g_ux) + 2 * x * box_t(g_uxx) + y * box_t(g_uxy)
    return value, grad


def histogram_match(recon: np.ndarray, ref: np.ndarray, n_quantiles: int = 4096) -> np.ndarray:
    """Monotone remap of ``recon`` so its empirical CDF follows ``ref``.

    Both CDFs are sampled at ``n_quantiles`` levels and the remap is the
    piecewise-linear quantile-to-quantile map. Tied recon quantiles map to
    the mean of the matching reference quantiles.
    """
    recon = np.asarray(recon, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if not (np.all(np.isfinite(recon)) and np.all(np.isfinite(ref))):
        raise ValueError("histogram matching needs finite inputs")
    if not recon.max() > recon.min():
        raise ValueError("cannot histogram-match a constant reconstruction")
    levels = np.linspace(0.0, 1.0, n_quantiles)
    q_src = np.quantile(recon, levels)
    q_ref = np.quantile(ref, levels)
    knots, inverse = np.unique(q_src, return_inverse=True)
    targets = np.bincount(inverse, weights=q_ref) / np.bincount(inverse)
    return np.interp(recon, knots, targets)


@dataclass
class MetricsReport:
    mse: float
    psnr_db: float
    ssim: float
    time_s: float | None = None
    samples: list = field(default_factory=list)

    def to_dict(self) -> dict:
        d = {"mse": self.mse, "psnr_db": _finite(self.psnr_db), "ssim": self.ssim, "time_s": self.time_s}
        if self.samples:
            d["samples"] = [s.to_dict() for s in self.samples]
        return d


def _finite(v):
    return PSNR_INF_SENTINEL if v == math.inf else v


def evaluate(recon: np.ndarray, gt: np.ndarray, win: int = 7, match: bool = True) -> MetricsReport:
    """Histogram-match ``recon`` to ``gt``, normalise both to [0, 1], then score."""
    recon = np.asarray(recon, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if recon.shape != gt.shape:
        raise ValueError(f"shape mismatch {recon.shape} vs {gt.shape}")
    if np.array_equal(recon, gt):
        return MetricsReport(mse=0.0, psnr_db=math.inf, ssim=1.0)
    r = histogram_match(recon, gt) if match else recon
    rn = minmax_normalize(r)
    gn = minmax_normalize(gt)
    m = mse(rn, gn)
    return MetricsReport(mse=m, psnr_db=psnr_from_mse(m), ssim=ssim(rn, gn, win=win))


def aggregate(reports: list[MetricsReport]) -> dict:
    """Mean and sample standard deviation of each metric."""
    out = {}
    for key in ("mse", "psnr_db", "ssim", "time_s"):
        vals = [getattr(r, key) for r in reports if getattr(r, key) is not None]
        if not vals:
            continue
        vals = np.array([_finite(v) for v in vals], dtype=np.float64)
        out[key] = {"mean": float(vals.mean()), "std": float(vals.std(ddof=1)) if len(vals) > 1 else 0.0}
    return out


def format_table(rows: dict[str, dict]) -> str:
    """Plain-text table: one row per method, mean +- std per metric."""
    header = f"{'Method':<16}{'MSE':>22}{'PSNR (dB)':>20}{'SSIM':>22}{'Time (s)':>14}"
    lines = [header, "-" * len(header)]
    for name, agg in rows.items():
        def cell(k, fmt, width):
            if k not in agg:
                return f"{'-':>{width}}"
            return f"{format(agg[k]['mean'], fmt)} ± {format(agg[k]['std'], fmt)}".rjust(width)
        lines.append(
            f"{name:<16}{cell('mse', '.4g', 22)}{cell('psnr_db', '.2f', 20)}"
            f"{cell('ssim', '.4f', 22)}{cell('time_s', '.2f', 14)}"
        )
    return "\n".join(lines)
