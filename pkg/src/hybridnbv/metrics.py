"""Image quality and uncertainty quality metrics."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy import signal
from scipy.stats import rankdata

PSNR_CAP = 99.0


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def mse(rendered, gt) -> float:
    a, b = _pair(rendered, gt)
    return float(np.mean((a - b) ** 2))


def psnr(rendered, gt) -> float:
    """PSNR in dB for images in [0, 1], capped at 99 dB (identical images)."""
    err = mse(rendered, gt)
    if err == 0.0:
        return PSNR_CAP
    return float(min(10.0 * np.log10(1.0 / err), PSNR_CAP))


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-x ** 2 / (2 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(rendered, gt, window: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03, data_range: float = 1.0) -> float:
    """Mean SSIM over valid window positions, averaged over channels.

    Gaussian-weighted local statistics (11 x 11, sigma 1.5) as in the
    standard formulation.
    """
    a, b = _pair(rendered, gt)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if a.shape[0] < window or a.shape[1] < window:
        raise ValueError(f"image smaller than the {window}x{window} window")
    w = gaussian_window(window, sigma)
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2

    def filt(x):
        return signal.correlate2d(x, w, mode="valid")

    vals = []
    for ch in range(a.shape[2]):
        x, y = a[..., ch], b[..., ch]
        mx, my = filt(x), filt(y)
        sxx = filt(x * x) - mx * mx
        syy = filt(y * y) - my * my
        sxy = filt(x * y) - mx * my
        num = (2 * mx * my + c1) * (2 * sxy + c2)
        den = (mx * mx + my * my + c1) * (sxx + syy + c2)
        vals.append(np.mean(num / den))
    return float(np.mean(vals))


@dataclass
class Correlation:
    value: float
    undefined: bool = False

    def __float__(self):
        return self.value


def srcc(xs, ys) -> Correlation:
    """Spearman rank correlation with average ranks for ties.

    A constant input makes the coefficient undefined; 0 is returned with
    ``undefined`` set.
    """
    x = np.asarray(xs, dtype=np.float64).ravel()
    y = np.asarray(ys, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ValueError("srcc inputs must have equal length")
    if x.size < 3:
        raise ValueError("srcc needs at least 3 pairs")
    rx, ry = rankdata(x), rankdata(y)
    rx -= rx.mean()
    ry -= ry.mean()
    den = np.sqrt(np.sum(rx * rx) * np.sum(ry * ry))
    if den == 0.0:
        return Correlation(0.0, True)
    return Correlation(float(np.clip(np.sum(rx * ry) / den, -1.0, 1.0)))


def pixel_error(rendered, gt) -> np.ndarray:
    """Per-pixel squared error averaged over channels."""
    a, b = _pair(rendered, gt)
    e = (a - b) ** 2
    return e.mean(axis=-1) if e.ndim == 3 else e


@dataclass
class SparsificationCurve:
    fractions_removed: np.ndarray
    error_by_uncertainty: np.ndarray
    error_by_oracle: np.ndarray

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["fraction", "err_by_uncertainty", "err_by_oracle"])
            for row in zip(self.fractions_removed, self.error_by_uncertainty,
                           self.error_by_oracle):
                w.writerow([repr(float(v)) for v in row])


def _remaining_means(err: np.ndarray, order: np.ndarray, fractions: np.ndarray) -> np.ndarray:
    # order lists pixels from first-removed to last-removed; at least one pixel remains
    n = err.size
    tail = np.cumsum(err[order][::-1])[::-1]
    out = np.empty(len(fractions))
    for k, f in enumerate(fractions):
        removed = min(int(round(f * n)), n - 1)
        out[k] = tail[removed] / (n - removed)
    return out


def sparsification(uncertainty, error, steps: int = 50):
    """Sparsification curves for ``uncertainty`` and the error oracle.

    Pixels are removed most-uncertain first; ties keep pixel-index order.
    Both curves are normalised by the mean error at ``f = 0``.  Returns the
    curve and a flag that is set when the error map is all zero.
    """
    if steps < 2:
        raise ValueError("steps must be >= 2")
    u, e = _pair(uncertainty, error)
    u, e = u.ravel(), e.ravel()
    fractions = np.arange(steps) / steps
    if not np.any(e > 0):
        ones = np.ones(steps)
        return SparsificationCurve(fractions, ones, ones.copy()), True
    by_u = np.argsort(-u, kind="stable")
    by_e = np.argsort(-e, kind="stable")
    base = e.mean()
    curve = SparsificationCurve(fractions, _remaining_means(e, by_u, fractions) / base,
                                _remaining_means(e, by_e, fractions) / base)
    return curve, False


def ause(uncertainty, error, steps: int = 50) -> tuple[float, SparsificationCurve, bool]:
    """Trapezoidal area between uncertainty and oracle sparsification curves.

    Returns ``(ause, curve, all_zero_error)``.
    """
    curve, zero = sparsification(uncertainty, error, steps)
    if zero:
        return 0.0, curve, True
    gap = curve.error_by_uncertainty - curve.error_by_oracle
    return float(np.trapezoid(gap, curve.fractions_removed)), curve, False
