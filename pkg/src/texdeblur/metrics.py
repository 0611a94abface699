"""PSNR and SSIM on (H, W, C) arrays in [0, peak].

Both are computed in float64.  SSIM uses 11x11 Gaussian-weighted local
statistics (sigma 1.5, K1 0.01, K2 0.03), population covariance, border
cropped by the window radius, averaged over channels.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DataError

PSNR_CAP_DB = 100.0


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    if a.shape != b.shape:
        raise DataError(f"shape mismatch: {a.shape} vs {b.shape}")
    diff = a.astype(np.float64) - b.astype(np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * math.log10(peak * peak / mse), PSNR_CAP_DB)


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-0.5 * (r / sigma) ** 2)
    w = np.outer(g, g)
    return w / w.sum()


def _filter_valid(img: np.ndarray, window: np.ndarray) -> np.ndarray:
    view = np.lib.stride_tricks.sliding_window_view(img, window.shape)
    return np.einsum("hwij,ij->hw", view, window)


def ssim(
    a: np.ndarray,
    b: np.ndarray,
    peak: float = 1.0,
    window: int = 11,
    sigma: float = 1.5,
    k1: float = 0.01,
    k2: float = 0.03,
) -> float:
    if a.shape != b.shape:
        raise DataError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[:, :, None]
        b = b[:, :, None]
    if a.ndim != 3:
        raise DataError(f"expected (H, W) or (H, W, C), got {a.shape}")
    if min(a.shape[0], a.shape[1]) < window:
        raise DataError(f"image {a.shape[:2]} smaller than window {window}")

    w = _gaussian_window(window, sigma)
    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2
    scores = []
    for ch in range(a.shape[2]):
        x = a[:, :, ch].astype(np.float64)
        y = b[:, :, ch].astype(np.float64)
        mu_x = _filter_valid(x, w)
        mu_y = _filter_valid(y, w)
        var_x = _filter_valid(x * x, w) - mu_x * mu_x
        var_y = _filter_valid(y * y, w) - mu_y * mu_y
        cov = _filter_valid(x * y, w) - mu_x * mu_y
        num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
        den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
        scores.append(float(np.mean(num / den)))
    return float(np.mean(scores))
