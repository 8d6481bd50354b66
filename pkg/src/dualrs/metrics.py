"""Image quality metrics and row-wise error analysis."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage, stats

from .geometry import GsSequence
from .tensor import ImageBuf

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _pixels(x) -> np.ndarray:
    arr = x.pixels if isinstance(x, ImageBuf) else np.asarray(x)
    if arr.ndim == 2:
        arr = arr[..., None]
    return arr.astype(np.float64)


def center_crop(height: int, width: int, fraction: float = 0.8):
    """``(top, bottom, left, right)`` of the centred crop keeping ``fraction`` per side."""
    ch = int(round(height * fraction))
    cw = int(round(width * fraction))
    top = (height - ch) // 2
    left = (width - cw) // 2
    return top, top + ch, left, left + cw


def mse(a, b, region=None) -> float:
    a, b = _pixels(a), _pixels(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if region is not None:
        t, bt, l, r = region
        a, b = a[t:bt, l:r], b[t:bt, l:r]
    return float(np.mean((a - b) ** 2))


def psnr(a, b, region=None) -> float:
    """Peak signal-to-noise ratio for unit peak; identical inputs give ``inf``."""
    err = mse(a, b, region)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / err)


def _gaussian_taps():
    r = SSIM_WINDOW // 2
    x = np.arange(-r, r + 1, dtype=np.float64)
    g = np.exp(-(x * x) / (2 * SSIM_SIGMA**2))
    return g / g.sum()


def _filter(img, taps):
    out = ndimage.correlate1d(img, taps, axis=0, mode="constant")
    out = ndimage.correlate1d(out, taps, axis=1, mode="constant")
    r = SSIM_WINDOW // 2
    return out[r:-r, r:-r]


def ssim(a, b) -> float:
    """Mean structural similarity over all fully-contained 11x11 Gaussian windows."""
    a, b = _pixels(a), _pixels(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.shape[0] < SSIM_WINDOW or a.shape[1] < SSIM_WINDOW:
        raise ValueError(f"image {a.shape[:2]} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    c1 = (SSIM_K1 * 1.0) ** 2
    c2 = (SSIM_K2 * 1.0) ** 2
    taps = _gaussian_taps()
    scores = []
    for c in range(a.shape[2]):
        x, y = a[..., c], b[..., c]
        mx, my = _filter(x, taps), _filter(y, taps)
        sxx = _filter(x * x, taps) - mx * mx
        syy = _filter(y * y, taps) - my * my
        sxy = _filter(x * y, taps) - mx * my
        num = (2 * mx * my + c1) * (2 * sxy + c2)
        den = (mx * mx + my * my + c1) * (sxx + syy + c2)
        scores.append(np.mean(num / den))
    return float(np.mean(scores))


@dataclass(frozen=True, eq=False)
class RowProfile:
    n: int
    mse: np.ndarray


def row_mse(a, b) -> np.ndarray:
    a, b = _pixels(a), _pixels(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return np.mean((a - b) ** 2, axis=(1, 2))


def row_profile(outputs: GsSequence, gt: GsSequence) -> list[RowProfile]:
    """Per-target, per-row mean squared error (averaged over columns and channels)."""
    if len(outputs) != len(gt):
        raise ValueError(f"sequence lengths differ: {len(outputs)} vs {len(gt)}")
    return [RowProfile(n, row_mse(o, g)) for n, (o, g) in enumerate(zip(outputs.frames, gt.frames))]


def rank_correlation(x, y) -> float:
    """Spearman rank correlation."""
    return float(stats.spearmanr(np.asarray(x), np.asarray(y)).statistic)
