"""Structural similarity with a uniform square window.

Means, variances, and covariance are taken over every full window
position (uniform 8x8 window by default, valid region only), per channel,
then the SSIM map is averaged. Data range is the plain-image range [0,1],
so the stabilizers are C1 = (0.01)^2 and C2 = (0.03)^2.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import uniform_filter

from .errors import GeometryError

WINDOW = 8
C1 = (0.01) ** 2
C2 = (0.03) ** 2


def _valid(arr: np.ndarray, win: int) -> np.ndarray:
    """Crop a same-size filter output to window positions fully inside.

    scipy's uniform_filter centers a window of size s at offset s//2, so
    the fully-interior outputs start there (verified for even and odd s).
    """
    lo = win // 2
    h, w = arr.shape
    return arr[lo : lo + (h - win + 1), lo : lo + (w - win + 1)]


def ssim(a: np.ndarray, b: np.ndarray, window: int = WINDOW) -> float:
    """Mean SSIM of two HxWxC (or HxW) arrays in [0,1]-range units."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise GeometryError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[:, :, None]
        b = b[:, :, None]
    if a.ndim != 3:
        raise GeometryError(f"expected HxW or HxWxC arrays, got ndim={a.ndim}")
    if a.shape[0] < window or a.shape[1] < window:
        raise GeometryError(
            f"image {a.shape[0]}x{a.shape[1]} smaller than {window}x{window} window"
        )
    maps = []
    for c in range(a.shape[2]):
        x, y = a[:, :, c], b[:, :, c]
        mx = _valid(uniform_filter(x, window), window)
        my = _valid(uniform_filter(y, window), window)
        mxx = _valid(uniform_filter(x * x, window), window)
        myy = _valid(uniform_filter(y * y, window), window)
        mxy = _valid(uniform_filter(x * y, window), window)
        vx = mxx - mx * mx
        vy = myy - my * my
        cov = mxy - mx * my
        num = (2.0 * mx * my + C1) * (2.0 * cov + C2)
        den = (mx * mx + my * my + C1) * (vx + vy + C2)
        maps.append(num / den)
    return float(np.mean(maps))
