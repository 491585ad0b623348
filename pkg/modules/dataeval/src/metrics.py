"""Luminance PSNR and SSIM."""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .image import ImageError, rgb_to_y

WINDOW = 11
SIGMA = 1.5
K1 = 0.01
K2 = 0.03
PEAK = 255.0


def _shave(y: np.ndarray, shave: int) -> np.ndarray:
    if shave < 0:
        raise ImageError(f"Shave must be nonnegative, got {shave}")
    if shave == 0:
        return y
    if min(y.shape) <= 2 * shave:
        raise ImageError(f"Shaving {shave} pixels leaves nothing of a {y.shape} image")
    return y[shave:-shave, shave:-shave]


def _pair(a: np.ndarray, b: np.ndarray, shave: int) -> tuple[np.ndarray, np.ndarray]:
    if a.shape != b.shape:
        raise ImageError(f"Image sizes differ: {a.shape} vs {b.shape}")
    ya = rgb_to_y(a) if a.ndim == 3 else a.astype(np.float64)
    yb = rgb_to_y(b) if b.ndim == 3 else b.astype(np.float64)
    return _shave(ya, shave), _shave(yb, shave)


def psnr_y(ya: np.ndarray, yb: np.ndarray) -> float:
    """PSNR between two luma planes on the ``0..255`` scale; ``inf`` when identical."""
    if ya.shape != yb.shape:
        raise ImageError(f"Luma sizes differ: {ya.shape} vs {yb.shape}")
    mse = float(np.mean((ya.astype(np.float64) - yb.astype(np.float64)) ** 2))
    if mse == 0:
        return float("inf")
    return 10.0 * np.log10(PEAK**2 / mse)


def psnr(a: np.ndarray, b: np.ndarray, shave: int = 0) -> float:
    """Y-channel PSNR in dB of two RGB images (or two luma planes)."""
    return psnr_y(*_pair(a, b, shave))


def gaussian_window(size: int = WINDOW, sigma: float = SIGMA) -> np.ndarray:
    """Normalized 1-D Gaussian; the 2-D window is its outer product."""
    coords = np.arange(size) - (size - 1) / 2
    g = np.exp(-(coords**2) / (2 * sigma**2))
    return g / g.sum()


def _filter(y: np.ndarray, g: np.ndarray) -> np.ndarray:
    rows = sliding_window_view(y, g.size, axis=0) @ g
    return sliding_window_view(rows, g.size, axis=1) @ g


def ssim_y(ya: np.ndarray, yb: np.ndarray) -> float:
    """Mean SSIM over every valid window position of two luma planes."""
    if ya.shape != yb.shape:
        raise ImageError(f"Luma sizes differ: {ya.shape} vs {yb.shape}")
    if min(ya.shape) < WINDOW:
        raise ImageError(f"SSIM needs at least {WINDOW}x{WINDOW} pixels, got {ya.shape}")
    g = gaussian_window()
    c1 = (K1 * PEAK) ** 2
    c2 = (K2 * PEAK) ** 2
    mu_a = _filter(ya, g)
    mu_b = _filter(yb, g)
    var_a = _filter(ya * ya, g) - mu_a * mu_a
    var_b = _filter(yb * yb, g) - mu_b * mu_b
    cov = _filter(ya * yb, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ssim(a: np.ndarray, b: np.ndarray, shave: int = 0) -> float:
    """Y-channel SSIM of two RGB images (or two luma planes), 11x11 Gaussian window."""
    return ssim_y(*_pair(a, b, shave))
