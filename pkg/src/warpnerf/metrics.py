"""Image fidelity metrics for held-out view evaluation."""

from __future__ import annotations

import numpy as np
from scipy.signal import convolve2d

PSNR_CAP_DB = 99.0

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

REC601_LUMA = np.array([0.299, 0.587, 0.114])


def psnr(estimate: np.ndarray, reference: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB over the RGB channels.

    Inputs are HxWx3 or HxWx4 images in [0, 1]; alpha is excluded.
    Identical images would be +inf, reported as a 99 dB cap instead.
    """
    a = np.asarray(estimate, dtype=np.float64)
    b = np.asarray(reference, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a[..., :3] - b[..., :3]) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, -10.0 * float(np.log10(mse)))


def _luma(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3:
        return img[..., :3] @ REC601_LUMA
    if img.ndim == 2:
        return img
    raise ValueError(f"expected HxW or HxWxC image, got shape {img.shape}")


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    ax = np.arange(size) - size // 2
    g = np.exp(-(ax**2) / (2.0 * sigma**2))
    k = np.outer(g, g)
    return k / k.sum()


def ssim(estimate: np.ndarray, reference: np.ndarray) -> float:
    """Mean structural similarity over the Rec.601 luma channel.

    Windowed with an 11x11 Gaussian (sigma 1.5), K1=0.01, K2=0.03,
    dynamic range 1.0. Only windows fully inside the image count, so
    both images must be at least 11 pixels on each side.
    """
    x = _luma(estimate)
    y = _luma(reference)
    if x.shape != y.shape:
        raise ValueError(f"image shapes differ: {x.shape} vs {y.shape}")
    if min(x.shape) < SSIM_WINDOW:
        raise ValueError(f"image {x.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")

    kernel = _gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA)
    c1 = SSIM_K1**2
    c2 = SSIM_K2**2

    def blur(img: np.ndarray) -> np.ndarray:
        return convolve2d(img, kernel, mode="valid")

    mu_x = blur(x)
    mu_y = blur(y)
    var_x = blur(x * x) - mu_x**2
    var_y = blur(y * y) - mu_y**2
    cov = blur(x * y) - mu_x * mu_y
    score = ((2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)) / (
        (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
    )
    return float(np.mean(score))
