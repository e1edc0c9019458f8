"""MSE, PSNR and SSIM on [0, 1] images, reported in 8-bit units."""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidInputError

PSNR_CAP = 99.0
SSIM_WINDOW = 8
K1, K2 = 0.01, 0.03
DATA_RANGE = 255.0


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidInputError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def mse(a, b):
    """Mean squared error over all pixels and channels, in 8-bit units."""
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2) * DATA_RANGE ** 2)


def psnr(a, b):
    err = mse(a, b)
    if err == 0:
        return PSNR_CAP
    return min(PSNR_CAP, float(10.0 * np.log10(DATA_RANGE ** 2 / err)))


def _ssim_plane(x, y):
    c1 = (K1 * DATA_RANGE) ** 2
    c2 = (K2 * DATA_RANGE) ** 2
    wx = sliding_window_view(x, (SSIM_WINDOW, SSIM_WINDOW))
    wy = sliding_window_view(y, (SSIM_WINDOW, SSIM_WINDOW))
    mx = wx.mean(axis=(-1, -2))
    my = wy.mean(axis=(-1, -2))
    vx = (wx * wx).mean(axis=(-1, -2)) - mx * mx
    vy = (wy * wy).mean(axis=(-1, -2)) - my * my
    cov = (wx * wy).mean(axis=(-1, -2)) - mx * my
    num = (2 * mx * my + c1) * (2 * cov + c2)
    den = (mx ** 2 + my ** 2 + c1) * (vx + vy + c2)
    return float(np.mean(num / den))


def ssim(a, b):
    """Mean SSIM over 8x8 windows (stride 1) and channels, L = 255.

    Windows are uniform and statistics use population variance.
    """
    a, b = _pair(a, b)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if a.shape[0] < SSIM_WINDOW or a.shape[1] < SSIM_WINDOW:
        raise InvalidInputError(f"images smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    a = a * DATA_RANGE
    b = b * DATA_RANGE
    return float(np.mean([_ssim_plane(a[..., c], b[..., c]) for c in range(a.shape[2])]))


def evaluate(a, b):
    return {"mse": mse(a, b), "psnr": psnr(a, b), "ssim": ssim(a, b)}
