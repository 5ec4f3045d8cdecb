"""Image quality metrics: PSNR, SSIM, and two relative-error measures.

PSNR uses the standard peak over root-mean-square-error definition
20*log10(max|ref| / sqrt(MSE)); identical images return ``inf`` (callers
cap the value at 99.99 dB when writing CSV rows).  SSIM computes local
statistics with an 11x11 Gaussian window (sigma 1.5) by default; a
uniform window and a global single-window mode for tiny images are also
available.
"""

from dataclasses import dataclass

import numpy as np

from .ops import ContractError, ShapeError

PSNR_CAP = 99.99


@dataclass(frozen=True)
class MetricReport:
    """One evaluation row."""

    psnr: float
    ssim: float
    rmse_image: float
    rmse_multicoil: float | None = None


def psnr(v, v_star):
    """Peak signal-to-noise ratio in dB of ``v`` against the reference ``v_star``."""
    v = np.asarray(v, dtype=np.float64)
    v_star = np.asarray(v_star, dtype=np.float64)
    if v.shape != v_star.shape:
        raise ShapeError(f"shapes differ: {v.shape} vs {v_star.shape}")
    if not v_star.any():
        raise ContractError("reference image is identically zero")
    mse = np.mean((v_star - v) ** 2)
    if mse == 0:
        return np.inf
    return 20.0 * np.log10(np.abs(v_star).max() / np.sqrt(mse))


def _gaussian_window(size, sigma):
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r**2) / (2 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def _window_filter(img, window):
    # 'valid' correlation with a small window, via explicit shifted sums
    wm, wn = window.shape
    m, n = img.shape
    out = np.zeros((m - wm + 1, n - wn + 1))
    for dy in range(wm):
        for dx in range(wn):
            out += window[dy, dx] * img[dy:dy + m - wm + 1, dx:dx + n - wn + 1]
    return out


def ssim(v, v_star, k1=0.01, k2=0.03, window="gaussian", win_size=11, sigma=1.5):
    """Mean structural similarity index over sliding windows.

    ``window`` is 'gaussian' (default), 'uniform', or 'global' (single
    window spanning the image, for tiny test images).  The dynamic range
    L is the largest magnitude of the reference image.
    """
    v = np.asarray(v, dtype=np.float64)
    v_star = np.asarray(v_star, dtype=np.float64)
    if v.shape != v_star.shape:
        raise ShapeError(f"shapes differ: {v.shape} vs {v_star.shape}")
    L = np.abs(v_star).max()
    c1 = (k1 * L) ** 2
    c2 = (k2 * L) ** 2
    if window == "global":
        mu1, mu2 = v.mean(), v_star.mean()
        var1, var2 = v.var(), v_star.var()
        cov = ((v - mu1) * (v_star - mu2)).mean()
        return float(
            (2 * mu1 * mu2 + c1) * (2 * cov + c2)
            / ((mu1**2 + mu2**2 + c1) * (var1 + var2 + c2))
        )
    if window == "gaussian":
        w = _gaussian_window(win_size, sigma)
    elif window == "uniform":
        w = np.full((win_size, win_size), 1.0 / win_size**2)
    else:
        raise ContractError(f"unknown window kind {window!r}")
    if v.shape[0] < win_size or v.shape[1] < win_size:
        raise ShapeError(f"image {v.shape} smaller than {win_size}x{win_size} window")
    mu1 = _window_filter(v, w)
    mu2 = _window_filter(v_star, w)
    s11 = _window_filter(v * v, w) - mu1**2
    s22 = _window_filter(v_star * v_star, w) - mu2**2
    s12 = _window_filter(v * v_star, w) - mu1 * mu2
    index = ((2 * mu1 * mu2 + c1) * (2 * s12 + c2)) / (
        (mu1**2 + mu2**2 + c1) * (s11 + s22 + c2)
    )
    return float(index.mean())


def rmse_image(v, v_star):
    """Relative l2 error ||v_star - v|| / ||v_star||."""
    v = np.asarray(v, dtype=np.float64)
    v_star = np.asarray(v_star, dtype=np.float64)
    if v.shape != v_star.shape:
        raise ShapeError(f"shapes differ: {v.shape} vs {v_star.shape}")
    ref = np.linalg.norm(v_star)
    if ref == 0:
        raise ContractError("reference image is identically zero")
    return float(np.linalg.norm(v_star - v) / ref)


def rmse_multicoil(u, u_star):
    """Joint relative error sqrt(sum_i ||u*_i - u_i||^2 / sum_i ||u*_i||^2)."""
    u = np.asarray(u)
    u_star = np.asarray(u_star)
    if u.shape != u_star.shape:
        raise ShapeError(f"shapes differ: {u.shape} vs {u_star.shape}")
    ref = np.sum(np.abs(u_star) ** 2)
    if ref == 0:
        raise ContractError("reference is identically zero")
    return float(np.sqrt(np.sum(np.abs(u_star - u) ** 2) / ref))
