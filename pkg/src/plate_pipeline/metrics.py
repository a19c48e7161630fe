"""PSNR, global SSIM and windowed mean SSIM (MSSIM) for deblur scoring."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionMismatch, TooSmall
from .imaging import Image

__all__ = ["QualityReport", "psnr", "ssim_global", "mssim", "quality_report",
           "gaussian_window", "C1", "C2"]

PEAK = 255.0
C1 = (0.01 * PEAK) ** 2
C2 = (0.03 * PEAK) ** 2
WINDOW = 11
SIGMA = 1.5


def _check_dims(a: Image, b: Image, channels=True):
    same = a.shape == b.shape if channels else (a.width, a.height) == (b.width, b.height)
    if not same:
        raise DimensionMismatch(f"image shapes differ: {a.shape} vs {b.shape}")


def psnr(reference: Image, test: Image) -> float:
    """Peak signal-to-noise ratio in dB; ``math.inf`` for identical images."""
    _check_dims(reference, test)
    diff = reference.pixels.astype(np.float64) - test.pixels.astype(np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(PEAK * PEAK / mse)


def _ssim_formula(mx, my, vx, vy, cxy):
    return ((2 * mx * my + C1) * (2 * cxy + C2)) / ((mx * mx + my * my + C1) * (vx + vy + C2))


def ssim_global(reference: Image, test: Image) -> float:
    """SSIM evaluated once over the whole grayscale image (one window)."""
    _check_dims(reference, test, channels=False)
    x, y = reference.plane(), test.plane()
    mx, my = x.mean(), y.mean()
    vx, vy = x.var(), y.var()
    cxy = float(np.mean((x - mx) * (y - my)))
    return float(_ssim_formula(mx, my, vx, vy, cxy))


def _gauss_1d(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(r * r) / (2 * sigma * sigma))
    return g / g.sum()


def gaussian_window(size: int = WINDOW, sigma: float = SIGMA) -> np.ndarray:
    g = _gauss_1d(size, sigma)
    return np.outer(g, g)


def _filter_valid(plane: np.ndarray, g1: np.ndarray) -> np.ndarray:
    # separable Gaussian, valid region only
    rows = sliding_window_view(plane, g1.size, axis=1) @ g1
    return sliding_window_view(rows, g1.size, axis=0) @ g1


def ssim_map(reference: Image, test: Image) -> np.ndarray:
    _check_dims(reference, test, channels=False)
    if min(reference.width, reference.height) < WINDOW:
        raise TooSmall(f"MSSIM needs both dimensions >= {WINDOW}")
    x, y = reference.plane(), test.plane()
    g1 = _gauss_1d(WINDOW, SIGMA)
    mx, my = _filter_valid(x, g1), _filter_valid(y, g1)
    vx = _filter_valid(x * x, g1) - mx * mx
    vy = _filter_valid(y * y, g1) - my * my
    cxy = _filter_valid(x * y, g1) - mx * my
    return _ssim_formula(mx, my, vx, vy, cxy)


def mssim(reference: Image, test: Image) -> float:
    """Mean of the local SSIM map (11x11 Gaussian window, sigma 1.5, valid region)."""
    return float(np.clip(ssim_map(reference, test).mean(), -1.0, 1.0))


@dataclass(frozen=True)
class QualityReport:
    psnr_db: float
    ssim: float
    mssim: float

    def to_dict(self):
        return {"psnr_db": "inf" if math.isinf(self.psnr_db) else self.psnr_db,
                "ssim": self.ssim, "mssim": self.mssim}


def quality_report(reference: Image, test: Image) -> QualityReport:
    return QualityReport(psnr(reference, test), ssim_global(reference, test), mssim(reference, test))
