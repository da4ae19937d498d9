"""PSNR and SSIM on [0, 1]-clamped images."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError

SSIM_WINDOW = 7
K1, K2 = 0.01, 0.03


@dataclass
class MetricReport:
    psnr: float
    ssim: float

    def to_json(self):
        return {"psnr": format_psnr(self.psnr), "ssim": self.ssim}


def format_psnr(value: float):
    return "inf" if np.isinf(value) else float(value)


def _pair(ref, test, clamp):
    ref = np.asarray(ref, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    if ref.shape != test.shape:
        raise ShapeError(f"shape mismatch: {ref.shape} vs {test.shape}")
    if clamp:
        ref, test = np.clip(ref, 0.0, 1.0), np.clip(test, 0.0, 1.0)
    return ref, test


def psnr(ref, test, peak: float = 1.0, clamp: bool = True) -> float:
    if peak <= 0:
        raise ValueError("peak must be positive")
    ref, test = _pair(ref, test, clamp)
    mse = np.mean((ref - test) ** 2)
    if mse == 0:
        return float("inf")
    return float(10.0 * np.log10(peak**2 / mse))


def _ssim_channel(a, b, c1, c2):
    wa = sliding_window_view(a, (SSIM_WINDOW, SSIM_WINDOW))
    wb = sliding_window_view(b, (SSIM_WINDOW, SSIM_WINDOW))
    mu_a = wa.mean(axis=(-2, -1))
    mu_b = wb.mean(axis=(-2, -1))
    da = wa - mu_a[..., None, None]
    db = wb - mu_b[..., None, None]
    var_a = (da**2).mean(axis=(-2, -1))
    var_b = (db**2).mean(axis=(-2, -1))
    cov = (da * db).mean(axis=(-2, -1))
    s = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2))
    return s.mean()


def ssim(ref, test, peak: float = 1.0, clamp: bool = True) -> float:
    """Mean SSIM over all fully-contained 7x7 uniform windows, averaged over channels."""
    ref, test = _pair(ref, test, clamp)
    if ref.ndim == 2:
        ref, test = ref[None], test[None]
    if min(ref.shape[-2:]) < SSIM_WINDOW:
        raise ShapeError(f"SSIM needs sides >= {SSIM_WINDOW}, got {ref.shape[-2:]}")
    c1, c2 = (K1 * peak) ** 2, (K2 * peak) ** 2
    return float(np.mean([_ssim_channel(a, b, c1, c2) for a, b in zip(ref, test)]))


def evaluate(ref, test, peak: float = 1.0) -> MetricReport:
    return MetricReport(psnr(ref, test, peak), ssim(ref, test, peak))
