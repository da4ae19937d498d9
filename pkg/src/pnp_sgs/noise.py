"""Robust wavelet (MAD) estimate of additive white Gaussian noise level."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EstimationError

# Daubechies-8 decomposition low-pass filter (16 taps)
DB8_LO = np.array([
    -0.00011747678412476953, 0.0006754494064505693, -0.00039174037337694705,
    -0.004870352993451574, 0.008746094047405777, 0.013981027917398282,
    -0.044088253930794755, -0.017369301001807547, 0.12874742662047847,
    0.0004724845739132828, -0.2840155429615469, -0.015829105256349306,
    0.5853546836542067, 0.6756307362972898, 0.31287159091429995,
    0.05441584224310401,
])
HAAR_LO = np.array([1.0, 1.0]) / np.sqrt(2.0)

# median(|N(0, 1)|)
MAD_TO_STD = 0.6744897501960817


def quadrature_mirror(lo: np.ndarray) -> np.ndarray:
    """High-pass filter of an orthonormal wavelet from its low-pass filter."""
    hi = lo[::-1].copy()
    hi[::2] *= -1
    return hi


@dataclass(frozen=True)
class NoiseEstimate:
    sigma: float
    per_channel: tuple = ()


def _highpass_decimate(a: np.ndarray, hi: np.ndarray, axis: int) -> np.ndarray:
    # periodized single-level analysis: out[k] = sum_j hi[j] a[(2k + L/2 - j) mod n]
    n = a.shape[axis]
    shift = hi.size // 2
    out = 0.0
    for j, c in enumerate(hi):
        idx = (2 * np.arange(n // 2) + shift - j) % n
        out = out + c * np.take(a, idx, axis=axis)
    return out


def diagonal_details(channel: np.ndarray, wavelet: str = "db8") -> np.ndarray:
    """Finest-scale HH subband of a periodized orthonormal DWT of one channel."""
    h, w = channel.shape
    if h < 2 or w < 2:
        raise EstimationError(f"noise estimation needs sides >= 2, got {channel.shape}")
    # odd sides: replicate the last row/column (symmetric edge padding by one sample)
    if h % 2 or w % 2:
        channel = np.pad(channel, ((0, h % 2), (0, w % 2)), mode="symmetric")
    lo = DB8_LO if wavelet == "db8" else HAAR_LO
    if wavelet == "db8" and min(channel.shape) < lo.size:
        lo = HAAR_LO
    hi = quadrature_mirror(lo)
    return _highpass_decimate(_highpass_decimate(channel, hi, 0), hi, 1)


def estimate_sigma(x: np.ndarray, wavelet: str = "db8") -> NoiseEstimate:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    per = tuple(float(np.median(np.abs(diagonal_details(c, wavelet)))) / MAD_TO_STD for c in x)
    return NoiseEstimate(float(np.mean(per)), per)
