"""Images, linear forward operators and synthetic degradation.

Images are numpy arrays laid out planar as ``(channels, height, width)``.
Mask measurements are ``(channels, kept)`` arrays.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError, ShapeError


def as_image(x) -> np.ndarray:
    """Return ``x`` as a float64 planar image, promoting 2-D arrays to one channel."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3:
        raise ShapeError(f"expected (C, H, W) image, got shape {x.shape}")
    if x.shape[0] not in (1, 3):
        raise ShapeError(f"images have 1 or 3 channels, got {x.shape[0]}")
    if not np.all(np.isfinite(x)):
        raise ValueError("image contains non-finite values")
    return x


# --------------------------------------------------------------------------- kernels

@dataclass(frozen=True)
class ConvolutionKernel:
    taps: np.ndarray

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=np.float64)
        if taps.ndim != 2 or taps.shape[0] % 2 == 0 or taps.shape[1] % 2 == 0:
            raise ParameterError(f"kernel sides must be odd, got {taps.shape}")
        if not np.all(np.isfinite(taps)):
            raise ParameterError("kernel taps must be finite")
        object.__setattr__(self, "taps", taps)

    @property
    def shape(self):
        return self.taps.shape


def gaussian_kernel(size: int, std: float) -> ConvolutionKernel:
    """Square Gaussian blur kernel, truncated to ``size`` taps and renormalized to sum 1."""
    if size < 1 or size % 2 == 0:
        raise ParameterError(f"kernel size must be a positive odd integer, got {size}")
    if std <= 0:
        raise ParameterError(f"kernel std must be positive, got {std}")
    r = np.arange(size) - size // 2
    g = np.exp(-0.5 * (r / std) ** 2)
    taps = np.outer(g, g)
    return ConvolutionKernel(taps / taps.sum())


def uniform_kernel(size: int) -> ConvolutionKernel:
    return ConvolutionKernel(np.full((size, size), 1.0 / size**2))


# --------------------------------------------------------------------------- operators

@dataclass(frozen=True)
class CirculantOperator:
    """Cyclic 2-D convolution, stored as the DFT of the wrapped kernel."""

    kernel_spectrum: np.ndarray
    spatial_shape: tuple

    @property
    def input_shape(self):
        return self.spatial_shape

    @property
    def output_shape(self):
        return self.spatial_shape

    @property
    def power_spectrum(self) -> np.ndarray:
        return np.abs(self.kernel_spectrum) ** 2


def circulant_from_kernel(kernel: ConvolutionKernel, shape) -> CirculantOperator:
    h, w = (int(s) for s in shape)
    kh, kw = kernel.shape
    if kh > h or kw > w:
        raise ShapeError(f"kernel {kernel.shape} larger than image {(h, w)}")
    padded = np.zeros((h, w))
    padded[:kh, :kw] = kernel.taps
    # move the kernel centre to index (0, 0)
    padded = np.roll(padded, (-(kh // 2), -(kw // 2)), axis=(0, 1))
    spectrum = np.fft.fft2(padded)
    spectrum.setflags(write=False)
    return CirculantOperator(spectrum, (h, w))


@dataclass(frozen=True)
class MaskOperator:
    """Pixel subsampling; the same pixels are kept in every channel."""

    kept_indices: np.ndarray
    spatial_shape: tuple
    _kept_bool: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        idx = np.asarray(self.kept_indices, dtype=np.int64).ravel()
        shape = tuple(int(s) for s in self.spatial_shape)
        total = shape[0] * shape[1]
        if idx.size and (idx[0] < 0 or idx[-1] >= total):
            raise ParameterError("mask indices out of range")
        if np.any(np.diff(idx) <= 0):
            raise ParameterError("mask indices must be strictly increasing")
        kept = np.zeros(total, dtype=bool)
        kept[idx] = True
        idx.setflags(write=False)
        kept.setflags(write=False)
        object.__setattr__(self, "kept_indices", idx)
        object.__setattr__(self, "spatial_shape", shape)
        object.__setattr__(self, "_kept_bool", kept)

    @property
    def total_pixels(self) -> int:
        return self.spatial_shape[0] * self.spatial_shape[1]

    @property
    def n_kept(self) -> int:
        return self.kept_indices.size

    @property
    def input_shape(self):
        return self.spatial_shape

    @property
    def output_shape(self):
        return (self.n_kept,)

    def kept_map(self) -> np.ndarray:
        """Boolean ``(H, W)`` map of observed pixels (the diagonal of HᵀH)."""
        return self._kept_bool.reshape(self.spatial_shape)


def random_mask(shape, fraction_missing: float, rng) -> MaskOperator:
    """Drop ``round(fraction_missing * N)`` pixels chosen uniformly without replacement."""
    if not 0.0 <= fraction_missing < 1.0:
        raise ParameterError(f"missing fraction must be in [0, 1), got {fraction_missing}")
    h, w = shape
    n = h * w
    n_drop = int(round(fraction_missing * n))
    dropped = rng.choice(n, size=n_drop, replace=False)
    keep = np.ones(n, dtype=bool)
    keep[dropped] = False
    return MaskOperator(np.flatnonzero(keep), (h, w))


def stride_mask(shape, factor: int) -> MaskOperator:
    """Keep one pixel per ``factor x factor`` block (the top-left one)."""
    h, w = shape
    rows, cols = np.meshgrid(np.arange(0, h, factor), np.arange(0, w, factor), indexing="ij")
    return MaskOperator(np.sort((rows * w + cols).ravel()), (h, w))


@dataclass(frozen=True)
class ComposedOperator:
    """``S @ B``: blur followed by subsampling."""

    mask: MaskOperator
    blur: CirculantOperator

    def __post_init__(self):
        if tuple(self.mask.spatial_shape) != tuple(self.blur.spatial_shape):
            raise ShapeError("mask and blur act on different grids")

    @property
    def input_shape(self):
        return self.blur.spatial_shape

    @property
    def output_shape(self):
        return self.mask.output_shape


def _check_image(op, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[1:] != tuple(op.input_shape):
        raise ShapeError(f"operator expects (C, {op.input_shape[0]}, {op.input_shape[1]}), got {x.shape}")
    return x


def _check_measurement(op, v):
    v = np.asarray(v, dtype=np.float64)
    if isinstance(op, CirculantOperator):
        ok = v.ndim == 3 and v.shape[1:] == tuple(op.spatial_shape)
    else:
        ok = v.ndim == 2 and v.shape[1:] == tuple(op.output_shape)
    if not ok:
        raise ShapeError(f"measurement shape {v.shape} does not match operator output {op.output_shape}")
    return v


def apply(op, x: np.ndarray) -> np.ndarray:
    x = _check_image(op, x)
    if isinstance(op, CirculantOperator):
        return np.real(np.fft.ifft2(op.kernel_spectrum * np.fft.fft2(x)))
    if isinstance(op, MaskOperator):
        return x.reshape(x.shape[0], -1)[:, op.kept_indices]
    if isinstance(op, ComposedOperator):
        return apply(op.mask, apply(op.blur, x))
    raise TypeError(f"unsupported operator {type(op).__name__}")


def adjoint(op, v: np.ndarray) -> np.ndarray:
    v = _check_measurement(op, v)
    if isinstance(op, CirculantOperator):
        return np.real(np.fft.ifft2(np.conj(op.kernel_spectrum) * np.fft.fft2(v)))
    if isinstance(op, MaskOperator):
        out = np.zeros((v.shape[0], op.total_pixels))
        out[:, op.kept_indices] = v
        return out.reshape((v.shape[0], *op.spatial_shape))
    if isinstance(op, ComposedOperator):
        return adjoint(op.blur, adjoint(op.mask, v))
    raise TypeError(f"unsupported operator {type(op).__name__}")


# --------------------------------------------------------------------------- noise

@dataclass(frozen=True)
class NoiseModel:
    """White (``scalar``) or spatially-variant (``diagonal``) Gaussian noise."""

    kind: str = "scalar"
    sigma: float = 0.0
    diag_variances: np.ndarray | None = None

    def __post_init__(self):
        if self.kind == "scalar":
            if self.sigma < 0:
                raise ParameterError("noise sigma must be non-negative")
        elif self.kind == "diagonal":
            var = np.asarray(self.diag_variances, dtype=np.float64)
            if var.size == 0 or np.any(var < 0) or not np.all(np.isfinite(var)):
                raise ParameterError("diagonal noise variances must be finite and non-negative")
            object.__setattr__(self, "diag_variances", var)
        else:
            raise ParameterError(f"unknown noise kind {self.kind!r}")

    @classmethod
    def scalar(cls, sigma):
        return cls("scalar", float(sigma))

    @classmethod
    def diagonal(cls, variances):
        return cls("diagonal", 0.0, np.asarray(variances, dtype=np.float64))

    def std(self, shape) -> np.ndarray | float:
        if self.kind == "scalar":
            return self.sigma
        return np.broadcast_to(np.sqrt(self.diag_variances), shape)

    def precision(self, shape) -> np.ndarray:
        """Diagonal of Ω broadcast to ``shape``; requires strictly positive variances."""
        var = self.sigma**2 if self.kind == "scalar" else self.diag_variances
        var = np.broadcast_to(var, shape)
        if np.any(var <= 0):
            raise ParameterError("noise precision needs strictly positive variances")
        return 1.0 / var


def degrade(x: np.ndarray, op, noise: NoiseModel, rng) -> np.ndarray:
    """Simulate ``y = Hx + n``."""
    hx = apply(op, x)
    if noise.kind == "scalar" and noise.sigma == 0:
        return hx
    return hx + noise.std(hx.shape) * rng.standard_normal(hx.shape)
