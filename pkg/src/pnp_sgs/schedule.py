"""Diffusion variance schedules and the tabulated noise-variance inversion."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError

COSINE_BETA_MAX = 0.999


@dataclass(frozen=True)
class Schedule:
    """Tabulated diffusion schedule.

    ``betas[j - 1]`` is the per-step variance of step ``j`` (1-based), ``noise_var[t]``
    is the cumulative noise variance after ``t`` forward steps, ``noise_var[0] == 0``.
    """

    kind: str
    betas: np.ndarray
    noise_var: np.ndarray
    params: tuple = ()

    def __post_init__(self):
        for a in (self.betas, self.noise_var):
            a.setflags(write=False)

    @property
    def T(self) -> int:
        return self.betas.size

    @property
    def signal_scale(self) -> np.ndarray:
        return np.sqrt(1.0 - self.noise_var)

    @property
    def ident(self) -> str:
        return f"{self.kind}(" + ",".join(f"{k}={v!r}" for k, v in self.params) + ")"

    def beta(self, t: int) -> float:
        if not 1 <= t <= self.T:
            raise ParameterError(f"step {t} outside 1..{self.T}")
        return float(self.betas[t - 1])


def build_linear_schedule(T: int = 1000, b0: float = 1e-4, bT: float = 2e-2) -> Schedule:
    if T < 1 or not (0 < b0 <= bT < 1):
        raise ParameterError(f"need T >= 1 and 0 < b0 <= bT < 1, got T={T}, b0={b0}, bT={bT}")
    if T == 1:
        betas = np.array([b0])
    else:
        betas = b0 + (bT - b0) * np.arange(T) / (T - 1)
        betas[-1] = bT
    nu = np.empty(T + 1)
    nu[0] = 0.0
    nu[1:] = 1.0 - np.cumprod(1.0 - betas)
    return Schedule("linear", betas, nu, (("T", T), ("b0", b0), ("bT", bT)))


def build_cosine_schedule(T: int = 1000, s: float = 0.008) -> Schedule:
    if T < 1 or s <= 0:
        raise ParameterError(f"need T >= 1 and s > 0, got T={T}, s={s}")
    t = np.arange(T + 1)
    gamma = np.cos(0.5 * np.pi * (t / T + s) / (1 + s)) ** 2
    nu = 1.0 - gamma / gamma[0]
    nu[0] = 0.0
    nu[T] = 1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        betas = 1.0 - (1.0 - nu[1:]) / (1.0 - nu[:-1])
    betas = np.clip(np.nan_to_num(betas, nan=COSINE_BETA_MAX), np.finfo(float).tiny, COSINE_BETA_MAX)
    return Schedule("cosine", betas, nu, (("T", T), ("s", s)))


def noise_variance(s: Schedule, t: int) -> float:
    if not 0 <= t <= s.T:
        raise ParameterError(f"step {t} outside 0..{s.T}")
    return float(s.noise_var[t])


def invert_noise_variance(s: Schedule, sigma2: float) -> int:
    """Grid step whose noise variance is closest to ``sigma2`` (ties go to the smaller step)."""
    if sigma2 < 0:
        raise ParameterError("variance must be non-negative")
    nu = s.noise_var
    if sigma2 >= nu[-1]:
        return s.T
    # nu is increasing, so only the two neighbours of the insertion point compete
    hi = int(np.searchsorted(nu, sigma2, side="left"))
    if hi == 0:
        return 0
    lo = hi - 1
    return lo if sigma2 - nu[lo] <= nu[hi] - sigma2 else hi
