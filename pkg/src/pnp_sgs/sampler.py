"""Plug-and-play split Gibbs sampling with a diffusion denoiser as the z-step."""
from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg

from .core import CirculantOperator, MaskOperator, NoiseModel, adjoint, apply
from .denoiser import DenoiserModel, run_reverse
from .errors import ParameterError, PnPSGSError, ProtocolError, SamplerError, ShapeError, SingularityError
from .noise import estimate_sigma
from .schedule import Schedule, invert_noise_variance

log = logging.getLogger(__name__)

SPECTRAL_FLOOR = 1e-12
CG_TOL = 1e-10


# --------------------------------------------------------------------------- tasks

@dataclass(frozen=True)
class Deblur:
    y: np.ndarray
    op: CirculantOperator
    noise: NoiseModel

    def __post_init__(self):
        if np.shape(self.y)[1:] != tuple(self.op.spatial_shape):
            raise ShapeError("observation does not match the blur operator grid")
        var = self.noise.sigma**2 if self.noise.kind == "scalar" else self.noise.diag_variances
        if np.any(np.asarray(var) <= 0):
            raise ParameterError("deblurring needs strictly positive noise variances")

    @property
    def image_shape(self):
        return (np.shape(self.y)[0], *self.op.spatial_shape)


@dataclass(frozen=True)
class Inpaint:
    y: np.ndarray
    mask: MaskOperator
    sigma: float

    def __post_init__(self):
        if np.shape(self.y)[1:] != (self.mask.n_kept,):
            raise ShapeError("observation length does not match the mask")
        if not self.sigma > 0:
            raise ParameterError("sigma must be positive")

    @property
    def image_shape(self):
        return (np.shape(self.y)[0], *self.mask.spatial_shape)


@dataclass(frozen=True)
class SuperRes:
    y: np.ndarray
    blur: CirculantOperator
    mask: MaskOperator
    sigma: float
    rho1: float
    rho2: float
    ridge: float | None = None

    def __post_init__(self):
        if np.shape(self.y)[1:] != (self.mask.n_kept,):
            raise ShapeError("observation length does not match the mask")
        if tuple(self.blur.spatial_shape) != tuple(self.mask.spatial_shape):
            raise ShapeError("blur and mask act on different grids")
        if min(self.sigma, self.rho1, self.rho2) <= 0:
            raise ParameterError("sigma, rho1 and rho2 must be positive")
        if self.ridge is not None and self.ridge < 0:
            raise ParameterError("ridge must be non-negative")

    @property
    def image_shape(self):
        return (np.shape(self.y)[0], *self.mask.spatial_shape)

    @property
    def ridge_value(self) -> float:
        return 1e-6 / self.rho1**2 if self.ridge is None else self.ridge


@dataclass(frozen=True)
class SamplerConfig:
    rho: float = 0.7
    n_mc: int = 100
    n_bi: int = 20
    early_stop: bool = True
    rescale_input: bool = False
    t_star_cap: int | None = None  # None -> 10% of the schedule length
    seed: int = 0
    ci_level: float = 0.9
    max_chain_bytes: int | None = None  # above this, keep running moments + reservoir only
    reservoir_size: int = 200

    def validate(self, schedule: Schedule):
        if not 0 < self.n_bi < self.n_mc:
            raise ParameterError(f"need 0 < n_bi < n_mc, got n_bi={self.n_bi}, n_mc={self.n_mc}")
        if not self.rho > 0:
            raise ParameterError("rho must be positive")
        if self.t_star_cap is not None and not 0 <= self.t_star_cap <= schedule.T:
            raise ParameterError(f"t_star_cap must lie in 0..{schedule.T}")
        if not 0 < self.ci_level < 1:
            raise ParameterError("ci_level must lie in (0, 1)")

    def cap(self, schedule: Schedule) -> int:
        return int(0.10 * schedule.T) if self.t_star_cap is None else self.t_star_cap


# --------------------------------------------------------------------------- conditionals

def _fft_gaussian(rhs_hat, q_hat, rng, shape):
    """Draw from N(Q^{-1} rhs, Q^{-1}) for a circulant Q with real spectrum ``q_hat``."""
    mean = np.fft.ifft2(rhs_hat / q_hat).real
    eps = np.fft.fft2(rng.standard_normal(shape))
    return mean + np.fft.ifft2(eps / np.sqrt(q_hat)).real


def sample_x_deblur(y, z, op: CirculantOperator, noise: NoiseModel, rho, rng):
    z = np.asarray(z, dtype=np.float64)
    if noise.kind == "scalar":
        s2 = noise.sigma**2
        q_hat = op.power_spectrum / s2 + 1.0 / rho**2
        rhs_hat = np.conj(op.kernel_spectrum) * np.fft.fft2(y) / s2 + np.fft.fft2(z) / rho**2
        return _fft_gaussian(rhs_hat, q_hat, rng, z.shape)
    return _sample_x_deblur_po(y, z, op, noise, rho, rng)


def _sample_x_deblur_po(y, z, op, noise, rho, rng):
    # perturbation-optimization: perturb both quadratic terms, then solve Q x = rhs
    shape = z.shape
    omega = noise.precision(shape)
    y_pert = y + rng.standard_normal(shape) / np.sqrt(omega)
    z_pert = z + rho * rng.standard_normal(shape)
    rhs = adjoint(op, omega * y_pert) + z_pert / rho**2

    def matvec(v):
        v = v.reshape(shape)
        return (adjoint(op, omega * apply(op, v)) + v / rho**2).ravel()

    # circulant preconditioner built from the mean precision
    q_hat = op.power_spectrum * omega.mean() + 1.0 / rho**2

    def precond(v):
        return np.fft.ifft2(np.fft.fft2(v.reshape(shape)) / q_hat).real.ravel()

    n = rhs.size
    A = LinearOperator((n, n), matvec=matvec, dtype=np.float64)
    M = LinearOperator((n, n), matvec=precond, dtype=np.float64)
    x0 = np.fft.ifft2(np.fft.fft2(rhs) / q_hat).real.ravel()
    sol, info = cg(A, rhs.ravel(), x0=x0, rtol=CG_TOL, atol=0.0, maxiter=10 * n, M=M)
    if info != 0:
        raise SamplerError(f"conjugate gradients did not converge within {10 * n} iterations")
    return sol.reshape(shape)


def smw_covariance_diagonal(mask: MaskOperator, sigma, rho) -> np.ndarray:
    """Diagonal of ``rho^2 (I - rho^2/(sigma^2 + rho^2) H^T H)`` as an ``(H, W)`` map."""
    # observed entries written as s^2 r^2 / (s^2 + r^2) to avoid cancellation as sigma -> 0
    observed = sigma**2 * rho**2 / (sigma**2 + rho**2)
    return np.where(mask.kept_map(), observed, float(rho**2))


def inpaint_moments(y, z, mask: MaskOperator, sigma, rho):
    """Mean and diagonal covariance of the masked-likelihood Gaussian conditional."""
    z = np.asarray(z, dtype=np.float64)
    var = smw_covariance_diagonal(mask, sigma, rho)
    kept = mask.kept_map()
    observed_mean = (rho**2 * adjoint(mask, y) + sigma**2 * z) / (sigma**2 + rho**2)
    mean = np.where(kept, observed_mean, z)
    return mean, np.broadcast_to(var, z.shape)


def sample_x_inpaint(y, z, mask: MaskOperator, sigma, rho, rng):
    mean, var = inpaint_moments(y, z, mask, sigma, rho)
    return mean + np.sqrt(var) * rng.standard_normal(mean.shape)


def sample_sr_z1(y, x, mask: MaskOperator, blur: CirculantOperator, sigma, rho1, rng):
    return sample_x_inpaint(y, apply(blur, x), mask, sigma, rho1, rng)


def sample_sr_x(z1, blur: CirculantOperator, rho1, rng, ridge=0.0):
    z1 = np.asarray(z1, dtype=np.float64)
    q_hat = blur.power_spectrum / rho1**2 + ridge
    if q_hat.min() < SPECTRAL_FLOOR:
        raise SingularityError(
            f"x-conditional precision has spectral value {q_hat.min():.3g} below {SPECTRAL_FLOOR:g}; "
            "increase the ridge")
    rhs_hat = np.conj(blur.kernel_spectrum) * np.fft.fft2(z1) / rho1**2
    return _fft_gaussian(rhs_hat, q_hat, rng, z1.shape)


# --------------------------------------------------------------------------- chain

@dataclass
class Chain:
    """Samples of one sampler run.

    In thin mode ``x_samples``/``z_samples`` are None and the post-burn-in
    moments live in ``stats`` while ``reservoir`` holds a uniform subsample of x.
    """

    x_samples: np.ndarray | None
    z_samples: np.ndarray | None
    t_star_trace: np.ndarray
    n_bi: int
    config: dict = field(default_factory=dict)
    stats: dict | None = None
    reservoir: np.ndarray | None = None

    @property
    def n_mc(self) -> int:
        return int(self.t_star_trace.size)

    @property
    def thin(self) -> bool:
        return self.x_samples is None


@dataclass
class PosteriorSummary:
    mmse_x: np.ndarray
    mmse_z: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    pixel_std: np.ndarray
    level: float


class _RunningMoments:
    def __init__(self, shape):
        self.n = 0
        self.mean = np.zeros(shape)
        self.m2 = np.zeros(shape)

    def push(self, v):
        self.n += 1
        d = v - self.mean
        self.mean += d / self.n
        self.m2 += d * (v - self.mean)


def initial_state(task) -> np.ndarray:
    """Starting image: the observation itself, or its scatter with gaps filled by the observed mean."""
    if isinstance(task, Deblur):
        return np.array(task.y, dtype=np.float64)
    y = np.asarray(task.y, dtype=np.float64)
    filled = adjoint(task.mask, y)
    fill = y.mean(axis=1)[:, None, None]
    return np.where(task.mask.kept_map()[None], filled, fill)


def _x_step(task, z, cfg, rng):
    if isinstance(task, Deblur):
        return sample_x_deblur(task.y, z, task.op, task.noise, cfg.rho, rng)
    if isinstance(task, Inpaint):
        return sample_x_inpaint(task.y, z, task.mask, task.sigma, cfg.rho, rng)
    raise TypeError(f"unsupported task {type(task).__name__}")


def run_sampler(task, model: DenoiserModel, s: Schedule, cfg: SamplerConfig, rng=None) -> Chain:
    cfg.validate(s)
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    shape = task.image_shape
    cap = cfg.cap(s)
    n_keep = cfg.n_mc - cfg.n_bi
    thin = cfg.max_chain_bytes is not None and 2 * cfg.n_mc * 8 * math.prod(shape) > cfg.max_chain_bytes

    if thin:
        xs = zs = None
        mx, mz = _RunningMoments(shape), _RunningMoments(shape)
        res_rng = np.random.default_rng([cfg.seed, 1])
        reservoir = np.empty((min(cfg.reservoir_size, n_keep), *shape))
    else:
        xs = np.empty((cfg.n_mc, *shape))
        zs = np.empty((cfg.n_mc, *shape))
    trace = np.empty(cfg.n_mc, dtype=np.int64)

    superres = isinstance(task, SuperRes)
    if superres:
        x = initial_state(task)
    else:
        z = initial_state(task)

    for n in range(1, cfg.n_mc + 1):
        try:
            if superres:
                z1 = sample_sr_z1(task.y, x, task.mask, task.blur, task.sigma, task.rho1, rng)
                x = sample_sr_x(z1, task.blur, task.rho1, rng, task.ridge_value)
                state = z1
            else:
                x = _x_step(task, z, cfg, rng)
                state = x
            sigma_hat = estimate_sigma(state).sigma
            t_star = min(invert_noise_variance(s, sigma_hat**2), cap)
            t_stop = math.ceil(t_star / 2) if (cfg.early_stop and n <= cfg.n_bi) else 0
            u = np.sqrt(1.0 - s.noise_var[t_star]) * state if cfg.rescale_input else state
            z = run_reverse(model, u, t_star, t_stop, rng)
            if not np.all(np.isfinite(z)) or not np.all(np.isfinite(x)):
                raise SamplerError("non-finite values in the chain state")
        except ProtocolError as exc:
            raise ProtocolError(f"iteration {n}: {exc}") from exc
        except SamplerError as exc:
            if exc.iteration is None:
                raise SamplerError(str(exc), n) from exc
            raise
        except (PnPSGSError, ValueError, FloatingPointError) as exc:
            raise SamplerError(f"{type(exc).__name__}: {exc}", n) from exc

        trace[n - 1] = t_star
        if thin:
            if n > cfg.n_bi:
                k = n - cfg.n_bi - 1
                mx.push(x)
                mz.push(z)
                if k < reservoir.shape[0]:
                    reservoir[k] = x
                else:
                    j = res_rng.integers(0, k + 1)
                    if j < reservoir.shape[0]:
                        reservoir[j] = x
        else:
            xs[n - 1] = x
            zs[n - 1] = z
        log.debug("iter %d: sigma_hat=%.4g t*=%d t_stop=%d", n, sigma_hat, t_star, t_stop)

    chain = Chain(xs, zs, trace, cfg.n_bi, dataclasses.asdict(cfg))
    if thin:
        chain.stats = {
            "n": mx.n, "mean_x": mx.mean, "mean_z": mz.mean,
            "var_x": mx.m2 / max(mx.n - 1, 1),
        }
        chain.reservoir = reservoir
    return chain


# --------------------------------------------------------------------------- summaries

def _post_burn_in(chain: Chain, which="x"):
    if chain.n_bi >= chain.n_mc:
        raise ParameterError(f"burn-in {chain.n_bi} leaves no samples out of {chain.n_mc}")
    samples = chain.x_samples if which == "x" else chain.z_samples
    return samples[chain.n_bi:]


def mmse(chain: Chain):
    if chain.n_bi >= chain.n_mc:
        raise ParameterError(f"burn-in {chain.n_bi} leaves no samples out of {chain.n_mc}")
    if chain.thin:
        return chain.stats["mean_x"].copy(), chain.stats["mean_z"].copy()
    return _post_burn_in(chain, "x").mean(axis=0), _post_burn_in(chain, "z").mean(axis=0)


def credible_interval(chain: Chain, level: float = 0.9):
    """Pixel-wise equal-tailed interval from empirical quantiles (linear interpolation)."""
    if not 0 < level < 1:
        raise ParameterError("level must lie in (0, 1)")
    samples = chain.reservoir if chain.thin else _post_burn_in(chain, "x")
    if samples.shape[0] < 2:
        raise ParameterError("credible intervals need at least 2 post-burn-in samples")
    alpha = (1.0 - level) / 2.0
    lower, upper = np.quantile(samples, [alpha, 1.0 - alpha], axis=0, method="linear")
    return lower, upper


def pixel_std(chain: Chain) -> np.ndarray:
    if chain.thin:
        return np.sqrt(chain.stats["var_x"])
    return _post_burn_in(chain, "x").std(axis=0, ddof=1)


def summarize(chain: Chain, level: float = 0.9) -> PosteriorSummary:
    mx, mz = mmse(chain)
    lo, hi = credible_interval(chain, level)
    return PosteriorSummary(mx, mz, lo, hi, pixel_std(chain), level)
