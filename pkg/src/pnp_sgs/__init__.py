"""Plug-and-play split Gibbs sampling with diffusion denoisers."""
from .core import (ComposedOperator, ConvolutionKernel, CirculantOperator, MaskOperator,
                   NoiseModel, adjoint, apply, circulant_from_kernel, degrade, gaussian_kernel)
from .denoiser import (DenoiserModel, ExternalDenoiser, GaussianConjugateDenoiser,
                       forward_diffuse, reverse_step, run_reverse)
from .metrics import psnr, ssim
from .noise import NoiseEstimate, estimate_sigma
from .sampler import (Chain, Deblur, Inpaint, PosteriorSummary, SamplerConfig, SuperRes,
                      credible_interval, mmse, run_sampler, summarize)
from .schedule import (Schedule, build_cosine_schedule, build_linear_schedule,
                       invert_noise_variance, noise_variance)

__version__ = "0.1.0"
