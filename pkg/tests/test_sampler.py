import math

import numpy as np
import pytest

from pnp_sgs.core import (ConvolutionKernel, MaskOperator, NoiseModel, adjoint, apply,
                          circulant_from_kernel, gaussian_kernel, random_mask, stride_mask)
from pnp_sgs.denoiser import DenoiserModel, GaussianConjugateDenoiser
from pnp_sgs.errors import ParameterError, SamplerError, SingularityError
from pnp_sgs.sampler import (Chain, Deblur, Inpaint, SamplerConfig, SuperRes, credible_interval,
                             initial_state, inpaint_moments, mmse, pixel_std, run_sampler,
                             sample_sr_x, sample_sr_z1, sample_x_deblur, sample_x_inpaint,
                             smw_covariance_diagonal, summarize)
from pnp_sgs.schedule import build_linear_schedule

from conftest import dense_circulant, dense_mask, gaussian_moments_se

SCHED = build_linear_schedule()
DRAWS = 20_000


def dense_gaussian(Q, b):
    cov = np.linalg.inv(Q)
    return cov @ b, np.diag(cov)


def test_deblur_identity_operator_formula(rng):
    op = circulant_from_kernel(ConvolutionKernel([[1.0]]), (6, 6))
    y, z = rng.random((2, 1, 6, 6))
    sigma, rho = 0.3, 0.7
    # zero-variance draw check: average many draws via batching channels
    zb = np.broadcast_to(z, (DRAWS, 6, 6))
    yb = np.broadcast_to(y, (DRAWS, 6, 6))
    draws = sample_x_deblur(yb, zb, op, NoiseModel.scalar(sigma), rho, rng)
    mean = (y / sigma**2 + z / rho**2) / (1 / sigma**2 + 1 / rho**2)
    var = 1 / (1 / sigma**2 + 1 / rho**2)
    zm, zv = gaussian_moments_se(draws, mean[0], var)
    assert np.abs(zm).max() <= 4 and np.abs(zv).max() <= 4


def test_deblur_exact_mean_via_zero_noise_rng(rng):
    class Zero:
        def standard_normal(self, shape):
            return np.zeros(shape)
    op = circulant_from_kernel(ConvolutionKernel([[1.0]]), (4, 4))
    y, z = rng.random((2, 1, 4, 4))
    sigma, rho = 0.3, 0.7
    x = sample_x_deblur(y, z, op, NoiseModel.scalar(sigma), rho, Zero())
    expected = (y / sigma**2 + z / rho**2) / (1 / sigma**2 + 1 / rho**2)
    assert np.abs(x - expected).max() <= 1e-10


def test_deblur_huge_noise_returns_prior(rng):
    op = circulant_from_kernel(gaussian_kernel(3, 1.0), (8, 8))
    y, z = rng.random((2, 1, 8, 8))
    draws = sample_x_deblur(np.broadcast_to(y, (DRAWS, 8, 8)), np.broadcast_to(z, (DRAWS, 8, 8)),
                            op, NoiseModel.scalar(1e8), 0.5, rng)
    zm, zv = gaussian_moments_se(draws, z[0], 0.25)
    assert np.abs(zm).max() <= 4 and np.abs(zv).max() <= 4


def _deblur_case(rng):
    taps = rng.random((3, 3))
    op = circulant_from_kernel(ConvolutionKernel(taps), (8, 8))
    return op, dense_circulant(taps, (8, 8))


def test_deblur_scalar_matches_dense(rng):
    op, Hd = _deblur_case(rng)
    y, z = rng.random((2, 1, 8, 8))
    sigma, rho = 0.2, 0.7
    mean, var = dense_gaussian(Hd.T @ Hd / sigma**2 + np.eye(64) / rho**2,
                               Hd.T @ y.ravel() / sigma**2 + z.ravel() / rho**2)
    draws = sample_x_deblur(np.broadcast_to(y, (DRAWS, 8, 8)), np.broadcast_to(z, (DRAWS, 8, 8)),
                            op, NoiseModel.scalar(sigma), rho, rng)
    zm, zv = gaussian_moments_se(draws.reshape(DRAWS, -1), mean, var)
    assert np.abs(zm).max() <= 4 and np.abs(zv).max() <= 4


def test_deblur_diagonal_matches_dense(rng):
    op, Hd = _deblur_case(rng)
    y, z = rng.random((2, 1, 8, 8))
    variances = rng.uniform(0.01, 0.09, (1, 8, 8))
    rho = 0.7
    Om = np.diag(1 / variances.ravel())
    mean, var = dense_gaussian(Hd.T @ Om @ Hd + np.eye(64) / rho**2,
                               Hd.T @ Om @ y.ravel() + z.ravel() / rho**2)
    draws = sample_x_deblur(np.broadcast_to(y, (DRAWS, 8, 8)), np.broadcast_to(z, (DRAWS, 8, 8)),
                            op, NoiseModel.diagonal(variances), rho, rng)
    zm, zv = gaussian_moments_se(draws.reshape(DRAWS, -1), mean, var)
    assert np.abs(zm).max() <= 4 and np.abs(zv).max() <= 4


def test_inpaint_two_by_two_dense():
    mask = MaskOperator([0, 3], (2, 2))
    Hd = dense_mask(mask.kept_indices, 4)
    cov = np.linalg.inv(Hd.T @ Hd + np.eye(4))
    np.testing.assert_allclose(smw_covariance_diagonal(mask, 1.0, 1.0).ravel(), np.diag(cov), atol=1e-12)
    np.testing.assert_allclose(np.diag(cov), [0.5, 1.0, 1.0, 0.5], atol=1e-12)
    np.testing.assert_allclose(cov - np.diag(np.diag(cov)), 0, atol=1e-12)


def test_inpaint_mean_matches_dense(rng):
    mask = random_mask((5, 5), 0.6, rng)
    Hd = dense_mask(mask.kept_indices, 25)
    sigma, rho = 0.3, 0.8
    y = rng.random((1, mask.n_kept))
    z = rng.random((1, 5, 5))
    mean_ref, var_ref = dense_gaussian(Hd.T @ Hd / sigma**2 + np.eye(25) / rho**2,
                                       Hd.T @ y[0] / sigma**2 + z.ravel() / rho**2)
    mean, var = inpaint_moments(y, z, mask, sigma, rho)
    np.testing.assert_allclose(mean.ravel(), mean_ref, atol=1e-12)
    np.testing.assert_allclose(var.ravel(), var_ref, atol=1e-12)
    unobserved = ~mask.kept_map().ravel()
    np.testing.assert_array_equal(mean.ravel()[unobserved], z.ravel()[unobserved])


def test_inpaint_exact_data_limit(rng):
    mask = random_mask((4, 4), 0.5, rng)
    y = rng.random((1, mask.n_kept))
    mean, var = inpaint_moments(y, rng.random((1, 4, 4)), mask, 1e-9, 1.0)
    np.testing.assert_allclose(apply(mask, mean), y, atol=1e-12)


def test_inpaint_draws_match_dense(rng):
    mask = random_mask((8, 8), 0.7, rng)
    sigma, rho = 0.1, 0.7
    y = rng.random((1, mask.n_kept))
    z = rng.random((1, 8, 8))
    Hd = dense_mask(mask.kept_indices, 64)
    mean, var = dense_gaussian(Hd.T @ Hd / sigma**2 + np.eye(64) / rho**2,
                               Hd.T @ y[0] / sigma**2 + z.ravel() / rho**2)
    draws = sample_x_inpaint(np.broadcast_to(y, (DRAWS, mask.n_kept)), np.broadcast_to(z, (DRAWS, 8, 8)),
                             mask, sigma, rho, rng)
    zm, zv = gaussian_moments_se(draws.reshape(DRAWS, -1), mean, var)
    assert np.abs(zm).max() <= 4 and np.abs(zv).max() <= 4


def test_sr_z1_cases(rng):
    blur = circulant_from_kernel(gaussian_kernel(3, 1.0), (4, 4))
    x = rng.random((1, 4, 4))
    bx = apply(blur, x)
    full = MaskOperator(np.arange(16), (4, 4))
    y = rng.random((1, 16))
    sigma, rho1 = 0.2, 0.5
    m, v = inpaint_moments(y, bx, full, sigma, rho1)
    np.testing.assert_allclose(m[0].ravel(), (y[0] / sigma**2 + bx.ravel() / rho1**2) / (1 / sigma**2 + 1 / rho1**2))
    half = MaskOperator([0, 5], (4, 4))
    m, v = inpaint_moments(y[:, :2], bx, half, 0.3, 0.3)
    assert m[0, 0, 0] == pytest.approx((y[0, 0] + bx[0, 0, 0]) / 2)
    assert m[0, 0, 1] == bx[0, 0, 1] and v[0, 0, 1] == pytest.approx(0.09)


def test_sr_z1_draws_match_dense(rng):
    shape = (8, 8)
    taps = gaussian_kernel(3, 1.0).taps
    blur = circulant_from_kernel(ConvolutionKernel(taps), shape)
    mask = stride_mask(shape, 2)
    sigma, rho1 = 0.1, 0.4
    x = rng.random((1, *shape))
    y = rng.random((1, mask.n_kept))
    S, B = dense_mask(mask.kept_indices, 64), dense_circulant(taps, shape)
    mean, var = dense_gaussian(S.T @ S / sigma**2 + np.eye(64) / rho1**2,
                               S.T @ y[0] / sigma**2 + B @ x.ravel() / rho1**2)
    draws = sample_sr_z1(np.broadcast_to(y, (DRAWS, mask.n_kept)), np.broadcast_to(x, (DRAWS, *shape)),
                         mask, blur, sigma, rho1, rng)
    zm, zv = gaussian_moments_se(draws.reshape(DRAWS, -1), mean, var)
    assert np.abs(zm).max() <= 4 and np.abs(zv).max() <= 4


def test_sr_x_identity_blur(rng):
    blur = circulant_from_kernel(ConvolutionKernel([[1.0]]), (6, 6))
    z1 = rng.random((1, 6, 6))
    draws = sample_sr_x(np.broadcast_to(z1, (DRAWS, 6, 6)), blur, 0.3, rng, ridge=0.0)
    zm, zv = gaussian_moments_se(draws, z1[0], 0.09)
    assert np.abs(zm).max() <= 4 and np.abs(zv).max() <= 4


def test_sr_x_matches_dense(rng):
    taps = gaussian_kernel(3, 1.0).taps
    blur = circulant_from_kernel(ConvolutionKernel(taps), (8, 8))
    B = dense_circulant(taps, (8, 8))
    rho1 = 0.5
    z1 = rng.random((1, 8, 8))
    mean, var = dense_gaussian(B.T @ B / rho1**2, B.T @ z1.ravel() / rho1**2)
    draws = sample_sr_x(np.broadcast_to(z1, (DRAWS, 8, 8)), blur, rho1, rng, ridge=0.0)
    zm, zv = gaussian_moments_se(draws.reshape(DRAWS, -1), mean, var)
    assert np.abs(zm).max() <= 4 and np.abs(zv).max() <= 4


def test_sr_x_singular_spectrum(rng):
    # [0.5, 0.5] cannot be odd; [0.5, 0, 0.5] has a zero at frequency 1/4 on a length-4 axis
    blur = circulant_from_kernel(ConvolutionKernel([[0.5, 0.0, 0.5]]), (1, 4))
    assert np.abs(blur.kernel_spectrum).min() < 1e-15
    with pytest.raises(SingularityError):
        sample_sr_x(rng.random((1, 1, 4)), blur, 1.0, rng, ridge=0.0)
    sample_sr_x(rng.random((1, 1, 4)), blur, 1.0, rng, ridge=1e-6)


@pytest.mark.parametrize("trial", range(5))
def test_smw_identity(trial):
    r = np.random.default_rng(trial)
    n_side = r.integers(2, 9)
    mask = random_mask((n_side, n_side), float(r.uniform(0, 0.95)), r)
    sigma, rho = r.uniform(0.01, 2, 2)
    Hd = dense_mask(mask.kept_indices, n_side**2)
    direct = np.linalg.inv(Hd.T @ Hd / sigma**2 + np.eye(n_side**2) / rho**2)
    closed = np.diag(smw_covariance_diagonal(mask, sigma, rho).ravel())
    assert np.abs(direct - closed).max() <= 1e-10


# --------------------------------------------------------------------------- summaries

def _chain(xs, n_bi):
    xs = np.asarray(xs, dtype=float)
    return Chain(xs, xs.copy(), np.zeros(len(xs), dtype=int), n_bi)


def test_mmse_constant_chain():
    img = np.arange(4.0).reshape(1, 2, 2)
    mx, mz = mmse(_chain([img] * 5, 2))
    np.testing.assert_array_equal(mx, img)


def test_mmse_two_point():
    a, b = np.zeros((1, 2, 2)), np.ones((1, 2, 2)) * 3
    mx, _ = mmse(_chain([a * 100, a, b], 1))
    np.testing.assert_allclose(mx, (a + b) / 2)


def test_mmse_window_is_last_samples():
    xs = np.arange(100.0)[:, None, None, None] * np.ones((1, 1, 1))
    mx, _ = mmse(_chain(xs, 20))
    assert mx.item() == pytest.approx(np.mean(np.arange(20, 100)))


def test_mmse_requires_post_burn_in():
    with pytest.raises(ParameterError):
        mmse(_chain(np.zeros((3, 1, 1, 1)), 3))


def test_credible_interval_order_statistics():
    xs = np.concatenate([np.zeros(10), np.arange(1.0, 101.0)])[:, None, None, None]
    lo, hi = credible_interval(_chain(xs, 10), 0.9)
    assert lo.item() == pytest.approx(5.95)
    assert hi.item() == pytest.approx(95.05)


def test_credible_interval_constant_and_errors():
    xs = np.full((6, 1, 2, 2), 0.4)
    lo, hi = credible_interval(_chain(xs, 2), 0.9)
    np.testing.assert_array_equal(lo, 0.4)
    np.testing.assert_array_equal(hi, 0.4)
    with pytest.raises(ParameterError):
        credible_interval(_chain(xs, 5), 0.9)
    with pytest.raises(ParameterError):
        credible_interval(_chain(xs, 2), 1.0)


# --------------------------------------------------------------------------- full sampler

def _toy_inpaint(rng, side=16, sigma=0.05):
    yy, xx = np.mgrid[0:side, 0:side]
    truth = (0.5 + 0.25 * np.sin(2 * np.pi * xx / side) * np.cos(2 * np.pi * yy / side))[None]
    mask = random_mask((side, side), 0.8, rng)
    y = apply(mask, truth) + sigma * rng.standard_normal((1, mask.n_kept))
    return truth, Inpaint(y, mask, sigma)


def test_defaults():
    cfg = SamplerConfig()
    assert (cfg.n_mc, cfg.n_bi, cfg.rho) == (100, 20, 0.7)
    assert cfg.cap(SCHED) == 100


def test_config_validation():
    with pytest.raises(ParameterError):
        SamplerConfig(n_mc=10, n_bi=10).validate(SCHED)
    with pytest.raises(ParameterError):
        SamplerConfig(t_star_cap=2000).validate(SCHED)
    with pytest.raises(ParameterError):
        SamplerConfig(rho=0).validate(SCHED)


def test_initial_state_inpaint(rng):
    _, task = _toy_inpaint(rng, 6)
    z0 = initial_state(task)
    kept = task.mask.kept_map()
    np.testing.assert_array_equal(z0[0][kept], task.y[0])
    np.testing.assert_allclose(z0[0][~kept], task.y.mean())


class Recorder(DenoiserModel):
    def __init__(self):
        self.schedule = SCHED
        self.calls = []

    def run(self, u, t_start, t_stop):
        self.calls.append((t_start, t_stop))
        return np.asarray(u)


def test_early_stop_only_during_burn_in(rng):
    _, task = _toy_inpaint(rng)
    rec = Recorder()
    chain = run_sampler(task, rec, SCHED, SamplerConfig(n_mc=12, n_bi=5, seed=1))
    for n, (t_start, t_stop) in enumerate(rec.calls, start=1):
        assert t_start == chain.t_star_trace[n - 1]
        assert t_stop == (math.ceil(t_start / 2) if n <= 5 else 0)
    rec2 = Recorder()
    run_sampler(task, rec2, SCHED, SamplerConfig(n_mc=6, n_bi=3, early_stop=False))
    assert all(stop == 0 for _, stop in rec2.calls)


def test_trace_bounded_and_reproducible(rng):
    _, task = _toy_inpaint(rng)
    model = GaussianConjugateDenoiser(np.full((1, 16, 16), 0.5), 0.05, SCHED)
    cfg = SamplerConfig(n_mc=30, n_bi=10, t_star_cap=40, seed=5)
    a = run_sampler(task, model, SCHED, cfg)
    b = run_sampler(task, model, SCHED, cfg)
    assert a.x_samples.tobytes() == b.x_samples.tobytes()
    assert a.z_samples.tobytes() == b.z_samples.tobytes()
    assert np.all((a.t_star_trace >= 0) & (a.t_star_trace <= 40))
    assert a.x_samples.shape == (30, 1, 16, 16) and a.n_mc == 30


def test_rescale_input_scales_denoiser_input(rng):
    _, task = _toy_inpaint(rng)

    class Capture(Recorder):
        def run(self, u, t_start, t_stop):
            self.calls.append((t_start, np.array(u)))
            return np.asarray(u)

    on, off = Capture(), Capture()
    a = run_sampler(task, on, SCHED, SamplerConfig(n_mc=3, n_bi=1, rescale_input=True, seed=2))
    run_sampler(task, off, SCHED, SamplerConfig(n_mc=3, n_bi=1, rescale_input=False, seed=2))
    t0 = on.calls[0][0]
    np.testing.assert_allclose(on.calls[0][1], np.sqrt(1 - SCHED.noise_var[t0]) * off.calls[0][1])
    np.testing.assert_allclose(off.calls[0][1], a.x_samples[0])


def test_deblur_and_superres_run(rng):
    truth = rng.random((1, 16, 16))
    blur = circulant_from_kernel(gaussian_kernel(5, 1.0), (16, 16))
    noise = NoiseModel.scalar(0.05)
    model = GaussianConjugateDenoiser(np.full((1, 16, 16), 0.5), 0.05, SCHED)
    deb = Deblur(apply(blur, truth) + 0.05 * rng.standard_normal(truth.shape), blur, noise)
    c = run_sampler(deb, model, SCHED, SamplerConfig(n_mc=8, n_bi=2))
    assert np.all(np.isfinite(c.x_samples))

    diag = Deblur(deb.y, blur, NoiseModel.diagonal(rng.uniform(0.001, 0.01, (1, 16, 16))))
    c = run_sampler(diag, model, SCHED, SamplerConfig(n_mc=4, n_bi=1))
    assert np.all(np.isfinite(c.x_samples))

    mask = stride_mask((16, 16), 4)
    sr = SuperRes(apply(mask, apply(blur, truth)), blur, mask, 0.05, 0.5, 0.5, ridge=1.0)
    c = run_sampler(sr, model, SCHED, SamplerConfig(n_mc=6, n_bi=2))
    assert c.z_samples.shape == (6, 1, 16, 16)
    assert np.all(np.isfinite(c.z_samples))


def test_superres_singular_error_carries_iteration(rng):
    blur = circulant_from_kernel(ConvolutionKernel([[0.5, 0.0, 0.5]]), (4, 4))
    mask = stride_mask((4, 4), 2)
    sr = SuperRes(rng.random((1, 4)), blur, mask, 0.1, 1.0, 1.0, ridge=0.0)
    model = GaussianConjugateDenoiser(np.zeros((1, 4, 4)), 0.1, SCHED)
    with pytest.raises(SamplerError, match="iteration 1"):
        run_sampler(sr, model, SCHED, SamplerConfig(n_mc=3, n_bi=1))


def test_thin_chain_matches_full(rng):
    _, task = _toy_inpaint(rng)
    model = GaussianConjugateDenoiser(np.full((1, 16, 16), 0.5), 0.05, SCHED)
    full = run_sampler(task, model, SCHED, SamplerConfig(n_mc=40, n_bi=10, seed=3))
    thin = run_sampler(task, model, SCHED, SamplerConfig(n_mc=40, n_bi=10, seed=3, max_chain_bytes=1,
                                                         reservoir_size=30))
    assert thin.thin and thin.x_samples is None
    np.testing.assert_allclose(mmse(thin)[0], mmse(full)[0], atol=1e-12)
    np.testing.assert_allclose(mmse(thin)[1], mmse(full)[1], atol=1e-12)
    np.testing.assert_allclose(pixel_std(thin), pixel_std(full), atol=1e-12)
    lo_t, hi_t = credible_interval(thin)
    lo_f, hi_f = credible_interval(full)
    np.testing.assert_allclose(lo_t, lo_f, atol=1e-12)
    s = summarize(thin)
    assert np.all(s.ci_lower <= s.ci_upper)
