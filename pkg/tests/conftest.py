import numpy as np
import pytest

ACCEPTANCE_LINES = []


def spatial_cyclic_convolve(taps, x):
    """Brute-force cyclic convolution with a centre-anchored kernel."""
    kh, kw = taps.shape
    h, w = x.shape
    out = np.zeros_like(x, dtype=float)
    for i in range(h):
        for j in range(w):
            acc = 0.0
            for a in range(kh):
                for b in range(kw):
                    acc += taps[a, b] * x[(i - (a - kh // 2)) % h, (j - (b - kw // 2)) % w]
            out[i, j] = acc
    return out


def dense_circulant(taps, shape):
    """N x N matrix of cyclic convolution, one brute-force column per unit impulse."""
    h, w = shape
    n = h * w
    M = np.zeros((n, n))
    for k in range(n):
        e = np.zeros(n)
        e[k] = 1.0
        M[:, k] = spatial_cyclic_convolve(taps, e.reshape(shape)).ravel()
    return M


def dense_mask(kept, n):
    return np.eye(n)[np.asarray(kept)]


def gaussian_moments_se(samples, mean, var):
    """z-scores of empirical mean and variance against (mean, var) for iid draws."""
    m = samples.shape[0]
    z_mean = (samples.mean(axis=0) - mean) / np.sqrt(var / m)
    z_var = (samples.var(axis=0, ddof=1) - var) / np.sqrt(2.0 * var**2 / (m - 1))
    return z_mean, z_var


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
