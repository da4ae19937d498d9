"""Forward diffusion, reverse kernels and DDPM-style stochastic denoisers."""
from __future__ import annotations

import logging
import os
import selectors
import subprocess
import time

import numpy as np

from . import protocol
from .errors import PnPSGSError, ParameterError, ProtocolError
from .schedule import Schedule

log = logging.getLogger(__name__)


class DenoiserContractError(PnPSGSError):
    pass


class DenoiserModel:
    """Source of reverse-kernel moments ``q(u_{t-1} | u_t) = N(mean, diag(var))``."""

    schedule: Schedule

    def reverse_moments(self, u_t: np.ndarray, t: int):
        raise NotImplementedError

    def close(self):
        pass


def forward_diffuse(u0: np.ndarray, t: int, s: Schedule, rng) -> np.ndarray:
    if not 0 <= t <= s.T:
        raise ParameterError(f"step {t} outside 0..{s.T}")
    if t == 0:
        return np.array(u0, dtype=np.float64, copy=True)
    nu = s.noise_var[t]
    return np.sqrt(1.0 - nu) * u0 + np.sqrt(nu) * rng.standard_normal(np.shape(u0))


def forward_step(u_prev: np.ndarray, t: int, s: Schedule, rng) -> np.ndarray:
    """One transition ``u_{t-1} -> u_t`` of the forward chain."""
    b = s.beta(t)
    return np.sqrt(1.0 - b) * u_prev + np.sqrt(b) * rng.standard_normal(np.shape(u_prev))


def reverse_step(model: DenoiserModel, u_t: np.ndarray, t: int, rng) -> np.ndarray:
    if not 1 <= t <= model.schedule.T:
        raise ParameterError(f"reverse step {t} outside 1..{model.schedule.T}")
    mean, var = model.reverse_moments(u_t, t)
    mean = np.asarray(mean, dtype=np.float64)
    var = np.broadcast_to(np.asarray(var, dtype=np.float64), mean.shape)
    if mean.shape != np.shape(u_t):
        raise DenoiserContractError(f"model returned shape {mean.shape} for input {np.shape(u_t)}")
    if not np.all(var > 0):
        raise DenoiserContractError(f"model returned non-positive variance at t={t}")
    return mean + np.sqrt(var) * rng.standard_normal(mean.shape)


def run_reverse(model: DenoiserModel, u_start: np.ndarray, t_start: int, t_stop: int, rng) -> np.ndarray:
    """Run the reverse chain from ``t_start`` down to ``t_stop`` and return ``u_{t_stop}``."""
    if not 0 <= t_stop <= t_start <= model.schedule.T:
        raise ParameterError(f"need 0 <= t_stop <= t_start <= T, got {t_stop}, {t_start}")
    if hasattr(model, "run"):
        return model.run(u_start, t_start, t_stop)
    u = np.asarray(u_start, dtype=np.float64)
    for t in range(t_start, t_stop, -1):
        u = reverse_step(model, u, t, rng)
    return u


class GaussianConjugateDenoiser(DenoiserModel):
    """Exact reverse kernels for a Gaussian data distribution ``u_0 ~ N(m0, tau2 I)``.

    With this prior every ``(u_{t-1}, u_t)`` pair is jointly Gaussian, so the reverse
    transition is the exact conditional rather than a learned approximation.
    """

    def __init__(self, m0, tau2: float, schedule: Schedule):
        if not tau2 > 0:
            raise ParameterError("tau2 must be positive")
        self.m0 = np.asarray(m0, dtype=np.float64)
        self.tau2 = float(tau2)
        self.schedule = schedule

    def marginal(self, t: int):
        """Mean and variance of ``u_t`` under the forward chain."""
        nu = self.schedule.noise_var[t]
        scale = np.sqrt(1.0 - nu)
        return scale * self.m0, scale**2 * self.tau2 + nu

    def reverse_moments(self, u_t, t):
        prior_mean, prior_var = self.marginal(t - 1)
        b = self.schedule.beta(t)
        precision = 1.0 / prior_var + (1.0 - b) / b
        mean = (prior_mean / prior_var + np.sqrt(1.0 - b) * u_t / b) / precision
        return mean, np.full(np.shape(u_t), 1.0 / precision)

    def posterior_u0(self, u_t, t):
        """Closed-form ``p(u_0 | u_t)``: returns ``(mean, variance)``."""
        if t == 0:
            return np.asarray(u_t, dtype=np.float64), 0.0
        nu = self.schedule.noise_var[t]
        precision = 1.0 / self.tau2 + (1.0 - nu) / nu
        mean = (self.m0 / self.tau2 + np.sqrt(1.0 - nu) * u_t / nu) / precision
        return mean, 1.0 / precision


class ExternalDenoiser(DenoiserModel):
    """Child process answering PNPD requests on stdin/stdout.

    The server runs the whole reverse trajectory itself, so only :meth:`run` is
    available. One request is in flight at a time.
    """

    def __init__(self, command, schedule: Schedule, timeout: float = 60.0, env=None):
        self.command = list(command)
        self.schedule = schedule
        self.timeout = float(timeout)
        self._proc = subprocess.Popen(
            self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
            stderr=subprocess.PIPE, env=env,
        )
        self._sel = selectors.DefaultSelector()
        self._sel.register(self._proc.stdout, selectors.EVENT_READ)

    def reverse_moments(self, u_t, t):
        raise NotImplementedError("external denoisers only expose full reverse runs")

    def _read(self, deadline):
        fd = self._proc.stdout.fileno()

        def read(n):
            chunks, got = [], 0
            while got < n:
                remaining = deadline - time.monotonic()
                if remaining <= 0 or not self._sel.select(remaining):
                    raise ProtocolError(f"external denoiser timed out after {self.timeout:g} s")
                b = os.read(fd, n - got)
                if not b:
                    raise ProtocolError(f"external denoiser closed its output after {got} of {n} bytes"
                                        + self._stderr_tail())
                chunks.append(b)
                got += len(b)
            return b"".join(chunks)
        return read

    def _stderr_tail(self):
        if self._proc.poll() is None:
            return ""
        err = self._proc.stderr.read() or b""
        return (": " + err.decode("utf-8", "replace").strip()[-500:]) if err else ""

    def run(self, u_start, t_start, t_stop):
        u = np.asarray(u_start)
        try:
            self._proc.stdin.write(protocol.encode_request(u, t_start, t_stop))
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise ProtocolError(f"cannot write to external denoiser: {exc}") from exc
        try:
            out = protocol.read_response(self._read(time.monotonic() + self.timeout))
        except ProtocolError:
            # the stream cannot be resynchronized after a failed exchange
            self._proc.kill()
            raise
        if out.shape != u.shape:
            raise ProtocolError(f"response shape {out.shape} != request shape {u.shape}")
        return out.astype(np.float64)

    def close(self):
        if self._proc.poll() is None:
            try:
                self._proc.stdin.close()
                self._proc.wait(timeout=5)
            except (OSError, subprocess.TimeoutExpired):
                self._proc.kill()
                self._proc.wait()
        self._sel.close()
        for f in (self._proc.stdout, self._proc.stderr):
            f.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
