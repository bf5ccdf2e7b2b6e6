"""Denoisers used as implicit priors.

A denoiser is any object with a noise variance ``lam`` and a call signature
``denoiser(x, rng) -> array`` returning an image of the same shape. The
DDPM-chain denoiser queries a score backend ``backend(x, t)`` that predicts
the noise ``eps_theta(x, t)``; every backend counts its evaluations in
``backend.nfe``.
"""

import shlex
import subprocess
import tempfile
import threading
from pathlib import Path

import numpy as np

from .errors import ConfigError, MissingFileError, RangeError, ShapeError
from .io import read_lrt1, write_lrt1
from .schedule import TimestepRule, timestep_for_noise
from .tensor import D4, sample_group, transform


def analytic_gaussian_denoise(mu, tau2, x, lam):
    """MMSE denoiser for prior ``N(mu, tau2 I)`` and noise variance ``lam``."""
    if not tau2 > 0 or not lam > 0:
        raise ConfigError("tau2 and lambda must be > 0")
    return (tau2 * np.asarray(x) + lam * np.asarray(mu)) / (tau2 + lam)


class AnalyticGaussianDenoiser:
    """Exact posterior-mean denoiser for a Gaussian prior (deterministic)."""

    def __init__(self, mu, tau2, lam):
        if not tau2 > 0 or not lam > 0:
            raise ConfigError("tau2 and lambda must be > 0")
        self.mu = np.asarray(mu, dtype=np.float64)
        self.tau2 = float(tau2)
        self.lam = float(lam)
        self.calls = 0

    def __call__(self, x, rng=None):
        self.calls += 1
        return analytic_gaussian_denoise(self.mu, self.tau2, x, self.lam)

    @property
    def nfe(self):
        return 0


class IdentityDenoiser:
    """Denoiser of a flat prior: returns its input, so the prior score is zero."""

    def __init__(self, lam=1.0):
        self.lam = float(lam)
        self.calls = 0

    def __call__(self, x, rng=None):
        self.calls += 1
        return np.array(x, dtype=np.float64)

    @property
    def nfe(self):
        return 0


class GaussianScoreBackend:
    """Exact noise predictor for data ``x0 ~ N(mu, tau2 I)``.

    Under ``x_t = sqrt(abar) x0 + sqrt(1 - abar) eps`` the optimal predictor is
    ``sqrt(1 - abar) (x - sqrt(abar) mu) / (abar tau2 + 1 - abar)``.
    """

    provenance = "analytic-gaussian"

    def __init__(self, schedule, mu, tau2):
        if not tau2 > 0:
            raise ConfigError("tau2 must be > 0")
        self.schedule = schedule
        self.mu = np.asarray(mu, dtype=np.float64)
        self.tau2 = float(tau2)
        self.nfe = 0

    def __call__(self, x, t):
        self.nfe += 1
        ab = self.schedule.alpha_bar_at(t)
        return np.sqrt(1.0 - ab) * (x - np.sqrt(ab) * self.mu) / (ab * self.tau2 + 1.0 - ab)


class ExternalScoreBackend:
    """Score network served by an external program through LRT1 files.

    ``command`` is a template such as ``"python serve.py {input} {output} {t}"``.
    Each call writes ``in.lrt1`` in a private work directory, runs the command
    and reads ``out.lrt1``. Calls are serialised by a lock.
    """

    provenance = "external-file-exchange"

    def __init__(self, command, workdir=None, timeout=None):
        if "{input}" not in command or "{output}" not in command or "{t}" not in command:
            raise ConfigError("score command must contain {input}, {output} and {t} placeholders")
        self.command = command
        self.workdir = Path(workdir) if workdir else Path(tempfile.mkdtemp(prefix="latentpnp-score-"))
        self.timeout = timeout
        self.nfe = 0
        self._lock = threading.Lock()

    def __call__(self, x, t):
        with self._lock:
            self.workdir.mkdir(parents=True, exist_ok=True)
            inp, out = self.workdir / "in.lrt1", self.workdir / "out.lrt1"
            if out.exists():
                out.unlink()
            write_lrt1(inp, x)
            args = [a.format(input=inp, output=out, t=int(t)) for a in shlex.split(self.command)]
            try:
                subprocess.run(args, check=True, timeout=self.timeout)
            except FileNotFoundError:
                raise MissingFileError(args[0], "score backend executable") from None
            if not out.exists():
                raise MissingFileError(out, "score backend output")
            eps = read_lrt1(out)
            self.nfe += 1
        if eps.shape != np.shape(x):
            raise ShapeError(f"score backend returned shape {eps.shape}, expected {np.shape(x)}")
        if not np.all(np.isfinite(eps)):
            raise ValueError("score backend returned non-finite values")
        return eps


def ddpm_step(backend, schedule, x, t, eta, rng):
    """One reverse DDPM transition at step ``t`` with stochasticity ``eta``."""
    if not 1 <= t <= schedule.T:
        raise RangeError(f"timestep {t} outside [1, {schedule.T}]")
    beta = schedule.beta[t - 1]
    ab = schedule.alpha_bar[t - 1]
    eps = backend(x, t)
    out = (x - eta * beta / np.sqrt(1.0 - ab) * eps) / np.sqrt(schedule.alpha[t - 1])
    bt = schedule.beta_tilde[t - 1]
    if bt > 0:
        out = out + np.sqrt(eta * bt) * rng.normal(np.shape(x))
    return out


def chain_denoise(backend, schedule, x, t_star, eta, rng):
    """Apply the DDPM steps ``t_star, ..., 1`` (exactly ``t_star`` backend calls)."""
    if not 0 <= t_star <= schedule.T:
        raise RangeError(f"t_star={t_star} outside [0, {schedule.T}]")
    out = np.asarray(x, dtype=np.float64)
    for t in range(int(t_star), 0, -1):
        out = ddpm_step(backend, schedule, out, t, eta, rng)
    return out


class DdpmChainDenoiser:
    """Denoiser made of the last ``t_star`` reverse steps of a DDPM."""

    def __init__(self, backend, schedule, lam, eta=2.0, rule=TimestepRule()):
        if not eta > 0:
            raise ConfigError("eta must be > 0")
        self.backend = backend
        self.schedule = schedule
        self.lam = float(lam)
        self.eta = float(eta)
        self.t_star = timestep_for_noise(schedule, lam, rule)
        self.calls = 0

    def __call__(self, x, rng):
        self.calls += 1
        return chain_denoise(self.backend, self.schedule, x, self.t_star, self.eta, rng)

    @property
    def nfe(self):
        return self.backend.nfe


class EquivariantDenoiser:
    """Random group conjugation ``T_g^-1 D(T_g x)`` with one draw of ``g`` per call."""

    def __init__(self, inner, group=D4):
        self.inner = inner
        self.group = tuple(group)
        if not self.group:
            raise ConfigError("group must be nonempty")
        self.lam = inner.lam

    def __call__(self, x, rng):
        g = sample_group(rng, self.group)
        return transform(self.inner(transform(x, g), rng), g, "inverse")

    @property
    def calls(self):
        return self.inner.calls

    @property
    def nfe(self):
        return self.inner.nfe


def equivariant_denoise(d, group, x, rng):
    return EquivariantDenoiser(d, group)(x, rng)


def score_from_denoiser(d, x, lam, rng):
    """Tweedie score estimate ``(D(x) - x) / lam``."""
    if not lam > 0:
        raise ConfigError("lambda must be > 0")
    return (d(x, rng) - np.asarray(x)) / lam
