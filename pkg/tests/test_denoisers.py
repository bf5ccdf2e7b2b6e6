import sys

import numpy as np
import pytest

from latentpnp.denoisers import (
    AnalyticGaussianDenoiser,
    DdpmChainDenoiser,
    EquivariantDenoiser,
    ExternalScoreBackend,
    GaussianScoreBackend,
    analytic_gaussian_denoise,
    chain_denoise,
    ddpm_step,
    equivariant_denoise,
    score_from_denoiser,
)
from latentpnp.errors import ConfigError, MissingFileError, RangeError
from latentpnp.metrics import fd_gradient
from latentpnp.rng import RngStream
from latentpnp.schedule import TimestepRule, build_schedule
from latentpnp.tensor import D4, GroupElement, transform

SCHED = build_schedule()


class ConstBackend:
    def __init__(self, value=0.0):
        self.value = value
        self.nfe = 0

    def __call__(self, x, t):
        self.nfe += 1
        return np.full(np.shape(x), self.value)


class NoNoise:
    def normal(self, shape=()):
        return np.zeros(shape)


class LinearDenoiser:
    """Deterministic ``x -> M x`` on 4x4 images; not equivariant for a generic M."""

    lam = 0.1

    def __init__(self, m):
        self.m = m
        self.calls = 0
        self.nfe = 0

    def __call__(self, x, rng=None):
        self.calls += 1
        return (self.m @ x.reshape(-1)).reshape(x.shape)


def test_analytic_examples():
    mu = np.full((1, 4, 4), 0.3)
    np.testing.assert_allclose(analytic_gaussian_denoise(mu, 0.2, mu, 0.1), mu, atol=1e-15)
    x = RngStream(0).normal((1, 4, 4))
    out = analytic_gaussian_denoise(mu, 0.5, x, 0.5e-12)
    assert np.max(np.abs(out - x)) <= 1e-9
    assert analytic_gaussian_denoise(0.0, 1.0, 2.0, 1.0) == 1.0
    with pytest.raises(ConfigError):
        analytic_gaussian_denoise(0.0, 0.0, 1.0, 1.0)


def test_analytic_matches_quadrature():
    # posterior mean of x0 ~ N(mu, tau2) given x = x0 + N(0, lam), by brute-force quadrature
    mu, tau2, lam, x = 0.4, 0.03, 0.01, 0.75
    grid = np.linspace(mu - 12 * np.sqrt(tau2), mu + 12 * np.sqrt(tau2), 200_001)
    logw = -(grid - mu) ** 2 / (2 * tau2) - (x - grid) ** 2 / (2 * lam)
    w = np.exp(logw - logw.max())
    quad = np.sum(grid * w) / np.sum(w)
    assert analytic_gaussian_denoise(mu, tau2, x, lam) == pytest.approx(quad, abs=1e-6)


def test_ddpm_step_zero_score_t1():
    x = RngStream(1).normal((1, 4, 4))
    out = ddpm_step(ConstBackend(0.0), SCHED, x, 1, 2.0, RngStream(0))
    np.testing.assert_array_equal(out, x / np.sqrt(SCHED.alpha[0]))


def test_ddpm_step_eta_one_is_plain_ddpm():
    # hand-computed reverse DDPM update at t = 2 with constant eps = 0.3
    t, x, eps = 2, 0.7, 0.3
    beta1, beta2 = 1e-4, 1e-4 + (0.02 - 1e-4) / 999
    ab1 = 1 - beta1
    ab2 = ab1 * (1 - beta2)
    bt2 = beta2 * (1 - ab1) / (1 - ab2)
    noise = RngStream(3).normal((1, 1, 1))
    expected = (x - beta2 / np.sqrt(1 - ab2) * eps) / np.sqrt(1 - beta2) + np.sqrt(bt2) * noise
    out = ddpm_step(ConstBackend(eps), SCHED, np.full((1, 1, 1), x), t, 1.0, RngStream(3))
    np.testing.assert_allclose(out, expected, rtol=1e-13)


def test_ddpm_step_range():
    with pytest.raises(RangeError):
        ddpm_step(ConstBackend(), SCHED, np.zeros((1, 2, 2)), 0, 1.0, RngStream(0))
    with pytest.raises(RangeError):
        ddpm_step(ConstBackend(), SCHED, np.zeros((1, 2, 2)), 1001, 1.0, RngStream(0))


def test_ddpm_step_noise_variance():
    t, eta = 5, 2.0
    x = np.zeros((1, 1, 100_000))
    out = ddpm_step(ConstBackend(0.0), SCHED, x, t, eta, RngStream(4))
    target = eta * SCHED.beta_tilde[t - 1]
    assert 0.97 * target <= out.var() <= 1.03 * target


def test_chain_nfe_and_identity():
    b = ConstBackend(0.1)
    x = RngStream(0).normal((1, 4, 4))
    np.testing.assert_array_equal(chain_denoise(b, SCHED, x, 0, 2.0, RngStream(0)), x)
    assert b.nfe == 0
    chain_denoise(b, SCHED, x, 3, 2.0, RngStream(0))
    assert b.nfe == 3
    with pytest.raises(RangeError):
        chain_denoise(b, SCHED, x, 1001, 2.0, RngStream(0))


def test_chain_mean_matches_affine_recursion():
    # with an affine score the chain mean equals the noise-free chain exactly
    mu, tau2, x0 = 0.5, 0.05, 0.8
    b = GaussianScoreBackend(SCHED, mu, tau2)
    out = chain_denoise(b, SCHED, np.full((1, 1, 10_000), x0), 3, 2.0, RngStream(1))
    exact = chain_denoise(b, SCHED, np.full((1, 1, 1), x0), 3, 2.0, NoNoise())[0, 0, 0]
    se = out.std() / np.sqrt(out.size)
    assert abs(out.mean() - exact) <= 3 * se


def test_chain_mean_matches_analytic_posterior_mean():
    mu, tau2, x0, t_star = 0.5, 0.05, 0.8, 3
    lam = SCHED.noise_variance(t_star)
    b = GaussianScoreBackend(SCHED, mu, tau2)
    out = chain_denoise(b, SCHED, np.full((1, 1, 10_000), x0), t_star, 1.0, RngStream(1))
    se = out.std() / np.sqrt(out.size)
    assert abs(out.mean() - analytic_gaussian_denoise(mu, tau2, x0, lam)) <= 3 * se


def test_chain_denoiser_accounting():
    b = GaussianScoreBackend(SCHED, 0.5, 0.05)
    d = DdpmChainDenoiser(b, SCHED, 1.5 / 255, eta=2.0, rule=TimestepRule("explicit", 3))
    x = np.zeros((1, 4, 4))
    for _ in range(7):
        d(x, RngStream(0))
    assert d.t_star == 3 and d.calls == 7 and d.nfe == 21
    with pytest.raises(ConfigError):
        DdpmChainDenoiser(b, SCHED, 0.01, eta=0.0)


def test_equivariant_trivial_group():
    m = RngStream(2).normal((16, 16))
    d = LinearDenoiser(m)
    x = RngStream(3).normal((1, 4, 4))
    out = equivariant_denoise(d, (GroupElement.IDENTITY,), x, RngStream(0))
    np.testing.assert_array_equal(out, d(x))


def test_equivariant_base_is_unchanged():
    d = AnalyticGaussianDenoiser(np.full((1, 8, 8), 0.5), 0.1, 0.02)
    wrapped = EquivariantDenoiser(d)
    x = RngStream(4).normal((1, 8, 8))
    rng = RngStream(5)
    base = d(x)
    for _ in range(16):
        np.testing.assert_array_equal(wrapped(x, rng), base)
    assert wrapped.calls == d.calls


def test_equivariant_average_matches_group_mean():
    m = RngStream(6).normal((16, 16))
    d = LinearDenoiser(m)
    x = RngStream(7).normal((1, 4, 4))
    brute = np.mean([transform(d(transform(x, g)), g, "inverse") for g in D4], axis=0)
    wrapped = EquivariantDenoiser(d)
    rng = RngStream(8)
    n = 100_000
    acc = np.zeros_like(x)
    acc2 = np.zeros_like(x)
    for _ in range(n):
        o = wrapped(x, rng)
        acc += o
        acc2 += o * o
    mean = acc / n
    se = np.sqrt((acc2 / n - mean**2) / n)
    assert np.all(np.abs(mean - brute) <= 3 * se)


def test_symmetric_blur_denoiser_commutes_in_expectation():
    # a circulant symmetric-kernel smoother commutes with every element of D4
    from latentpnp.operators import Blur, gaussian_kernel

    blur = Blur(gaussian_kernel(3, 1.0))
    x = RngStream(9).normal((1, 8, 8))
    for g in D4:
        np.testing.assert_allclose(
            transform(blur.apply(transform(x, g)), g, "inverse"), blur.apply(x), atol=1e-13
        )


def test_score_from_analytic_denoiser():
    mu, tau2, lam = 0.4, 0.05, 0.02
    d = AnalyticGaussianDenoiser(np.full((1, 4, 4), mu), tau2, lam)
    x = RngStream(10).normal((1, 4, 4))
    s = score_from_denoiser(d, x, lam, None)
    np.testing.assert_allclose(s, (mu - x) / (tau2 + lam), rtol=1e-12)
    np.testing.assert_allclose(score_from_denoiser(d, np.full((1, 4, 4), mu), lam, None), 0.0, atol=1e-12)


def test_score_matches_finite_differences():
    mu, tau2, lam = 0.4, 0.05, 0.02
    d = AnalyticGaussianDenoiser(np.full((1, 1, 5), mu), tau2, lam)
    x = RngStream(11).normal((1, 1, 5))
    v = tau2 + lam

    def logp(p):
        return -np.sum((p - mu) ** 2) / (2 * v)

    fd = fd_gradient(logp, x, h=1e-4)
    s = score_from_denoiser(d, x, lam, None)
    np.testing.assert_allclose(s, fd, rtol=1e-5)


def test_score_lipschitz():
    mu, tau2, lam = 0.4, 0.05, 0.02
    d = AnalyticGaussianDenoiser(np.full((1, 4, 4), mu), tau2, lam)
    rng = RngStream(12)
    for _ in range(20):
        a, b = rng.normal((1, 4, 4)), rng.normal((1, 4, 4))
        da = score_from_denoiser(d, a, lam, None) - score_from_denoiser(d, b, lam, None)
        assert np.linalg.norm(da) <= np.linalg.norm(a - b) / (tau2 + lam) * (1 + 1e-12)


SERVER = """
import sys
from latentpnp.io import read_lrt1, write_lrt1
x = read_lrt1(sys.argv[1])
write_lrt1(sys.argv[2], x * 0 + float(sys.argv[3]) / 100)
"""


def test_external_backend_file_exchange(tmp_path):
    script = tmp_path / "serve.py"
    script.write_text(SERVER)
    b = ExternalScoreBackend(f"{sys.executable} {script} {{input}} {{output}} {{t}}", workdir=tmp_path / "work")
    eps = b(np.zeros((1, 2, 2)), 7)
    np.testing.assert_allclose(eps, 0.07, rtol=1e-6)
    assert b.nfe == 1
    assert (tmp_path / "work" / "in.lrt1").exists()


def test_external_backend_errors(tmp_path):
    with pytest.raises(ConfigError):
        ExternalScoreBackend("serve {input}")
    b = ExternalScoreBackend("no-such-binary-xyz {input} {output} {t}", workdir=tmp_path)
    with pytest.raises(MissingFileError):
        b(np.zeros((1, 2, 2)), 1)
