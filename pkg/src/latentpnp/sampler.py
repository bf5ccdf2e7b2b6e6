"""Latent-space and ambient-space plug-and-play ULA.

The latent chain targets ``z | y, rho`` with the split model
``x | z ~ N(z, rho I)``; the likelihood drift ``(E[x | y, z, rho] - z) / rho``
is the gradient of ``log p(y | z, rho)``. Posterior expectations of ``x`` are
Rao-Blackwellised through the Gaussian conditional ``x | y, z, rho``.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .calibration import CalibratorState, check_convergence, sapg_update
from .errors import ConfigError, DivergenceError
from .metrics import psnr
from .operators import SolverConfig, posterior_x_mean
from .tensor import as_image


@dataclass(frozen=True)
class SamplerConfig:
    """Chain settings; ``gamma=None`` is resolved by :func:`default_step_size`."""

    gamma: float | None = None
    lam: float = 1.5 / 255
    n_iter: int = 100
    burn_in: float = 0.3
    mode: str = "latent"
    solver: SolverConfig = field(default_factory=SolverConfig)
    divergence_bound: float = 1e3
    inject_noise: bool = True
    track_variance: bool = True

    def __post_init__(self):
        if self.gamma is not None and not self.gamma > 0:
            raise ConfigError("gamma must be > 0")
        if not self.lam > 0:
            raise ConfigError("lambda must be > 0")
        if self.n_iter < 1:
            raise ConfigError("n_iter must be >= 1")
        if not 0.0 <= self.burn_in < 1.0:
            raise ConfigError("burn_in fraction must lie in [0, 1)")
        if self.mode not in ("latent", "ambient"):
            raise ConfigError(f"unknown sampler mode {self.mode!r}")

    @property
    def n_burn(self):
        return int(math.floor(self.burn_in * self.n_iter))


@dataclass
class SamplerState:
    """``z`` is the chain iterate (``x`` itself in ambient mode)."""

    z: np.ndarray
    x_bar: np.ndarray
    rng: object
    k: int = 0
    drift_likelihood: float = 0.0
    drift_prior: float = 0.0


def default_step_size(lam, op_norm, sigma, rho0=None):
    """``0.5 / (1/lam + L_y)`` with ``L_y = |A|^2/sigma^2 + 1/rho0``.

    ``rho0=None`` drops the splitting term (ambient chains).
    """
    if not (lam > 0 and op_norm > 0 and sigma > 0):
        raise ConfigError("lambda, operator norm and sigma must be > 0")
    if rho0 is not None and not rho0 > 0:
        raise ConfigError("rho0 must be > 0")
    lip = op_norm**2 / sigma**2 + (0.0 if rho0 is None else 1.0 / rho0)
    return 0.5 / (1.0 / lam + lip)


def _gamma(cfg):
    if cfg.gamma is None:
        raise ConfigError("gamma unresolved; call resolve_step_size first")
    return cfg.gamma


def _guard(z, k, bound, trace=None):
    if not np.all(np.isfinite(z)):
        raise DivergenceError(k, float("inf"), trace)
    norm = float(np.max(np.abs(z)))
    if norm > bound:
        raise DivergenceError(k, norm, trace)


def init_state(z0, obs, rho, rng, cfg):
    z0 = as_image(z0, copy=True)
    x_bar = posterior_x_mean(obs, z0, rho, cfg.solver) if cfg.mode == "latent" else z0.copy()
    return SamplerState(z=z0, x_bar=x_bar, rng=rng)


def latent_step(state, obs, rho, d, cfg, rho_next=None):
    """One latent PnP-ULA move followed by the conditional-mean refresh.

    The drift uses ``rho``; the new conditional mean is computed with
    ``rho_next`` (defaults to ``rho``).
    """
    gamma = _gamma(cfg)
    z = state.z
    lik = (state.x_bar - z) / rho
    prior = (d(z, state.rng) - z) / d.lam
    z_new = z + gamma * (lik + prior)
    if cfg.inject_noise:
        z_new = z_new + math.sqrt(2.0 * gamma) * state.rng.normal(z.shape)
    _guard(z_new, state.k + 1, cfg.divergence_bound)
    x_bar = posterior_x_mean(obs, z_new, rho if rho_next is None else rho_next, cfg.solver)
    return replace(
        state, z=z_new, x_bar=x_bar, k=state.k + 1,
        drift_likelihood=float(np.linalg.norm(lik)), drift_prior=float(np.linalg.norm(prior)),
    )


def ambient_step(state, obs, d, cfg):
    """One PnP-ULA move directly on ``x`` using the exact likelihood gradient."""
    gamma = _gamma(cfg)
    x = state.z
    op = obs.operator
    lik = op.adjoint(obs.y - op.apply(x)) / obs.sigma2
    prior = (d(x, state.rng) - x) / d.lam
    x_new = x + gamma * (lik + prior)
    if cfg.inject_noise:
        x_new = x_new + math.sqrt(2.0 * gamma) * state.rng.normal(x.shape)
    _guard(x_new, state.k + 1, cfg.divergence_bound)
    return replace(
        state, z=x_new, x_bar=x_new, k=state.k + 1,
        drift_likelihood=float(np.linalg.norm(lik)), drift_prior=float(np.linalg.norm(prior)),
    )


def rao_blackwell_estimate(zs, obs, rho, phi="identity", cfg=None):
    """Average of ``E[phi(x) | y, z_k, rho]`` over the latent samples ``zs``.

    ``phi="second-moment"`` returns the pixelwise ``E[x^2]`` estimate.
    """
    zs = list(zs)
    if not zs:
        raise ConfigError("need at least one latent sample")
    if phi not in ("identity", "second-moment"):
        raise ConfigError(f"unknown phi {phi!r}")
    acc = None
    for z in zs:
        m = posterior_x_mean(obs, z, rho, cfg)
        term = m if phi == "identity" else m * m
        acc = term if acc is None else acc + term
    est = acc / len(zs)
    if phi == "second-moment":
        est = est + obs.operator.posterior_variance(est.shape, obs.sigma2, rho, cfg)
    return est


@dataclass
class SamplerResult:
    posterior_mean: np.ndarray
    posterior_var: np.ndarray | None
    trace: list
    rho_hat: float | None
    rho_final: float | None
    converged_at: int | None
    n_averaged: int
    state: SamplerState


def resolve_step_size(cfg, obs, op_norm, rho0):
    """Return ``cfg`` with ``gamma`` filled in from the recommended rule."""
    if cfg.gamma is not None:
        return cfg
    rho_term = rho0 if cfg.mode == "latent" else None
    return replace(cfg, gamma=default_step_size(cfg.lam, op_norm, obs.sigma, rho_term))


def run_sampler(z0, obs, rho, d, cfg, rng, calibrator=None, truth=None, op_norm=None, callback=None):
    """Run ``cfg.n_iter`` steps and return the Rao-Blackwellised posterior mean.

    With ``calibrator`` (a :class:`CalibratorConfig`) rho is updated by SAPG
    after every step, starting from ``calibrator.rho0``; ``rho`` is then only
    used when calibration is disabled. The first ``cfg.n_burn`` conditional
    means are discarded from the average (and from the rho tail average).
    """
    calibrating = calibrator is not None and calibrator.enabled
    if calibrating:
        if cfg.mode != "latent":
            raise ConfigError("rho calibration requires the latent mode")
        rho = calibrator.rho0
    if cfg.mode == "latent" and not (rho is not None and rho > 0):
        raise ConfigError("rho must be > 0 in latent mode")
    if cfg.gamma is None:
        if op_norm is None:
            from .operators import operator_norm

            op_norm = operator_norm(obs.operator, obs.image_shape)
        cfg = resolve_step_size(cfg, obs, op_norm, rho)

    state = init_state(z0, obs, rho, rng, cfg)
    cal = CalibratorState(rho=rho) if calibrating else None
    n_burn = cfg.n_burn
    mean = None
    sq_sum = None
    var_sum = None
    var_cache = {}

    def cond_variance(r):
        # diagonal of Cov[x | y, z, rho]; depends on rho only
        if r not in var_cache:
            var_cache.clear()
            var_cache[r] = obs.operator.posterior_variance(obs.image_shape, obs.sigma2, r, cfg.solver)
        return var_cache[r]
    n_avg = 0
    trace = []
    converged_at = None

    for k in range(1, cfg.n_iter + 1):
        cur_rho = cal.rho if cal is not None else rho
        try:
            if cfg.mode == "latent":
                state = latent_step(state, obs, cur_rho, d, cfg)
            else:
                state = ambient_step(state, obs, d, cfg)
        except DivergenceError as err:
            raise DivergenceError(err.iteration, err.norm, trace) from None

        retained = k > n_burn
        if cal is not None:
            trace_term = 0.0
            if calibrator.gradient == "fisher":
                trace_term = float(np.sum(cond_variance(cur_rho)))
            sapg_update(cal, state.x_bar, state.z, k, calibrator, accumulate=retained,
                        posterior_trace=trace_term)

        x_change = None
        if retained:
            n_avg += 1
            if mean is None:
                mean = state.x_bar.copy()
            else:
                prev = mean
                mean = prev + (state.x_bar - prev) / n_avg
                denom = np.linalg.norm(prev)
                x_change = float(np.linalg.norm(mean - prev) / denom) if denom > 0 else None
            if cfg.track_variance:
                sq = state.x_bar * state.x_bar
                sq_sum = sq if sq_sum is None else sq_sum + sq
                if cfg.mode == "latent":
                    v = cond_variance(cur_rho)
                    var_sum = v.copy() if var_sum is None else var_sum + v

        row = {
            "iteration": k,
            "drift_likelihood": state.drift_likelihood,
            "drift_prior": state.drift_prior,
        }
        if truth is not None:
            row["psnr"] = psnr(mean if mean is not None else state.x_bar, truth)
        if cal is not None:
            row["rho"] = cal.rho
            row["rho_bar"] = cal.rho_bar
            if retained and converged_at is None:
                ok, _ = check_convergence(cal, x_change, calibrator)
                if ok:
                    converged_at = k
        trace.append(row)
        if callback is not None:
            callback(state, row)
        if converged_at is not None and calibrator.stop_on_convergence:
            break

    if mean is None:
        mean = state.x_bar.copy()
        n_avg = 1
        if cfg.track_variance:
            sq_sum = mean * mean
    posterior_var = None
    if cfg.track_variance:
        second = sq_sum / n_avg
        if var_sum is not None:
            second = second + var_sum / n_avg
        posterior_var = np.maximum(second - mean * mean, 0.0)

    rho_hat = rho_final = None
    if cal is not None:
        rho_final = cal.rho
        rho_hat = cal.estimate if calibrator.averaging == "tail-average" else cal.rho
    return SamplerResult(
        posterior_mean=mean, posterior_var=posterior_var, trace=trace, rho_hat=rho_hat,
        rho_final=rho_final, converged_at=converged_at, n_averaged=n_avg, state=state,
    )
