"""Stochastic-approximation calibration of the splitting parameter rho."""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class CalibratorConfig:
    """SAPG settings. ``c0=None`` means ``rho0 / d`` with ``d`` the pixel count."""

    rho0: float = 1.0
    c0: float | None = None
    p: float = 0.85
    rho_min: float = 1e-6
    rho_max: float = 10.0
    tol_rho: float = 1e-3
    tol_x: float = 1e-4
    averaging: str = "tail-average"
    gradient: str = "fisher"
    enabled: bool = True
    stop_on_convergence: bool = False

    def __post_init__(self):
        if not self.rho0 > 0:
            raise ConfigError("rho0 must be > 0")
        if not 0.6 <= self.p <= 0.9:
            raise ConfigError("decay exponent p must lie in [0.6, 0.9]")
        if not 0 < self.rho_min < self.rho_max:
            raise ConfigError("need 0 < rho_min < rho_max")
        if not (self.tol_rho > 0 and self.tol_x > 0):
            raise ConfigError("tolerances must be > 0")
        if self.c0 is not None and not self.c0 > 0:
            raise ConfigError("c0 must be > 0")
        if self.averaging not in ("tail-average", "last-iterate"):
            raise ConfigError(f"unknown averaging mode {self.averaging!r}")
        if self.gradient not in ("fisher", "plug-in"):
            raise ConfigError(f"unknown rho gradient {self.gradient!r}")

    def step_scale(self, d):
        return self.c0 if self.c0 is not None else self.rho0 / d


@dataclass
class CalibratorState:
    rho: float
    rho_sum: float = 0.0
    n_tail: int = 0
    rho_bar: float | None = None
    history: list = field(default_factory=list)

    @property
    def estimate(self):
        """Tail average once available, else the current iterate."""
        return self.rho_bar if self.rho_bar is not None else self.rho


def rho_gradient(x_bar, z, rho, d=None, posterior_trace=0.0):
    """d/drho of log N(x; z, rho I) averaged over x | y, z, rho.

    With ``posterior_trace=0`` this is the plug-in value at ``x = x_bar``,
    ``|x_bar - z|^2 / (2 rho^2) - d / (2 rho)``. Passing the trace of the
    conditional covariance of ``x | y, z, rho`` gives the exact expectation.
    """
    diff = np.asarray(x_bar) - np.asarray(z)
    d = diff.size if d is None else d
    return (float(np.vdot(diff, diff)) + posterior_trace) / (2.0 * rho**2) - d / (2.0 * rho)


def delta_step(k, cfg, d=1):
    if k < 1:
        raise ConfigError("SAPG step index starts at 1")
    return cfg.step_scale(d) * float(k) ** (-cfg.p)


def sapg_update(state, x_bar, z, k, cfg, accumulate=True, posterior_trace=0.0):
    """One projected stochastic-gradient step on rho; ``k`` indexes ``delta_k``.

    Updates ``state`` in place and returns it. When ``accumulate`` is true the
    new iterate enters the tail average. ``posterior_trace`` is ignored for
    ``cfg.gradient == "plug-in"``.
    """
    d = np.size(x_bar)
    trace = posterior_trace if cfg.gradient == "fisher" else 0.0
    grad = rho_gradient(x_bar, z, state.rho, d, trace)
    state.rho = float(np.clip(state.rho + delta_step(k, cfg, d) * grad, cfg.rho_min, cfg.rho_max))
    prev_bar = state.rho_bar
    if accumulate:
        state.rho_sum += state.rho
        state.n_tail += 1
        state.rho_bar = state.rho_sum / state.n_tail
    rel = None
    if prev_bar is not None and state.rho_bar is not None:
        rel = abs(state.rho_bar - prev_bar) / prev_bar
    state.history.append({"k": k, "rho": state.rho, "rho_bar": state.rho_bar, "rel_rho": rel, "grad": grad})
    return state


def check_convergence(state, x_rel_change, cfg):
    """Stop test on relative changes of the averaged rho and posterior mean.

    Returns ``(converged, reason)``.
    """
    if len(state.history) < 2 or state.history[-1]["rel_rho"] is None:
        return False, "insufficient history"
    rel_rho = state.history[-1]["rel_rho"]
    if x_rel_change is None:
        return False, "insufficient history"
    if rel_rho > cfg.tol_rho:
        return False, f"rho relative change {rel_rho:.2e} > {cfg.tol_rho:g}"
    if x_rel_change > cfg.tol_x:
        return False, f"x relative change {x_rel_change:.2e} > {cfg.tol_x:g}"
    return True, "tolerances met"
