"""DDPM beta schedule and the map from denoiser noise level to chain length."""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, RangeError


@dataclass(frozen=True)
class NoiseSchedule:
    """Linear DDPM ladder. Arrays are indexed by ``t - 1`` for ``t = 1..T``."""

    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    beta_tilde: np.ndarray

    @property
    def T(self):
        return len(self.beta)

    def alpha_bar_at(self, t):
        """``alpha_bar_t`` with the convention ``alpha_bar_0 = 1``."""
        return 1.0 if t == 0 else float(self.alpha_bar[t - 1])

    def noise_variance(self, t):
        """Variance ``(1 - abar_t) / abar_t`` of the noise seen by ``x_t / sqrt(abar_t)``."""
        ab = self.alpha_bar_at(t)
        return (1.0 - ab) / ab

    def to_dict(self):
        return {
            "T": self.T,
            "beta": self.beta.tolist(),
            "alpha": self.alpha.tolist(),
            "alpha_bar": self.alpha_bar.tolist(),
            "beta_tilde": self.beta_tilde.tolist(),
        }


def build_schedule(T=1000, beta_min=1e-4, beta_max=0.02):
    if T < 1 or int(T) != T:
        raise ConfigError("T must be a positive integer")
    if not 0 < beta_min <= beta_max < 1:
        raise ConfigError("need 0 < beta_min <= beta_max < 1")
    T = int(T)
    if T == 1:
        beta = np.array([beta_min], dtype=np.float64)
    else:
        beta = beta_min + np.arange(T) * (beta_max - beta_min) / (T - 1)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    prev = np.concatenate([[1.0], alpha_bar[:-1]])
    beta_tilde = beta * (1.0 - prev) / (1.0 - alpha_bar)
    for a in (beta, alpha, alpha_bar, beta_tilde):
        a.setflags(write=False)
    return NoiseSchedule(beta=beta, alpha=alpha, alpha_bar=alpha_bar, beta_tilde=beta_tilde)


@dataclass(frozen=True)
class TimestepRule:
    """``explicit`` returns ``t_star``; ``cumulative-std`` inverts the schedule."""

    mode: str = "explicit"
    t_star: int = 3

    def __post_init__(self):
        if self.mode not in ("explicit", "cumulative-std"):
            raise ConfigError(f"unknown timestep rule {self.mode!r}")
        if self.t_star < 0:
            raise ConfigError("t_star must be >= 0")


def timestep_for_noise(schedule, lam, rule=TimestepRule()):
    """Number of reverse DDPM steps used to denoise noise of variance ``lam``.

    In ``cumulative-std`` mode this is the smallest ``t`` whose rescaled
    forward noise std ``sqrt((1 - abar_t) / abar_t)`` reaches ``sqrt(lam)``.
    """
    if not lam > 0:
        raise ConfigError("lambda must be > 0")
    if rule.mode == "explicit":
        if rule.t_star > schedule.T:
            raise RangeError(f"t_star={rule.t_star} exceeds schedule length {schedule.T}")
        return int(rule.t_star)
    std = np.sqrt((1.0 - schedule.alpha_bar) / schedule.alpha_bar)
    target = np.sqrt(lam)
    if target > std[-1]:
        raise RangeError(f"lambda={lam:g} exceeds the schedule's terminal noise variance {std[-1] ** 2:g}")
    return int(np.searchsorted(std, target, side="left")) + 1
