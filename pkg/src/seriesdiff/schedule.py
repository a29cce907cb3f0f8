"""Forward-process variance schedule and derived quantities."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_T = 200
DEFAULT_BETA_START = 1e-4
# Chosen so the terminal marginal is effectively standard normal
# (alpha_bar_T ~ 2.7e-4 for the defaults below).
DEFAULT_BETA_END = 0.08


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step noise levels for a diffusion horizon of T steps.

    Arrays are indexed by ``t - 1`` for steps ``t = 1..T``. ``posterior_sigma2``
    holds the fixed reverse-step variances: (1 - alpha_bar_{t-1}) * beta_t /
    (1 - alpha_bar_t) for t > 1, and beta_1 at t = 1.
    """

    T: int
    beta: np.ndarray
    alpha: np.ndarray = field(repr=False, default=None)
    alpha_bar: np.ndarray = field(repr=False, default=None)
    posterior_sigma2: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=np.float64)
        if self.T < 1 or beta.shape != (self.T,):
            raise ValueError("beta must have exactly T entries, T >= 1")
        if np.any(beta <= 0.0) or np.any(beta >= 1.0):
            raise ValueError("all beta_t must lie strictly in (0, 1)")
        alpha = 1.0 - beta
        alpha_bar = np.cumprod(alpha)
        sigma2 = np.empty(self.T)
        sigma2[0] = beta[0]
        if self.T > 1:
            sigma2[1:] = (1.0 - alpha_bar[:-1]) * beta[1:] / (1.0 - alpha_bar[1:])
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "alpha_bar", alpha_bar)
        object.__setattr__(self, "posterior_sigma2", sigma2)
        for arr in (self.beta, self.alpha, self.alpha_bar, self.posterior_sigma2):
            arr.setflags(write=False)


def make_linear_schedule(
    T: int = DEFAULT_T,
    beta_start: float = DEFAULT_BETA_START,
    beta_end: float = DEFAULT_BETA_END,
) -> NoiseSchedule:
    """Linear beta schedule, endpoints included."""
    if T < 1:
        raise ValueError("T must be >= 1")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError("need 0 < beta_start <= beta_end < 1")
    return NoiseSchedule(T=int(T), beta=np.linspace(beta_start, beta_end, int(T)))
