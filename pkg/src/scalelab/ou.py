"""Ornstein-Uhlenbeck helpers: exact transitions, paths, integrated moments."""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class OuParams:
    """dZ = -b (Z - m) dt + sigma dB."""

    m: float
    b: float
    sigma: float

    def __post_init__(self):
        if self.b <= 0:
            raise ValueError("b must be positive")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")

    @property
    def stationary_var(self):
        return self.sigma**2 / (2 * self.b)

    @classmethod
    def from_moments(cls, mean, var, theta):
        """Match stationary mean ``mean``, variance ``var`` and covariance decay ``theta``."""
        return cls(mean, theta, float(np.sqrt(2 * theta * max(var, 0.0))))


def transition(x, dt, p, rng):
    """Exact draw of Z(t + dt) given Z(t) = x; ``x`` and ``dt`` broadcast."""
    decay = np.exp(-p.b * np.asarray(dt))
    sd = np.sqrt(p.stationary_var * (1.0 - decay**2))
    return p.m + (x - p.m) * decay + sd * rng.standard_normal(np.shape(x))


def stationary_sample(p, size, rng):
    return p.m + np.sqrt(p.stationary_var) * rng.standard_normal(size)


def paths(p, dt, n_steps, n_paths, rng):
    """``(n_paths, n_steps + 1)`` exact samples on a uniform grid, stationary start."""
    out = np.empty((n_paths, n_steps + 1))
    out[:, 0] = stationary_sample(p, n_paths, rng)
    for k in range(n_steps):
        out[:, k + 1] = transition(out[:, k], dt, p, rng)
    return out


def integrated_moments(p, t):
    """Mean and variance of the integral over [0, t] of a stationary OU path.

    The variance tends to ``sigma^2 t / b^2`` for ``b t`` large.
    """
    t = np.asarray(t, dtype=float)
    var = (p.sigma / p.b) ** 2 * (t - (1.0 - np.exp(-p.b * t)) / p.b)
    return p.m * t, var
