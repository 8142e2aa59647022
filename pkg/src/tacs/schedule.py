"""Discrete variance-preserving noise schedule.

Timesteps run over ``0..T``: data at t=0, (near) white noise at t=T.
``beta[t - 1]`` is the rate of the step from t-1 to t, and
``bar_alpha[t] = prod_{s<=t} (1 - beta_s)`` with ``bar_alpha[0] = 1``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericalGuardError

ALPHA_BAR_FLOOR = 1e-12


@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    beta: np.ndarray
    beta_min: float
    beta_max: float

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=float)
        beta.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        alpha = 1.0 - beta
        bar = np.concatenate([[1.0], np.cumprod(alpha)])
        alpha.setflags(write=False)
        bar.setflags(write=False)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "bar_alpha", bar)

    def alpha_at(self, t):
        """alpha_t for t in 1..T (array-friendly)."""
        return self.alpha[np.asarray(t) - 1]

    def beta_at(self, t):
        return self.beta[np.asarray(t) - 1]

    def posterior_variance(self, t):
        """beta_tilde_t = beta_t (1 - abar_{t-1}) / (1 - abar_t)."""
        t = np.asarray(t)
        return self.beta[t - 1] * (1.0 - self.bar_alpha[t - 1]) / (1.0 - self.bar_alpha[t])

    def to_dict(self) -> dict:
        return {"type": "linear", "T": self.T, "beta_min": self.beta_min, "beta_max": self.beta_max}

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSchedule":
        d = dict(d)
        kind = d.pop("type", "linear")
        if kind != "linear":
            raise ConfigError(f"schedule.type: unknown schedule {kind!r}")
        unknown = set(d) - {"T", "beta_min", "beta_max"}
        if unknown:
            raise ConfigError(f"schedule: unknown keys {sorted(unknown)}")
        return build_linear_schedule(int(d["T"]), float(d["beta_min"]), float(d["beta_max"]))


def build_linear_schedule(T: int, beta_min: float, beta_max: float) -> NoiseSchedule:
    if T < 2:
        raise ConfigError(f"schedule.T must be >= 2, got {T}")
    if not (0.0 < beta_min <= beta_max < 1.0):
        raise ConfigError(f"schedule needs 0 < beta_min <= beta_max < 1, got {beta_min}, {beta_max}")
    return NoiseSchedule(T, np.linspace(beta_min, beta_max, T), beta_min, beta_max)


def toy_schedule(T: int = 100) -> NoiseSchedule:
    """Linear schedule whose endpoints are rescaled from the T=1000 defaults
    (1e-4, 2e-2) by 1000/T, so the chain still ends near white noise."""
    return build_linear_schedule(T, 1e-4 * 1000 / T, 2e-2 * 1000 / T)


def _check_t(t, sched: NoiseSchedule, lo: int):
    t = np.asarray(t)
    if np.any(t < lo) or np.any(t > sched.T):
        raise IndexError(f"timestep {t} outside {lo}..{sched.T}")
    return t


def _bcast(coef, x):
    """Reshape per-sample coefficients of shape (n,) against (n, M, D)."""
    coef = np.asarray(coef, dtype=float)
    return coef.reshape(coef.shape + (1,) * (np.ndim(x) - coef.ndim)) if coef.ndim else coef


def forward_perturb(x0, t, eps, sched: NoiseSchedule) -> np.ndarray:
    """sqrt(abar_t) x0 + sqrt(1 - abar_t) eps."""
    t = _check_t(t, sched, 0)
    ab = sched.bar_alpha[t]
    x0 = np.asarray(x0, dtype=float)
    return _bcast(np.sqrt(ab), x0) * x0 + _bcast(np.sqrt(1.0 - ab), x0) * np.asarray(eps)


def tweedie(x_t, t, score, sched: NoiseSchedule) -> np.ndarray:
    """Posterior-mean estimate of x0 from x_t and a score evaluated at x_t.

    Passing a corrected timestep instead of the nominal one gives the
    time-corrected variant used by the corrected sampler.
    """
    t = _check_t(t, sched, 1)
    ab = sched.bar_alpha[t]
    if np.any(ab < ALPHA_BAR_FLOOR):
        raise NumericalGuardError(f"bar_alpha_t={np.min(ab):.3g} too small for Tweedie at t={t}")
    x_t = np.asarray(x_t, dtype=float)
    return (x_t + _bcast(1.0 - ab, x_t) * np.asarray(score)) / _bcast(np.sqrt(ab), x_t)


def tweedie_from_eps(x_t, t, eps_hat, sched: NoiseSchedule) -> np.ndarray:
    """Same estimate written in the noise parameterization."""
    t = _check_t(t, sched, 1)
    ab = sched.bar_alpha[t]
    if np.any(ab < ALPHA_BAR_FLOOR):
        raise NumericalGuardError(f"bar_alpha_t={np.min(ab):.3g} too small for Tweedie at t={t}")
    x_t = np.asarray(x_t, dtype=float)
    return (x_t - _bcast(np.sqrt(1.0 - ab), x_t) * eps_hat) / _bcast(np.sqrt(ab), x_t)
