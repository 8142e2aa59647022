"""Online guidance: the gradient of log p(c | x_t) through Tweedie's estimate.

The loss is L(a, c) = 0.5 * ||a - c||^2. With ``m`` Monte-Carlo draws
x0_i ~ N(x0_hat, sigma^2 I) in the zero-CoM subspace, the guidance vector is

    g(x_t) = grad_{x_t} log( (1/m) sum_i exp(-L(A(x0_i), c)) ),

which for m=1, sigma=0 is the point-estimate gradient -grad_{x_t} L(A(x0_hat), c).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from typing import Callable

import numpy as np

from .errors import ConfigError, GuidanceError
from .geometry import sample_subspace_gaussian, subspace_basis
from .schedule import NoiseSchedule, _bcast, tweedie_from_eps
from .score import as_denoiser

MODES = ("first-order", "zeroth-order")


@dataclass
class PropertyEstimator:
    """Batched property map A: (n, M, D) -> (n, C).

    ``evaluate`` returns NaN rows where the property is undefined.
    ``gradient`` (optional) returns the Jacobian, shape (n, C, M, D).
    """
    evaluate: Callable[[np.ndarray], np.ndarray]
    gradient: Callable[[np.ndarray], np.ndarray] | None = None
    name: str = "property"
    units: str = "dimensionless"
    condition_dim: int = 1

    @property
    def differentiable(self) -> bool:
        return self.gradient is not None

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 2:
            return self.evaluate(x[None])[0]
        return self.evaluate(x)


@dataclass
class GuidanceConfig:
    z: float = 1.0
    m: int = 1
    sigma: float = 5e-3
    kappa: float = 1.0
    mode: str = "first-order"
    k: int = 8
    h: float = 1e-3

    def __post_init__(self):
        if self.z < 0:
            raise ConfigError(f"guidance.z must be >= 0, got {self.z}")
        if int(self.m) != self.m or self.m < 1:
            raise ConfigError(f"guidance.m must be an integer >= 1, got {self.m}")
        if self.sigma < 0:
            raise ConfigError(f"guidance.sigma must be >= 0, got {self.sigma}")
        if not self.kappa > 0:
            raise ConfigError(f"guidance.kappa must be > 0 or inf, got {self.kappa}")
        if self.mode not in MODES:
            raise ConfigError(f"guidance.mode must be one of {MODES}, got {self.mode!r}")
        if int(self.k) != self.k or self.k < 1:
            raise ConfigError(f"guidance.k must be an integer >= 1, got {self.k}")
        if not self.h > 0:
            raise ConfigError(f"guidance.h must be > 0, got {self.h}")
        self.m, self.k = int(self.m), int(self.k)

    def to_dict(self):
        d = asdict(self)
        if math.isinf(d["kappa"]):
            d["kappa"] = "inf"
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"guidance: unknown keys {sorted(unknown)}")
        if isinstance(d.get("kappa"), str):
            d["kappa"] = float(d["kappa"])
        return cls(**d)


def squared_loss(values, target):
    r = np.asarray(values) - np.asarray(target)
    return 0.5 * (r * r).sum(axis=-1)


def clip_gradient(g, kappa: float) -> np.ndarray:
    """Rescale each point set's vector to norm ``kappa`` when it is longer."""
    g = np.asarray(g, dtype=float)
    if not kappa > 0:
        raise ConfigError(f"kappa must be > 0, got {kappa}")
    if math.isinf(kappa):
        return g.copy()
    norm = np.sqrt((g * g).sum(axis=(-2, -1), keepdims=True))
    scale = np.where(norm > kappa, kappa / np.where(norm > 0, norm, 1.0), 1.0)
    return g * scale


def _directions(M, D, k, rng, n):
    """n sets of k directions in the zero-CoM subspace, orthonormal within
    each block of (M-1)*D."""
    Q = subspace_basis(M)
    dim = (M - 1) * D
    out = np.empty((n, k, M, D))
    for i in range(n):
        cols, done = [], 0
        while done < k:
            b = min(dim, k - done)
            q, r = np.linalg.qr(rng.standard_normal((dim, b)))
            cols.append(q * np.sign(np.diag(r)))
            done += b
        U = np.concatenate(cols, axis=1).T.reshape(k, M - 1, D)
        out[i] = np.einsum("ma,kad->kmd", Q, U)
    return out


def zeroth_order_gradient(x0_hat, target_c, prop: PropertyEstimator, k: int, h: float,
                          rng: np.random.Generator) -> np.ndarray:
    """Estimate -grad L(A(x0_hat), c) from property evaluations only.

    Averages k central differences along random directions d_i that are
    orthonormal within the zero-CoM subspace, scaled by dim/k:

        -(dim/k) sum_i d_i [L(x + h d_i) - L(x - h d_i)] / (2h)

    For k = dim this is the full central-difference gradient; for linear
    properties it is unbiased for any k.
    """
    if not h > 0 or k < 1:
        raise ConfigError(f"zeroth-order estimator needs h > 0 and k >= 1, got h={h}, k={k}")
    x = np.asarray(x0_hat, dtype=float)
    single = x.ndim == 2
    xb = x[None] if single else x
    n, M, D = xb.shape
    dim = (M - 1) * D
    dirs = _directions(M, D, k, rng, n)
    pts = np.stack([xb[:, None] + h * dirs, xb[:, None] - h * dirs], axis=2)  # (n, k, 2, M, D)
    vals = prop.evaluate(pts.reshape(-1, M, D)).reshape(n, k, 2, -1)
    if not np.all(np.isfinite(vals)):
        raise GuidanceError("property not finite at perturbed points",
                            {"bad_chains": np.where(~np.isfinite(vals).all(axis=(1, 2, 3)))[0].tolist()})
    c = np.broadcast_to(np.asarray(target_c, float).reshape(-1, vals.shape[-1]), (n, vals.shape[-1]))
    L = squared_loss(vals, c[:, None, None, :])
    slope = (L[:, :, 0] - L[:, :, 1]) / (2 * h)
    g = -(dim / k) * np.einsum("nk,nkmd->nmd", slope, dirs)
    return g[0] if single else g


def _target(target_c, n, C):
    return np.broadcast_to(np.asarray(target_c, float).reshape(-1, C), (n, C))


def guidance_batch(x_t, t, target_c, model, sched: NoiseSchedule, prop: PropertyEstimator,
                   cfg: GuidanceConfig, rng: np.random.Generator):
    """Batched guidance vectors without raising.

    Returns ``(g, ok, loss)`` where ``ok`` flags chains whose vector is finite
    and ``loss`` is L(A(x0_hat), c) at the Tweedie estimate.
    """
    if cfg.mode == "first-order" and not prop.differentiable:
        raise ConfigError(f"property {prop.name!r} has no analytic gradient; use mode='zeroth-order'")
    den = as_denoiser(model)
    x = np.asarray(x_t, dtype=float)
    n, M, D = x.shape
    t_arr = np.broadcast_to(np.asarray(t), (n,))
    C = prop.condition_dim
    c = _target(target_c, n, C)
    with np.errstate(all="ignore"):
        eps = den.eps(x, t_arr)
        x0_hat = tweedie_from_eps(x, t_arr, eps, sched)
        if cfg.m == 1 and cfg.sigma == 0:
            draws = x0_hat[None]
        else:
            draws = x0_hat[None] + cfg.sigma * sample_subspace_gaussian(M, D, rng, size=(cfg.m, n))
        flat = draws.reshape(-1, M, D)
        vals = prop.evaluate(flat).reshape(cfg.m, n, C)
        L = squared_loss(vals, c[None])  # (m, n)
        if cfg.mode == "first-order":
            J = prop.gradient(flat).reshape(cfg.m, n, C, M, D)
            grad_L = np.einsum("knc,kncmd->knmd", vals - c[None], J)
        else:
            grad_L = np.empty_like(draws)
            for i in range(cfg.m):
                try:
                    grad_L[i] = -zeroth_order_gradient(draws[i], c, prop, cfg.k, cfg.h, rng)
                except GuidanceError:
                    grad_L[i] = np.nan
        # weights of log-mean-exp(-L) over the m draws
        a = -L
        a_max = np.max(a, axis=0, keepdims=True)
        w = np.exp(a - a_max)
        w = w / w.sum(axis=0, keepdims=True)
        d_x0 = -np.einsum("kn,knmd->nmd", w, grad_L)
        d_x0 = d_x0 - d_x0.mean(axis=-2, keepdims=True)
        ab = sched.bar_alpha[t_arr]
        bad = ~np.isfinite(d_x0).all(axis=(1, 2))
        safe = np.where(bad[:, None, None], 0.0, d_x0)
        g = (safe - _bcast(np.sqrt(1.0 - ab), x) * den.eps_vjp(x, t_arr, safe)) / _bcast(np.sqrt(ab), x)
        g = g - g.mean(axis=-2, keepdims=True)
    ok = np.isfinite(g).all(axis=(1, 2)) & ~bad
    loss0 = squared_loss(prop.evaluate(x0_hat), c) if not (cfg.m == 1 and cfg.sigma == 0) else L[0]
    return g, ok, loss0


def og_gradient(x_t, t, target_c, model, sched: NoiseSchedule, prop: PropertyEstimator,
                cfg: GuidanceConfig, rng: np.random.Generator) -> np.ndarray:
    """Guidance vector g(x_t, t) for one point set or a batch.

    Differentiates through Tweedie's estimate and the noise network's input
    Jacobian; in zeroth-order mode only the property is treated as a black box.
    """
    x = np.asarray(x_t, dtype=float)
    single = x.ndim == 2
    g, ok, loss = guidance_batch(x[None] if single else x, t, target_c, model, sched, prop, cfg, rng)
    if not ok.all():
        raise GuidanceError("non-finite guidance vector",
                            {"bad_chains": np.where(~ok)[0].tolist(), "t": np.asarray(t).tolist(),
                             "loss": np.asarray(loss).tolist()})
    return g[0] if single else g
