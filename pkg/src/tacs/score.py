"""Noise-prediction score models, denoising score matching, CFG.

The network predicts the injected noise; the score follows as
``-eps_hat / sqrt(1 - abar_t)``. Conditional models take a condition vector
plus a null flag so the same network serves classifier-free guidance.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import neural
from .errors import ConfigError, ShapeError, TrainingError, UsageError
from .geometry import project_zero_com, sample_subspace_gaussian
from .schedule import NoiseSchedule, forward_perturb, _bcast

COND_CLIP = 5.0


def _project(v):
    return v - v.mean(axis=-2, keepdims=True)


@dataclass
class ScoreModel:
    net: neural.Mlp
    M: int
    D: int
    T: int
    conditional: bool = False
    condition_dim: int = 0
    cond_shift: np.ndarray | None = None
    cond_scale: np.ndarray | None = None
    parameterization: str = "eps"

    @classmethod
    def create(cls, M, D, T, rng, hidden=(128, 128, 128), activation="tanh",
               conditional=False, condition_dim=1, cond_shift=None, cond_scale=None):
        cdim = condition_dim if conditional else 0
        n_in = M * D + 1 + 2 * neural.N_FREQ + (cdim + 1 if conditional else 0)
        net = neural.init_mlp([n_in, *hidden, M * D], rng, activation)
        if conditional:
            cond_shift = np.zeros(cdim) if cond_shift is None else np.atleast_1d(np.asarray(cond_shift, float))
            cond_scale = np.ones(cdim) if cond_scale is None else np.atleast_1d(np.asarray(cond_scale, float))
        return cls(net, M, D, T, conditional, cdim, cond_shift, cond_scale)

    def copy(self) -> "ScoreModel":
        return ScoreModel(self.net.copy(), self.M, self.D, self.T, self.conditional, self.condition_dim,
                          self.cond_shift, self.cond_scale)

    def descriptor(self) -> dict:
        d = {"conditional": self.conditional, "condition_dim": self.condition_dim,
             "parameterization": self.parameterization, "M": self.M, "D": self.D, "T": self.T}
        if self.conditional:
            d["cond_shift"] = self.cond_shift.tolist()
            d["cond_scale"] = self.cond_scale.tolist()
        return d

    def save(self, path, extra: dict | None = None):
        neural.save_mlp(path, self.net, {"score_model": self.descriptor(), **(extra or {})})

    @classmethod
    def load(cls, path) -> "ScoreModel":
        net, meta = neural.load_mlp(path)
        d = meta["score_model"]
        return cls(net, d["M"], d["D"], d["T"], d["conditional"], d["condition_dim"],
                   np.asarray(d["cond_shift"]) if d["conditional"] else None,
                   np.asarray(d["cond_scale"]) if d["conditional"] else None)

    # -- network plumbing --

    def _inputs(self, x, t, condition=None, null=False):
        x = np.asarray(x, dtype=float)
        if x.shape[-2:] != (self.M, self.D):
            raise ShapeError(f"model expects point sets ({self.M}, {self.D}), got {x.shape}")
        n = x.shape[0]
        tf = neural.time_features(np.broadcast_to(np.asarray(t), (n,)), self.T)
        parts = [x.reshape(n, -1), tf]
        if self.conditional:
            if null is True or (condition is None and np.all(null)):
                c = np.zeros((n, self.condition_dim))
                flag = np.ones((n, 1))
            else:
                if condition is None:
                    raise UsageError("conditional model needs a condition or null=True")
                c = np.broadcast_to(np.asarray(condition, float).reshape(-1, self.condition_dim),
                                    (n, self.condition_dim))
                c = np.clip((c - self.cond_shift) / self.cond_scale, -COND_CLIP, COND_CLIP)
                flag = np.zeros((n, 1))
                if null is not False:  # per-example null mask (training-time dropout)
                    drop = np.asarray(null, bool).reshape(n, 1)
                    c = np.where(drop, 0.0, c)
                    flag = drop.astype(float)
            parts += [c, flag]
        elif condition is not None:
            raise UsageError("unconditional model called with a condition")
        return np.concatenate(parts, axis=1)

    def eps(self, x, t, condition=None, null=False) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 2
        xb = x[None] if single else x
        out = neural.forward(self.net, self._inputs(xb, t, condition, null)).reshape(xb.shape)
        out = _project(out)
        return out[0] if single else out

    def eps_vjp(self, x, t, v, condition=None, null=False) -> np.ndarray:
        """Input-gradient of <P eps_hat(x), v> (batched, projected)."""
        x = np.asarray(x, dtype=float)
        n = x.shape[0]
        inp = self._inputs(x, t, condition, null)
        _, g_in = neural.backward(self.net, inp, _project(np.asarray(v)).reshape(n, -1))
        return _project(g_in[:, : self.M * self.D].reshape(x.shape))


class Denoiser:
    """Noise predictor bound to a conditioning choice.

    ``w=None`` evaluates the model once (with ``condition`` or the null token);
    a number turns on classifier-free guidance with weight ``w``. ``eps_scale``
    multiplies the prediction, which scales the score by the same factor.
    """

    def __init__(self, model, condition=None, w=None, null=False, eps_scale=1.0):
        self.model = model
        self.condition = condition
        self.w = w
        self.null = null
        self.eps_scale = eps_scale
        if w is not None and condition is None:
            raise UsageError("classifier-free guidance needs a condition")

    def eps(self, x, t):
        m = self.model
        if self.w is None:
            out = m.eps(x, t, self.condition, self.null)
        else:
            out = -self.w * m.eps(x, t, None, True) + (1.0 + self.w) * m.eps(x, t, self.condition)
        return out if self.eps_scale == 1.0 else self.eps_scale * out

    def eps_vjp(self, x, t, v):
        m = self.model
        if self.w is None:
            out = m.eps_vjp(x, t, v, self.condition, self.null)
        else:
            out = (-self.w * m.eps_vjp(x, t, v, None, True)
                   + (1.0 + self.w) * m.eps_vjp(x, t, v, self.condition))
        return out if self.eps_scale == 1.0 else self.eps_scale * out

    def score(self, x, t, sched: NoiseSchedule):
        return eps_to_score(self.eps(x, t), t, sched)


def as_denoiser(model_or_denoiser) -> Denoiser:
    return model_or_denoiser if isinstance(model_or_denoiser, Denoiser) else Denoiser(model_or_denoiser)


def eps_to_score(eps, t, sched: NoiseSchedule):
    t = np.asarray(t)
    if np.any(t < 1) or np.any(t > sched.T):
        raise IndexError(f"timestep {t} outside 1..{sched.T}")
    return -eps / _bcast(np.sqrt(1.0 - sched.bar_alpha[t]), eps)


def score_at(model, x_t, t, sched: NoiseSchedule, condition=None, null=False) -> np.ndarray:
    """-eps_hat / sqrt(1 - abar_t); the noise predictors already project onto the subspace."""
    return eps_to_score(model.eps(x_t, t, condition, null), t, sched)


def cfg_score(model, x_t, t, sched: NoiseSchedule, condition, w: float) -> np.ndarray:
    """-w * s_uncond + (1 + w) * s_cond; w = -1 is unconditional, w = 0 conditional."""
    s_u = score_at(model, x_t, t, sched, None, True)
    s_c = score_at(model, x_t, t, sched, condition)
    return -w * s_u + (1.0 + w) * s_c


# -- analytic stand-ins used as oracles -----------------------------------

class GaussianDataScore:
    """Exact noise predictor for data x0 = scale * (subspace standard Gaussian).

    The noisy marginal is a subspace Gaussian with variance
    ``abar_t scale^2 + 1 - abar_t`` per orthonormal direction.
    """

    conditional = False

    def __init__(self, sched: NoiseSchedule, M: int, D: int, scale: float = 1.0):
        self.sched, self.M, self.D, self.scale = sched, M, D, scale

    def var(self, t):
        ab = self.sched.bar_alpha[np.asarray(t)]
        return ab * self.scale**2 + 1.0 - ab

    def _coef(self, t, x):
        ab = self.sched.bar_alpha[np.asarray(t)]
        return _bcast(np.sqrt(1.0 - ab) / self.var(t), x)

    def eps(self, x, t, condition=None, null=False):
        x = np.asarray(x, dtype=float)
        return self._coef(t, x) * _project(x)

    def eps_vjp(self, x, t, v, condition=None, null=False):
        return self._coef(t, np.asarray(x)) * _project(np.asarray(v))

    def score(self, x, t):
        x = np.asarray(x, dtype=float)
        return -_project(x) / _bcast(self.var(t), x)

    def sample_data(self, n, rng):
        return self.scale * sample_subspace_gaussian(self.M, self.D, rng, size=n)


class KnownCleanScore:
    """Per-sample exact predictor when the clean point sets are known."""

    conditional = False

    def __init__(self, sched: NoiseSchedule, x0):
        self.sched = sched
        self.x0 = np.asarray(x0, dtype=float)
        self.M, self.D = self.x0.shape[-2:]

    def eps(self, x, t, condition=None, null=False):
        ab = self.sched.bar_alpha[np.asarray(t)]
        x = np.asarray(x, dtype=float)
        return _project((x - _bcast(np.sqrt(ab), x) * self.x0) / _bcast(np.sqrt(1.0 - ab), x))

    def eps_vjp(self, x, t, v, condition=None, null=False):
        ab = self.sched.bar_alpha[np.asarray(t)]
        return _project(np.asarray(v)) / _bcast(np.sqrt(1.0 - ab), np.asarray(v))


# -- training ---------------------------------------------------------------

@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 64
    lr: float = 1e-3
    lr_final: float | None = None
    seed: int = 0
    p_drop: float = 0.1
    loss_weight: str = "constant"

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.lr <= 0:
            raise ConfigError("epochs, batch_size and lr must be positive")
        if not 0.0 <= self.p_drop <= 1.0:
            raise ConfigError(f"p_drop must lie in [0, 1], got {self.p_drop}")
        if self.loss_weight != "constant":
            raise ConfigError("only the constant (simple) loss weight is supported")

    def to_dict(self):
        return asdict(self)


def _loss_and_grads(model: ScoreModel, x0, t, eps, sched, conditions=None, null=False):
    x_t = forward_perturb(x0, t, eps, sched)
    inp = model._inputs(x_t, t, conditions, null)
    out, cache = neural.forward_cache(model.net, inp)
    resid = _project(out.reshape(x0.shape)) - eps
    n = x0.shape[0]
    loss = float((resid**2).sum() / n)
    g_out = _project(2.0 * resid / n).reshape(n, -1)
    grads, _ = neural.backward(model.net, inp, g_out, cache)
    return loss, grads


def dsm_loss(model, batch, sched: NoiseSchedule, rng: np.random.Generator, conditions=None) -> float:
    """Mean over the batch of ||eps_hat(x_t, t[, c]) - eps||^2, t ~ U{1..T}."""
    x0 = np.asarray(batch, dtype=float)
    if x0.ndim != 3 or x0.shape[0] == 0:
        raise ShapeError(f"batch must be a nonempty (n, M, D) array, got {x0.shape}")
    if getattr(model, "conditional", False) != (conditions is not None):
        raise UsageError("conditions must be given exactly when the model is conditional")
    n, M, D = x0.shape
    t = rng.integers(1, sched.T + 1, size=n)
    eps = sample_subspace_gaussian(M, D, rng, size=n)
    x_t = forward_perturb(x0, t, eps, sched)
    pred = model.eps(x_t, t, conditions) if conditions is not None else model.eps(x_t, t)
    return float(((pred - eps) ** 2).sum() / n)


def train_score(model: ScoreModel, dataset, cfg: TrainConfig, sched: NoiseSchedule, conditions=None):
    """Adam on the simple denoising loss; returns (trained copy, per-epoch losses)."""
    x = project_zero_com(np.asarray(dataset, dtype=float))
    if x.shape[0] == 0:
        raise ShapeError("empty dataset")
    if model.conditional != (conditions is not None):
        raise UsageError("conditions must be given exactly when the model is conditional")
    if conditions is not None:
        conditions = np.asarray(conditions, float).reshape(x.shape[0], -1)
    model = model.copy()
    rng = np.random.default_rng(cfg.seed)
    params = model.net.params()
    state = neural.AdamState.for_params(params, cfg.lr)
    n = x.shape[0]
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    total = cfg.epochs * steps_per_epoch
    losses = []
    good = [p.copy() for p in params]
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        acc = 0.0
        for s in range(steps_per_epoch):
            if cfg.lr_final is not None:
                frac = (epoch * steps_per_epoch + s) / max(total - 1, 1)
                state.lr = cfg.lr_final + 0.5 * (cfg.lr - cfg.lr_final) * (1 + math.cos(math.pi * frac))
            idx = order[s * cfg.batch_size:(s + 1) * cfg.batch_size]
            xb = x[idx]
            t = rng.integers(1, sched.T + 1, size=len(idx))
            eps = sample_subspace_gaussian(model.M, model.D, rng, size=len(idx))
            cb, null = None, False
            if conditions is not None:
                cb = conditions[idx]
                null = rng.random(len(idx)) < cfg.p_drop
            with np.errstate(over="ignore", invalid="ignore"):
                loss, grads = _loss_and_grads(model, xb, t, eps, sched, cb, null)
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}", checkpoint=good)
            try:
                neural.adam_step(params, grads, state)
            except TrainingError as err:
                raise TrainingError(str(err), checkpoint=good) from err
            acc += loss * len(idx)
        losses.append(acc / n)
        good = [p.copy() for p in params]
    return model, np.asarray(losses)
