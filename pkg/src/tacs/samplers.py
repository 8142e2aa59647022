"""Ancestral, CFG, online-guided and time-corrected samplers.

All chains run as a batch ``(n, M, D)``. Randomness is split into three
independent streams derived from one seed: the initial state, per-step
noise, and guidance Monte-Carlo draws. Methods that share a seed therefore
share noise, which is what makes the degenerate cases coincide exactly.

Conventions:
  * steps run t = T, ..., 1 and no noise is added on the final step;
  * ``og`` adds ``z * g`` to the score inside the reverse update;
  * ``tacs`` shifts the state, ``x' = x + z * g``, predicts and clips the
    timestep, takes Tweedie's estimate at the predicted time and re-noises
    to t - 1. Time correction applies whenever t <= t_tcs; guidance only
    inside [t_og_end, t_og].
"""
from __future__ import annotations

import hashlib
import io
import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import ConfigError
from .geometry import atomic_write, sample_subspace_gaussian
from .guidance import GuidanceConfig, clip_gradient, guidance_batch
from .schedule import NoiseSchedule, _bcast, forward_perturb, tweedie
from .score import Denoiser, as_denoiser
from .timepred import PREDICTION_MODES, clip_time, predict_time

METHODS = ("ancestral", "cfg", "og", "tcs", "tacs")
SHIFTS = ("state", "drift")


@dataclass
class SamplerConfig:
    method: str = "ancestral"
    z: float = 1.0
    delta: int = 10
    t_tcs: int = 600
    t_og: int = 600
    t_og_end: int = 20
    w: float = 0.0
    guidance: GuidanceConfig = field(default_factory=GuidanceConfig)
    prediction_mode: str = "argmax"
    tp_uses_condition: bool = False
    record_stride: int = 0
    shift: str = "state"

    def __post_init__(self):
        if isinstance(self.guidance, dict):
            self.guidance = GuidanceConfig.from_dict(self.guidance)
        if self.method not in METHODS:
            raise ConfigError(f"sampler.method must be one of {METHODS}, got {self.method!r}")
        if self.method == "tcs":
            self.z = 0.0
        if self.z < 0:
            raise ConfigError("sampler.z must be >= 0")
        if self.delta < 0:
            raise ConfigError("sampler.delta must be >= 0")
        if not 0 <= self.t_og_end <= self.t_og:
            raise ConfigError("sampler needs 0 <= t_og_end <= t_og")
        if self.t_tcs < 0:
            raise ConfigError("sampler.t_tcs must be >= 0")
        if self.prediction_mode not in PREDICTION_MODES:
            raise ConfigError(f"sampler.prediction_mode must be one of {PREDICTION_MODES}")
        if self.shift not in SHIFTS:
            raise ConfigError(f"sampler.shift must be one of {SHIFTS}, got {self.shift!r}")
        self.guidance.z = self.z

    @classmethod
    def defaults(cls, T: int, **overrides) -> "SamplerConfig":
        """Window defaults scaled from the T=1000 values 600 / 600 / 20 and delta=10."""
        base = dict(t_tcs=round(0.6 * T), t_og=round(0.6 * T), t_og_end=round(0.02 * T),
                    delta=max(1, round(0.01 * T)))
        base.update(overrides)
        return cls(**base)

    def check(self, T: int) -> None:
        if self.t_og > T or self.t_tcs > T:
            raise ConfigError(f"sampler windows exceed T={T}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["guidance"] = self.guidance.to_dict()
        return d

    @classmethod
    def from_dict(cls, d) -> "SamplerConfig":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"sampler: unknown keys {sorted(unknown)}")
        return cls(**d)

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class StepEntry:
    t: int
    t_pred: np.ndarray | None
    guidance_norm: np.ndarray | None
    fallback: np.ndarray
    com_max: float


@dataclass
class TrajectoryRecord:
    steps: list
    final: np.ndarray
    seed: object = None
    config_hash: str = ""
    snapshots: dict = field(default_factory=dict)

    @property
    def fallback_count(self) -> int:
        return int(sum(int(s.fallback.sum()) for s in self.steps))

    @property
    def fallback_rate(self) -> float:
        n = len(self.final) * max(1, sum(s.guidance_norm is not None for s in self.steps))
        return self.fallback_count / n if n else 0.0

    def to_csv(self, path) -> None:
        """Rows ``chain_id, step_t, t_pred, guidance_norm, fallback_flag``."""
        buf = io.StringIO()
        buf.write("chain_id,step_t,t_pred,guidance_norm,fallback_flag\n")
        for c in range(len(self.final)):
            for s in self.steps:
                tp = "" if s.t_pred is None else str(int(s.t_pred[c]))
                gn = "" if s.guidance_norm is None else repr(float(s.guidance_norm[c]))
                buf.write(f"{c},{s.t},{tp},{gn},{int(s.fallback[c])}\n")
        atomic_write(path, buf.getvalue().encode())


def rng_streams(rng):
    """(init, noise, guidance) generators from a seed or a Generator."""
    if isinstance(rng, np.random.Generator):
        return tuple(rng.spawn(3))
    return tuple(np.random.default_rng(s) for s in np.random.SeedSequence(rng).spawn(3))


def reverse_step(model, x_t, t: int, sched: NoiseSchedule, rng: np.random.Generator,
                 condition=None, w=None, drift=None) -> np.ndarray:
    """One ancestral DDPM update.

    mu = (x_t + beta_t * (score + drift)) / sqrt(alpha_t); for t > 1 add
    sqrt(beta_tilde_t) times a subspace Gaussian. ``model`` may be a Denoiser;
    otherwise ``condition``/``w`` select conditional or CFG evaluation.
    """
    if not 1 <= t <= sched.T:
        raise IndexError(f"timestep {t} outside 1..{sched.T}")
    den = model if isinstance(model, Denoiser) else Denoiser(model, condition, w)
    x = np.asarray(x_t, dtype=float)
    s = den.score(x, t, sched)
    if drift is not None:
        s = s + drift
    mu = (x + sched.beta_at(t) * s) / np.sqrt(sched.alpha_at(t))
    if t == 1:
        return mu
    M, D = x.shape[-2:]
    size = None if x.ndim == 2 else x.shape[0]
    return mu + np.sqrt(sched.posterior_variance(t)) * sample_subspace_gaussian(M, D, rng, size=size)


def _denoiser_for(model, condition, w):
    """Conditional models get CFG with weight ``w`` when a condition is given
    and the null token otherwise."""
    if isinstance(model, Denoiser):
        return model
    if getattr(model, "conditional", False):
        if condition is None:
            return Denoiser(model, None, None, null=True)
        return Denoiser(model, condition, w)
    if condition is not None:
        raise ConfigError("a condition was given but the model is unconditional")
    return Denoiser(model)


def run_sampler(model, sched: NoiseSchedule, n: int, M: int, D: int, cfg: SamplerConfig, rng,
                tp=None, prop=None, target_c=None, condition=None):
    """Shared loop behind every sampler; returns ``(samples, TrajectoryRecord)``.

    ``tp=None`` with a correcting method uses the nominal timestep (an oracle
    predictor).
    """
    cfg.check(sched.T)
    init_rng, noise_rng, guide_rng = rng_streams(rng)
    if cfg.method == "cfg" and condition is None:
        raise ConfigError("method 'cfg' needs a condition")
    den = _denoiser_for(model, condition, cfg.w)
    x = sample_subspace_gaussian(M, D, init_rng, size=n)
    guided = cfg.method in ("og", "tacs") and cfg.z > 0
    correcting = cfg.method in ("tcs", "tacs")
    if guided and prop is None:
        raise ConfigError(f"method {cfg.method!r} with z > 0 needs a property estimator")
    steps, snaps = [], {}
    with np.errstate(all="ignore"):
        for t in range(sched.T, 0, -1):
            if cfg.record_stride and (t % cfg.record_stride == 0 or t == sched.T):
                snaps[t] = x.copy()
            com = float(np.abs(x.mean(axis=-2)).max()) if n else 0.0
            g = gnorm = tpred = None
            fallback = np.zeros(n, bool)
            if guided and cfg.t_og_end <= t <= cfg.t_og:
                g, ok, _ = guidance_batch(x, t, target_c, den, sched, prop, cfg.guidance, guide_rng)
                fallback = ~ok
                g[fallback] = 0.0
                g = clip_gradient(g, cfg.guidance.kappa)
                gnorm = np.sqrt((g * g).sum(axis=(1, 2)))
            if correcting and t <= cfg.t_tcs:
                if g is None:
                    xp = x
                elif cfg.shift == "drift":
                    xp = x + cfg.z * sched.beta_at(t) * g
                else:
                    xp = x + cfg.z * g
                if tp is None:
                    tpred = np.full(n, t)
                else:
                    tc = condition if cfg.tp_uses_condition else None
                    tpred = np.atleast_1d(predict_time(tp, xp, cfg.prediction_mode, tc))
                    tpred = np.atleast_1d(clip_time(tpred, t, cfg.delta, sched.T))
                x0h = tweedie(xp, tpred, den.score(xp, tpred, sched), sched)
                if t > 1:
                    x = forward_perturb(x0h, t - 1, sample_subspace_gaussian(M, D, noise_rng, size=n), sched)
                else:
                    x = x0h
            else:
                drift = None if g is None else cfg.z * g
                x = reverse_step(den, x, t, sched, noise_rng, drift=drift)
            steps.append(StepEntry(t, tpred, gnorm, fallback, com))
    seed = rng if not isinstance(rng, np.random.Generator) else None
    return x, TrajectoryRecord(steps, x, seed, cfg.config_hash(), snaps)


def sample_ancestral(model, sched: NoiseSchedule, M: int, n: int, rng, D: int = 3,
                     conditions=None, w=None, return_record=False):
    """n independent reverse chains from subspace noise to t = 0.

    With ``conditions`` the model is evaluated conditionally, or with
    classifier-free guidance when ``w`` is given.
    """
    cfg = SamplerConfig(method="cfg" if conditions is not None else "ancestral",
                        w=0.0 if w is None else w, t_tcs=0, t_og=0, t_og_end=0)
    x, rec = run_sampler(model, sched, n, M, D, cfg, rng, condition=conditions)
    return (x, rec) if return_record else x


def sample_og(model, sched, prop, target_c, cfg: SamplerConfig, rng, n: int, M: int, D: int = 3,
              condition=None):
    """Online guidance in drift form: score + z * g inside [t_og_end, t_og]."""
    if cfg.method != "og":
        raise ConfigError("sample_og needs method='og'")
    return run_sampler(model, sched, n, M, D, cfg, rng, prop=prop, target_c=target_c, condition=condition)


def sample_tacs(model, tp, sched, prop, target_c, cfg: SamplerConfig, rng, n: int, M: int, D: int = 3,
                condition=None):
    """Time-corrected sampling, with online guidance when method='tacs'."""
    if cfg.method not in ("tcs", "tacs"):
        raise ConfigError("sample_tacs needs method 'tcs' or 'tacs'")
    return run_sampler(model, sched, n, M, D, cfg, rng, tp=tp, prop=prop, target_c=target_c,
                       condition=condition)


def sample_tweedie_resample(model, sched: NoiseSchedule, n: int, M: int, D: int, rng, t_start: int):
    """Reference chain: plain reverse steps above ``t_start``, then
    x_{t-1} = forward(Tweedie(x_t, t), t - 1) with fresh noise."""
    init_rng, noise_rng, _ = rng_streams(rng)
    den = as_denoiser(model)
    x = sample_subspace_gaussian(M, D, init_rng, size=n)
    for t in range(sched.T, 0, -1):
        if t > t_start:
            x = reverse_step(den, x, t, sched, noise_rng)
            continue
        tt = np.full(n, t)
        x0 = tweedie(x, tt, den.score(x, tt, sched), sched)
        x = forward_perturb(x0, t - 1, sample_subspace_gaussian(M, D, noise_rng, size=n), sched) if t > 1 else x0
    return x


# -- exposure bias ---------------------------------------------------------

def _drift_rows(t_list, preds):
    rows = []
    for t, p in zip(t_list, preds):
        d = np.asarray(p, float) - t
        rows.append({"t": int(t), "mean_drift": float(d.mean()),
                     "std_drift": float(d.std(ddof=1)) if len(d) > 1 else None, "n": len(d)})
    return rows


def exposure_bias_probe(model, tp, sched: NoiseSchedule, n: int, rng, M: int = 3, D: int = 3,
                        score_scale: float = 1.0, mode: str = "argmax") -> list[dict]:
    """Mean and std of (t_pred - t) along n unconditional reverse chains.

    ``score_scale`` multiplies the model's score, e.g. 1.5 to inject a
    controlled sampler error.
    """
    base = as_denoiser(model) if isinstance(model, Denoiser) else _denoiser_for(model, None, None)
    den = Denoiser(base.model, base.condition, base.w, base.null, base.eps_scale * score_scale)
    init_rng, noise_rng, _ = rng_streams(rng)
    x = sample_subspace_gaussian(M, D, init_rng, size=n)
    ts, preds = [], []
    with np.errstate(all="ignore"):
        for t in range(sched.T, 0, -1):
            ts.append(t)
            preds.append(np.atleast_1d(predict_time(tp, x, mode)))
            x = reverse_step(den, x, t, sched, noise_rng)
    return _drift_rows(ts, preds)


def forward_drift_table(tp, data, sched: NoiseSchedule, rng: np.random.Generator,
                        per_t: int | None = None, mode: str = "argmax") -> list[dict]:
    """Same table on forward-noised data, where the predictor has no sampler error to detect."""
    x0 = np.asarray(data, dtype=float)
    per_t = len(x0) if per_t is None else per_t
    M, D = x0.shape[-2:]
    ts, preds = [], []
    for t in range(sched.T, 0, -1):
        idx = np.arange(per_t) % len(x0)
        xt = forward_perturb(x0[idx], t, sample_subspace_gaussian(M, D, rng, size=per_t), sched)
        ts.append(t)
        preds.append(np.atleast_1d(predict_time(tp, xt, mode)))
    return _drift_rows(ts, preds)


def write_drift_csv(path, rows) -> None:
    buf = io.StringIO()
    buf.write("t,mean_drift,std_drift,n\n")
    for r in rows:
        std = "" if r["std_drift"] is None else repr(r["std_drift"])
        buf.write(f"{r['t']},{r['mean_drift']!r},{std},{r['n']}\n")
    atomic_write(path, buf.getvalue().encode())
