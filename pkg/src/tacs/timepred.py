"""Timestep classifier over bins 1..T.

Logit column j corresponds to timestep j + 1. Argmax ties resolve to the
smaller timestep; expectation mode rounds sum_t t * p_t half-up.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import neural
from .errors import ConfigError, InvalidInputError, ShapeError, TrainingError
from .geometry import atomic_write, project_zero_com, sample_subspace_gaussian
from .schedule import NoiseSchedule, forward_perturb

FEATURE_MODES = ("invariant-3d", "raw-vector")
PREDICTION_MODES = ("argmax", "expectation")


def featurize_invariant(x) -> np.ndarray:
    """Sorted pairwise distances, sorted atom norms and the mean squared norm,
    all taken after zero-CoM projection."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 2
    xb = x[None] if single else x
    M, D = xb.shape[-2:]
    if M < 2:
        raise InvalidInputError("invariant features need at least two atoms")
    if D != 3:
        raise ShapeError(f"invariant-3d features need D=3, got D={D}")
    xb = xb - xb.mean(axis=-2, keepdims=True)
    i, j = np.triu_indices(M, 1)
    dist = np.sort(np.linalg.norm(xb[:, i] - xb[:, j], axis=-1), axis=-1)
    norms = np.linalg.norm(xb, axis=-1)
    msq = (norms**2).mean(axis=-1, keepdims=True)
    feats = np.concatenate([dist, np.sort(norms, axis=-1), msq], axis=-1)
    return feats[0] if single else feats


def raw_features(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 2:
        return project_zero_com(x).reshape(-1)
    return project_zero_com(x).reshape(len(x), -1)


def _softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class TimePredictor:
    net: neural.Mlp
    T: int
    feature_mode: str = "invariant-3d"
    conditional: bool = False
    condition_dim: int = 0
    feat_shift: np.ndarray | None = None
    feat_scale: np.ndarray | None = None

    def raw_feats(self, x):
        x = np.asarray(x, dtype=float)
        xb = x[None] if x.ndim == 2 else x
        return featurize_invariant(xb) if self.feature_mode == "invariant-3d" else raw_features(xb)

    def inputs(self, x, condition=None):
        f = self.raw_feats(x)
        if self.conditional:
            if condition is None:
                raise ConfigError("conditional time predictor needs a condition")
            c = np.broadcast_to(np.asarray(condition, float).reshape(-1, self.condition_dim),
                                (len(f), self.condition_dim))
            f = np.concatenate([f, c], axis=1)
        return (f - self.feat_shift) / self.feat_scale

    def logits(self, x, condition=None) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = neural.forward(self.net, self.inputs(x, condition))
        return out[0] if x.ndim == 2 else out

    def probs(self, x, condition=None) -> np.ndarray:
        return _softmax(self.logits(x, condition))

    def save(self, path, extra=None):
        meta = {"time_predictor": {"T": self.T, "feature_mode": self.feature_mode,
                                   "conditional": self.conditional, "condition_dim": self.condition_dim,
                                   "feat_shift": self.feat_shift.tolist(), "feat_scale": self.feat_scale.tolist()}}
        neural.save_mlp(path, self.net, {**meta, **(extra or {})})

    @classmethod
    def load(cls, path) -> "TimePredictor":
        net, meta = neural.load_mlp(path)
        d = meta["time_predictor"]
        return cls(net, d["T"], d["feature_mode"], d["conditional"], d["condition_dim"],
                   np.asarray(d["feat_shift"]), np.asarray(d["feat_scale"]))


def predict_from_logits(logits, mode: str = "argmax"):
    logits = np.asarray(logits, dtype=float)
    if mode == "argmax":
        out = np.argmax(logits, axis=-1) + 1
    elif mode == "expectation":
        T = logits.shape[-1]
        mean = (_softmax(logits) * np.arange(1, T + 1)).sum(axis=-1)
        out = np.floor(mean + 0.5).astype(int)
    else:
        raise ConfigError(f"prediction mode must be one of {PREDICTION_MODES}, got {mode!r}")
    return int(out) if np.ndim(out) == 0 else out


def predict_time(tp, x, mode: str = "argmax", condition=None):
    """Predicted timestep(s) in 1..T for one point set or a batch."""
    return predict_from_logits(tp.logits(x, condition), mode)


def clip_time(t_pred, t, delta: int, T: int | None = None):
    """Clamp to [t - delta, t + delta], then to [1, T]."""
    if delta < 0:
        raise ConfigError(f"delta must be >= 0, got {delta}")
    out = np.clip(t_pred, np.asarray(t) - delta, np.asarray(t) + delta)
    out = np.maximum(out, 1)
    if T is not None:
        out = np.minimum(out, T)
    return int(out) if np.ndim(out) == 0 else out


@dataclass
class TimePredConfig:
    epochs: int = 60
    batch_size: int = 128
    lr: float = 2e-3
    lr_final: float | None = 1e-4
    seed: int = 0
    hidden: tuple = (128, 128)
    activation: str = "tanh"
    feature_mode: str = "invariant-3d"
    repeats: int = 4
    holdout_frac: float = 0.1
    n_bands: int = 10
    delta: int = 5

    def __post_init__(self):
        if self.feature_mode not in FEATURE_MODES:
            raise ConfigError(f"feature_mode must be one of {FEATURE_MODES}")
        if self.epochs < 1 or self.batch_size < 1 or self.lr <= 0 or self.repeats < 1:
            raise ConfigError("epochs, batch_size, lr and repeats must be positive")
        if not 0 <= self.holdout_frac < 1:
            raise ConfigError("holdout_frac must lie in [0, 1)")
        self.hidden = tuple(self.hidden)

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


def _feature_stats(tp_like, x0, sched, rng, conditions):
    n = min(len(x0), 2000)
    idx = rng.choice(len(x0), n, replace=False)
    t = rng.integers(1, sched.T + 1, size=n)
    M, D = x0.shape[-2:]
    xt = forward_perturb(x0[idx], t, sample_subspace_gaussian(M, D, rng, size=n), sched)
    f = tp_like.raw_feats(xt)
    if conditions is not None:
        f = np.concatenate([f, conditions[idx]], axis=1)
    scale = f.std(axis=0)
    return f.mean(axis=0), np.where(scale > 1e-12, scale, 1.0)


def train_time_predictor(dataset, sched: NoiseSchedule, cfg: TimePredConfig | None = None, conditions=None):
    """Cross-entropy on (x_t, t) pairs drawn from the forward process.

    Returns ``(predictor, history)``; ``history`` has per-epoch ``loss`` and
    held-out ``accuracy`` plus the final held-out band table ``profile``.
    """
    cfg = cfg or TimePredConfig()
    x = project_zero_com(np.asarray(dataset, dtype=float))
    if len(x) == 0:
        raise ShapeError("empty dataset")
    if conditions is not None:
        conditions = np.asarray(conditions, float).reshape(len(x), -1)
    rng = np.random.default_rng(cfg.seed)
    perm = rng.permutation(len(x))
    n_hold = int(round(cfg.holdout_frac * len(x)))
    hold, train = perm[:n_hold], perm[n_hold:]
    if len(train) == 0:
        raise ShapeError("no training examples left after the hold-out split")
    M, D = x.shape[-2:]
    cdim = 0 if conditions is None else conditions.shape[1]
    n_feat = (M * (M - 1) // 2 + M + 1 if cfg.feature_mode == "invariant-3d" else M * D) + cdim
    net = neural.init_mlp([n_feat, *cfg.hidden, sched.T], rng, cfg.activation)
    tp = TimePredictor(net, sched.T, cfg.feature_mode, conditions is not None, cdim)
    tp.feat_shift, tp.feat_scale = _feature_stats(tp, x[train], sched, rng,
                                                 None if conditions is None else conditions[train])
    params = net.params()
    state = neural.AdamState.for_params(params, cfg.lr)
    xtr = x[train]
    ctr = None if conditions is None else conditions[train]
    n = len(xtr) * cfg.repeats
    steps = math.ceil(n / cfg.batch_size)
    total = steps * cfg.epochs
    history = {"loss": [], "accuracy": []}
    for epoch in range(cfg.epochs):
        order = rng.permutation(n) % len(xtr)
        acc_loss = 0.0
        for s in range(steps):
            if cfg.lr_final is not None:
                frac = (epoch * steps + s) / max(total - 1, 1)
                state.lr = cfg.lr_final + 0.5 * (cfg.lr - cfg.lr_final) * (1 + math.cos(math.pi * frac))
            idx = order[s * cfg.batch_size:(s + 1) * cfg.batch_size]
            b = len(idx)
            t = rng.integers(1, sched.T + 1, size=b)
            xt = forward_perturb(xtr[idx], t, sample_subspace_gaussian(M, D, rng, size=b), sched)
            inp = tp.inputs(xt, None if ctr is None else ctr[idx])
            logits, cache = neural.forward_cache(net, inp)
            p = _softmax(logits)
            loss = float(-np.log(p[np.arange(b), t - 1] + 1e-300).mean())
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite time-predictor loss at epoch {epoch}",
                                    checkpoint=[q.copy() for q in params])
            p[np.arange(b), t - 1] -= 1.0
            grads, _ = neural.backward(net, inp, p / b, cache)
            neural.adam_step(params, grads, state)
            acc_loss += loss * b
        history["loss"].append(acc_loss / n)
        if n_hold:
            hr = np.random.default_rng(cfg.seed + 1)
            tt, tpred = _holdout_predictions(tp, x[hold], sched, hr,
                                             None if conditions is None else conditions[hold])
            history["accuracy"].append(float((tt == tpred).mean()))
    if n_hold:
        hr = np.random.default_rng(cfg.seed + 1)
        history["profile"] = accuracy_profile(tp, x[hold], sched, cfg.n_bands, hr, cfg.delta,
                                              conditions=None if conditions is None else conditions[hold])
    return tp, history


def _holdout_predictions(tp, x0, sched, rng, conditions=None, per_t=None, mode="argmax"):
    """Noise each held-out sample at every timestep (or ``per_t`` samples per t)."""
    M, D = x0.shape[-2:]
    per_t = len(x0) if per_t is None else per_t
    t = np.repeat(np.arange(1, sched.T + 1), per_t)
    idx = np.tile(np.arange(per_t) % len(x0), sched.T)
    xt = forward_perturb(x0[idx], t, sample_subspace_gaussian(M, D, rng, size=len(t)), sched)
    cond = None if conditions is None else conditions[idx]
    return t, predict_time(tp, xt, mode, cond)


def band_edges(T: int, bands) -> list[tuple[int, int]]:
    """``bands`` is a count of equal-width bands or an explicit list of (lo, hi)."""
    if isinstance(bands, int):
        edges = np.linspace(0, T, bands + 1).round().astype(int)
        return [(int(a) + 1, int(b)) for a, b in zip(edges[:-1], edges[1:])]
    return [(int(a), int(b)) for a, b in bands]


def accuracy_table(t_true, t_pred, T: int, bands, delta: int = 5) -> list[dict]:
    """Top-1 and within-delta accuracy for each inclusive band [lo, hi]."""
    t_true = np.asarray(t_true)
    t_pred = np.asarray(t_pred)
    rows = []
    for lo, hi in band_edges(T, bands):
        sel = (t_true >= lo) & (t_true <= hi)
        if not sel.any():
            rows.append({"band_lo": lo, "band_hi": hi, "top1": None, "within_delta": None})
            continue
        rows.append({"band_lo": lo, "band_hi": hi,
                     "top1": float((t_pred[sel] == t_true[sel]).mean()),
                     "within_delta": float((np.abs(t_pred[sel] - t_true[sel]) <= delta).mean())})
    return rows


def accuracy_profile(tp, dataset, sched: NoiseSchedule, bands, rng: np.random.Generator,
                     delta: int = 5, per_t: int | None = None, conditions=None, mode="argmax") -> list[dict]:
    """Per-band accuracy of ``tp`` on forward-noised held-out data."""
    x0 = project_zero_com(np.asarray(dataset, dtype=float))
    t, pred = _holdout_predictions(tp, x0, sched, rng, conditions, per_t, mode)
    return accuracy_table(t, pred, sched.T, bands, delta)


def write_accuracy_csv(path, rows) -> None:
    buf = io.StringIO()
    buf.write("band_lo,band_hi,top1,within_delta\n")
    for r in rows:
        vals = ["" if r[k] is None else repr(r[k]) for k in ("top1", "within_delta")]
        buf.write(f"{r['band_lo']},{r['band_hi']},{vals[0]},{vals[1]}\n")
    atomic_write(path, buf.getvalue().encode())
