"""Sample-quality metrics and hyperparameter sweeps."""
from __future__ import annotations

import copy
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import ConfigError, InvalidInputError, ShapeError
from .geometry import atomic_write
from .guidance import PropertyEstimator
from .samplers import SamplerConfig, run_sampler
from .tasks import TaskSpec, get_task

AXES = ("z", "delta", "m", "sigma", "mode", "target")


@dataclass
class EvalReport:
    method: str
    config_hash: str
    n: int
    mae: float
    manifold_l2: float
    fallback_rate: float = 0.0
    invalid_rate: float = 0.0
    axis_value: object = None
    seed: object = None
    error: str | None = None
    per_sample: dict = field(default_factory=dict, repr=False)

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("per_sample")
        return d


def _invalid_mask(samples, values):
    finite_x = np.isfinite(samples).all(axis=(-2, -1))
    return ~(finite_x & np.isfinite(values).all(axis=-1))


def mae_details(samples, targets, prop: PropertyEstimator):
    """Returns (mae, invalid_rate, per-sample absolute errors with NaN for invalid)."""
    x = np.asarray(samples, dtype=float)
    if x.ndim == 2:
        x = x[None]
    K = len(x)
    if K == 0:
        raise InvalidInputError("need at least one sample")
    C = prop.condition_dim
    c = np.asarray(targets, float)
    if c.ndim <= 1 and c.size == K * C:
        c = c.reshape(K, C)
    elif c.size == C:
        c = np.broadcast_to(c.reshape(1, C), (K, C))
    else:
        raise ShapeError(f"targets shape {c.shape} does not match {K} samples")
    with np.errstate(all="ignore"):
        vals = prop.evaluate(np.where(np.isfinite(x), x, 0.0)).reshape(K, C)
    bad = _invalid_mask(x, vals)
    err = np.abs(vals - c).mean(axis=-1)
    err = np.where(bad, np.nan, err)
    mae = float(np.nanmean(err)) if (~bad).any() else math.nan
    return mae, float(bad.mean()), err


def mae_to_target(samples, targets, prop: PropertyEstimator) -> float:
    """(1/K) sum |A(x_i) - c_i| over valid samples, using the exact property."""
    return mae_details(samples, targets, prop)[0]


def manifold_l2(samples, task: TaskSpec) -> float:
    x = np.asarray(samples, dtype=float)
    with np.errstate(all="ignore"):
        d = task.manifold_distance(x)
    d = np.atleast_1d(d)
    d = d[np.isfinite(d)]
    return float(d.mean()) if d.size else math.nan


def evaluate_samples(samples, targets, task: TaskSpec, method: str = "", config_hash: str = "",
                     fallback_rate: float = 0.0, seed=None, axis_value=None) -> EvalReport:
    mae, invalid, err = mae_details(samples, targets, task.prop)
    with np.errstate(all="ignore"):
        dist = np.atleast_1d(task.manifold_distance(np.asarray(samples, float)))
    return EvalReport(method, config_hash, len(samples), mae, manifold_l2(samples, task), fallback_rate,
                      invalid, axis_value, seed, per_sample={"abs_err": err, "manifold": dist})


@dataclass
class SweepContext:
    """Everything a sweep cell needs besides the sampler configuration."""
    model: object
    sched: object
    task: str
    target: object
    n: int
    seed: int
    tp: object = None
    condition: object = None


def _apply_axis(base: SamplerConfig, ctx: SweepContext, axis: str, value):
    cfg = copy.deepcopy(base)
    target = ctx.target
    if axis == "z":
        cfg.z = float(value)
        cfg.guidance.z = cfg.z
    elif axis == "delta":
        cfg.delta = int(value)
    elif axis == "m":
        cfg.guidance.m = int(value)
    elif axis == "sigma":
        cfg.guidance.sigma = float(value)
    elif axis == "mode":
        cfg.prediction_mode = str(value)
    elif axis == "target":
        target = value
    else:
        raise ConfigError(f"sweep axis must be one of {AXES}, got {axis!r}")
    cfg.__post_init__()
    return cfg, target


def run_cell(base: SamplerConfig, ctx: SweepContext, axis: str, value) -> EvalReport:
    task = get_task(ctx.task)
    try:
        cfg, target = _apply_axis(base, ctx, axis, value)
        x, rec = run_sampler(ctx.model, ctx.sched, ctx.n, task.M, task.D, cfg, ctx.seed, tp=ctx.tp,
                             prop=task.prop, target_c=target, condition=ctx.condition)
        return evaluate_samples(x, target, task, cfg.method, cfg.config_hash(), rec.fallback_rate,
                                ctx.seed, value)
    except Exception as err:  # one failing cell must not sink the sweep
        return EvalReport(base.method, base.config_hash(), ctx.n, math.nan, math.nan, math.nan, math.nan,
                          value, ctx.seed, error=f"{type(err).__name__}: {err}")


def run_sweep(axis: str, values, base: SamplerConfig, ctx: SweepContext, jobs: int = 1) -> list[EvalReport]:
    """One report per value; every cell reuses ``ctx.seed`` (common random numbers)."""
    if axis not in AXES:
        raise ConfigError(f"sweep axis must be one of {AXES}, got {axis!r}")
    values = list(values)
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            return list(pool.map(run_cell, [base] * len(values), [ctx] * len(values),
                                 [axis] * len(values), values))
    return [run_cell(base, ctx, axis, v) for v in values]


SWEEP_COLUMNS = ("axis_value", "mae", "manifold_l2", "invalid_rate", "fallback_rate", "n", "seed")


def write_sweep_csv(path, reports, extra_header: str = "") -> None:
    buf = io.StringIO()
    if extra_header:
        buf.write(f"# {extra_header}\n")
    buf.write(",".join(SWEEP_COLUMNS) + "\n")
    for r in reports:
        buf.write(",".join(str(getattr(r, k)) for k in SWEEP_COLUMNS) + "\n")
    atomic_write(path, buf.getvalue().encode())


def write_sweep_json(path, reports, meta: dict | None = None) -> None:
    doc = {"meta": meta or {}, "reports": [r.summary() for r in reports]}
    atomic_write(path, json.dumps(doc, indent=2, sort_keys=True, default=str).encode())


def write_plot_data(path, series: dict) -> None:
    """Long-format CSV ``series, x, y`` from {name: (xs, ys)}."""
    buf = io.StringIO()
    buf.write("series,x,y\n")
    for name, (xs, ys) in series.items():
        for a, b in zip(xs, ys):
            buf.write(f"{name},{a},{b}\n")
    atomic_write(path, buf.getvalue().encode())


def write_svg_plot(path, series: dict, xlabel: str = "", ylabel: str = "", logy: bool = False) -> bool:
    """Line plot via matplotlib; returns False when matplotlib is unavailable."""
    try:
        import matplotlib
        matplotlib.use("Agg")
        matplotlib.rcParams["svg.hashsalt"] = "tacs"
        import matplotlib.pyplot as plt
    except ImportError:
        return False
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for name, (xs, ys) in series.items():
        ax.plot(xs, ys, marker="o", label=name)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if logy:
        ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    buf = io.BytesIO()
    fig.savefig(buf, format="svg", metadata={"Date": None})
    plt.close(fig)
    atomic_write(path, buf.getvalue())
    return True
