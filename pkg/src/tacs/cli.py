"""Command-line experiment driver.

Every command reads one YAML config, resolves seeds and the output directory
(flags beat environment beat file), and writes artifacts under ``<out>/``:

    data/train, data/holdout      labeled point sets
    models/                       score and time-predictor checkpoints
    curves/                       training curves and predictor diagnostics
    samples/<method>/             samples (CSV + binary) and trajectories
    eval/<method>/                EvalReport JSON and per-sample errors
    sweeps/                       sweep tables, plot data, optional SVG
"""
from __future__ import annotations

import argparse
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import config_hash, load_config
from .errors import (ConfigError, GuidanceError, MissingPrerequisiteError, NumericalGuardError,
                     SingularityError, TrainingError)
from .eval import (SweepContext, evaluate_samples, run_sweep, write_plot_data, write_svg_plot,
                   write_sweep_csv, write_sweep_json)
from .geometry import atomic_write, read_points_binary, write_points_binary, write_points_csv
from .guidance import GuidanceConfig
from .samplers import SamplerConfig, forward_drift_table, run_sampler, write_drift_csv
from .schedule import build_linear_schedule
from .score import ScoreModel, TrainConfig, train_score
from .tasks import LabeledPointSets, get_task
from .timepred import TimePredConfig, TimePredictor, train_time_predictor, write_accuracy_csv

EXIT_OK, EXIT_CONFIG, EXIT_MISSING, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("tacs")


class Run:
    """Resolved config plus the output-path conventions shared by commands."""

    def __init__(self, cfg: dict):
        self.cfg = cfg
        self.out = Path(cfg["output"])
        self.hash = config_hash({k: v for k, v in cfg.items() if k != "output"})
        self.stamp = {"tool": "tacs", "version": __version__, "config_hash": self.hash}

    # -- paths --
    def data_dir(self, split):
        return self.out / "data" / split

    @property
    def score_path(self):
        return self.out / "models" / "score.bin"

    @property
    def tp_path(self):
        return self.out / "models" / "timepred.bin"

    def sample_dir(self, method):
        return self.out / "samples" / method

    # -- shared objects --
    def schedule(self):
        s = self.cfg["schedule"]
        if s["type"] != "linear":
            raise ConfigError(f"schedule.type: only 'linear' is supported, got {s['type']!r}")
        return build_linear_schedule(s["T"], s["beta_min"], s["beta_max"])

    def task(self):
        try:
            return get_task(self.cfg["task"]["name"])
        except (KeyError, ValueError) as err:
            raise ConfigError(f"task.name: {err}") from None

    def sampler_config(self, method=None) -> SamplerConfig:
        d = dict(self.cfg["sampler"])
        d["guidance"] = GuidanceConfig.from_dict(d["guidance"])
        if method:
            d["method"] = method
        return SamplerConfig.from_dict(d)

    def load_data(self, split) -> LabeledPointSets:
        return LabeledPointSets.load(self.data_dir(split))

    def load_score(self) -> ScoreModel:
        _require(self.score_path, "train score")
        return ScoreModel.load(self.score_path)

    def load_tp(self) -> TimePredictor:
        _require(self.tp_path, "train timepred")
        return TimePredictor.load(self.tp_path)

    def targets(self, n):
        target = self.cfg["eval"]["target"]
        if isinstance(target, str):
            if target != "labels":
                raise ConfigError(f"eval.target: a number or 'labels', got {target!r}")
            labels = self.load_data("holdout").labels
            return np.resize(labels, n)
        return float(target)

    # -- stamped writers --
    def stamp_text(self, path):
        """Prefix a CSV with a ``#`` provenance line."""
        path = Path(path)
        head = f"# tacs {__version__} config_hash={self.hash}\n"
        atomic_write(path, (head + path.read_text()).encode())

    def write_json(self, path, doc):
        atomic_write(path, json.dumps({**doc, "stamp": self.stamp}, indent=2, sort_keys=True,
                                      default=_jsonable).encode())


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, np.generic):
        return v.item()
    return str(v)


def _require(path, producer):
    if not Path(path).exists():
        raise MissingPrerequisiteError(f"missing {path}; run `tacs {producer}` first")


# -- commands ----------------------------------------------------------------

def cmd_generate_data(run: Run) -> list[Path]:
    task, t = run.task(), run.cfg["task"]
    seed = run.cfg["seeds"]["data"]
    ss_train, ss_hold = np.random.SeedSequence(seed).spawn(2)
    written = []
    for split, ss, n in (("train", ss_train, t["n_train"]), ("holdout", ss_hold, t["n_holdout"])):
        ds = task.generate(n, np.random.default_rng(ss))
        ds.seed = seed
        d = run.data_dir(split)
        ds.save(d)
        for name in ("points.csv", "raw_points.csv", "labels.csv"):
            run.stamp_text(d / name)
        manifest = json.loads((d / "manifest.json").read_text())
        manifest["split"] = split
        run.write_json(d / "manifest.json", manifest)
        log.info("wrote %d %s samples to %s", n, split, d)
        written.append(d)
    return written


def cmd_train(run: Run, which: str) -> Path:
    sched, task = run.schedule(), run.task()
    data = run.load_data("train")
    seed = run.cfg["seeds"]["train"]
    curves = run.out / "curves"
    if which == "score":
        c = run.cfg["score"]
        cond = data.labels[:, None] if c["conditional"] else None
        model = ScoreModel.create(task.M, task.D, sched.T, np.random.default_rng(seed), tuple(c["hidden"]),
                                  c["activation"], c["conditional"], 1,
                                  None if cond is None else cond.mean(0), None if cond is None else cond.std(0))
        tc = TrainConfig(epochs=c["epochs"], batch_size=c["batch_size"], lr=c["lr"], lr_final=c["lr_final"],
                         seed=seed, p_drop=c["p_drop"])
        model, losses = train_score(model, data.points, tc, sched, conditions=cond)
        model.save(run.score_path, {"stamp": run.stamp, "schedule": sched.to_dict()})
        _write_curve(run, curves / "score_loss.csv", {"loss": losses})
        log.info("score model: final epoch loss %.4f", losses[-1])
        return run.score_path
    if which == "timepred":
        c = run.cfg["timepred"]
        cond = data.labels[:, None] if c["conditional"] else None
        tc = TimePredConfig(epochs=c["epochs"], batch_size=c["batch_size"], lr=c["lr"], lr_final=c["lr_final"],
                            seed=seed, hidden=tuple(c["hidden"]), activation=c["activation"],
                            feature_mode=c["feature_mode"], repeats=c["repeats"], holdout_frac=c["holdout_frac"],
                            n_bands=c["n_bands"], delta=c["delta"])
        tp, hist = train_time_predictor(data.points, sched, tc, conditions=cond)
        tp.save(run.tp_path, {"stamp": run.stamp, "schedule": sched.to_dict()})
        curve = {"loss": hist["loss"]}
        if hist["accuracy"]:
            curve["holdout_top1"] = hist["accuracy"]
        _write_curve(run, curves / "timepred_loss.csv", curve)
        if "profile" in hist:
            write_accuracy_csv(curves / "timepred_accuracy.csv", hist["profile"])
            run.stamp_text(curves / "timepred_accuracy.csv")
        hold = run.load_data("holdout") if run.data_dir("holdout").exists() else None
        if hold is not None and not c["conditional"]:
            rows = forward_drift_table(tp, hold.points, sched, np.random.default_rng([seed, 1]))
            write_drift_csv(curves / "timepred_drift.csv", rows)
            run.stamp_text(curves / "timepred_drift.csv")
        return run.tp_path
    raise ConfigError(f"train: expected 'score' or 'timepred', got {which!r}")


def _write_curve(run, path, cols: dict):
    names = list(cols)
    buf = io.StringIO()
    buf.write(",".join(["epoch", *names]) + "\n")
    for i in range(len(cols[names[0]])):
        buf.write(",".join([str(i), *(repr(float(cols[k][i])) for k in names)]) + "\n")
    atomic_write(path, buf.getvalue().encode())
    run.stamp_text(path)


def _sampling_inputs(run: Run, scfg: SamplerConfig, n: int):
    model = run.load_score()
    tp = run.load_tp() if scfg.method in ("tcs", "tacs") else None
    targets = run.targets(n)
    condition = None
    if model.conditional:
        condition = np.broadcast_to(np.asarray(targets, float), (n,)).reshape(n, 1).copy()
    return model, tp, targets, condition


def cmd_sample(run: Run, method: str | None = None) -> Path:
    sched, task = run.schedule(), run.task()
    scfg = run.sampler_config(method)
    n = run.cfg["eval"]["n"]
    model, tp, targets, condition = _sampling_inputs(run, scfg, n)
    x, rec = run_sampler(model, sched, n, task.M, task.D, scfg, run.cfg["seeds"]["sample"], tp=tp,
                         prop=task.prop, target_c=targets, condition=condition)
    if not np.all(np.isfinite(x)):
        bad = int((~np.isfinite(x)).any(axis=(1, 2)).sum())
        raise NumericalGuardError(f"{bad} of {n} chains ended non-finite")
    d = run.sample_dir(scfg.method)
    write_points_csv(d / "samples.csv", x)
    run.stamp_text(d / "samples.csv")
    write_points_binary(d / "samples.bin", x)
    rec.to_csv(d / "trajectory.csv")
    run.stamp_text(d / "trajectory.csv")
    run.write_json(d / "meta.json", {"sampler": scfg.to_dict(), "sampler_hash": scfg.config_hash(),
                                     "seed": run.cfg["seeds"]["sample"], "n": n,
                                     "fallback_rate": rec.fallback_rate, "binary": "samples.bin"})
    log.info("%s: %d samples, fallback rate %.3f", scfg.method, n, rec.fallback_rate)
    return d


def cmd_eval(run: Run, method: str | None = None) -> Path:
    task = run.task()
    scfg = run.sampler_config(method)
    d = run.sample_dir(scfg.method)
    _require(d / "samples.bin", f"sample --method {scfg.method}")
    x = read_points_binary(d / "samples.bin")
    meta = json.loads((d / "meta.json").read_text())
    rep = evaluate_samples(x, run.targets(len(x)), task, scfg.method, meta["sampler_hash"],
                           meta["fallback_rate"], meta["seed"])
    e = run.out / "eval" / scfg.method
    run.write_json(e / "report.json", {"report": rep.summary()})
    buf = io.StringIO()
    buf.write("sample_id,abs_err,manifold\n")
    for i, (a, m) in enumerate(zip(rep.per_sample["abs_err"], rep.per_sample["manifold"])):
        buf.write(f"{i},{float(a)!r},{float(m)!r}\n")
    atomic_write(e / "per_sample.csv", buf.getvalue().encode())
    run.stamp_text(e / "per_sample.csv")
    log.info("%s: mae %.4f manifold_l2 %.4f invalid %.3f", scfg.method, rep.mae, rep.manifold_l2,
             rep.invalid_rate)
    return e


def parse_values(axis: str, text: str) -> list:
    parts = [p.strip() for p in text.split(",") if p.strip()]
    if not parts:
        raise ConfigError("--values is empty")
    if axis == "mode":
        return parts
    try:
        conv = int if axis in ("delta", "m") else float
        return [conv(p) for p in parts]
    except ValueError:
        raise ConfigError(f"--values for axis {axis!r} must be numeric, got {text!r}") from None


def cmd_sweep(run: Run, axis: str, values: list, methods=None, jobs: int = 1) -> Path:
    sched, task = run.schedule(), run.task()
    n = run.cfg["eval"]["n"]
    methods = methods or [run.cfg["sampler"]["method"]]
    out = run.out / "sweeps"
    mae_series, l2_series = {}, {}
    for method in methods:
        scfg = run.sampler_config(method)
        model, tp, targets, condition = _sampling_inputs(run, scfg, n)
        ctx = SweepContext(model, sched, task.name, targets, n, run.cfg["seeds"]["sample"], tp, condition)
        reports = run_sweep(axis, values, scfg, ctx, jobs=jobs)
        stem = out / f"{method}_{axis}"
        write_sweep_csv(stem.with_suffix(".csv"), reports, extra_header=f"tacs {__version__} "
                        f"config_hash={run.hash} method={method} axis={axis}")
        run.write_json(stem.with_suffix(".json"), {"method": method, "axis": axis,
                                                   "reports": [r.summary() for r in reports]})
        for r in reports:
            if r.error:
                log.warning("%s %s=%s failed: %s", method, axis, r.axis_value, r.error)
        xs = [r.axis_value for r in reports]
        mae_series[method] = (xs, [r.mae for r in reports])
        l2_series[method] = (xs, [r.manifold_l2 for r in reports])
    series = {f"{k}_mae": v for k, v in mae_series.items()}
    series.update({f"{k}_manifold_l2": v for k, v in l2_series.items()})
    write_plot_data(out / f"{axis}_plot.csv", series)
    run.stamp_text(out / f"{axis}_plot.csv")
    if axis != "mode":
        write_svg_plot(out / f"{axis}_mae.svg", mae_series, axis, "MAE to target")
        write_svg_plot(out / f"{axis}_manifold.svg", l2_series, axis, "manifold L2")
    return out


# -- argument handling -------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML experiment config")
    common.add_argument("--out", help="output directory (overrides config and TACS_OUT)")
    common.add_argument("--seed-data", type=int)
    common.add_argument("--seed-train", type=int)
    common.add_argument("--seed-sample", type=int)
    common.add_argument("--jobs", type=int, default=1, help="worker processes for sweeps")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="tacs", description="Guided point-set diffusion experiments.")
    p.add_argument("--version", action="version", version=f"tacs {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("generate-data", parents=[common], help="write train and holdout datasets")
    tr = sub.add_parser("train", parents=[common], help="train a model")
    tr.add_argument("which", choices=["score", "timepred"])
    for name, helptext in (("sample", "draw samples"), ("eval", "score saved samples")):
        sp = sub.add_parser(name, parents=[common], help=helptext)
        sp.add_argument("--method", help="override sampler.method")
    sw = sub.add_parser("sweep", parents=[common], help="sweep one sampler axis")
    sw.add_argument("--axis", required=True, choices=["z", "delta", "m", "sigma", "mode", "target"])
    sw.add_argument("--values", required=True, help="comma-separated values")
    sw.add_argument("--methods", help="comma-separated methods (default: sampler.method)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    try:
        overrides = {("seeds", "data"): args.seed_data, ("seeds", "train"): args.seed_train,
                     ("seeds", "sample"): args.seed_sample, ("output",): args.out}
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        run = Run(load_config(args.config, overrides))
        if args.command == "generate-data":
            cmd_generate_data(run)
        elif args.command == "train":
            cmd_train(run, args.which)
        elif args.command == "sample":
            cmd_sample(run, args.method)
        elif args.command == "eval":
            cmd_eval(run, args.method)
        elif args.command == "sweep":
            methods = [m.strip() for m in args.methods.split(",")] if args.methods else None
            cmd_sweep(run, args.axis, parse_values(args.axis, args.values), methods, args.jobs)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingPrerequisiteError as err:
        print(f"missing prerequisite: {err}", file=sys.stderr)
        return EXIT_MISSING
    except (TrainingError, GuidanceError, NumericalGuardError, SingularityError, FloatingPointError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK
