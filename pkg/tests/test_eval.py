import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tacs import SamplerConfig, mae_to_target, run_sweep
from tacs.errors import ConfigError
from tacs.eval import (SweepContext, evaluate_samples, manifold_l2, mae_details, write_plot_data,
                       write_sweep_csv, write_sweep_json)
from tacs.geometry import read_csv_table
from tacs.samplers import run_sampler
from tacs.tasks import energy_property, get_task, surrogate_energy


def _sets(n, seed):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(n, 3, 3))
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def test_mae_trivial_cases():
    x = _sets(5, 0)
    e = surrogate_energy(x)
    assert mae_to_target(x, e, energy_property()) == 0.0
    assert mae_to_target(x[0], e[0] + 0.3, energy_property()) == pytest.approx(0.3)


def test_invalid_samples_are_excluded():
    x = _sets(4, 1)
    x[1] = 0.0  # coincident atoms
    x[2, 0, 0] = np.nan
    e = surrogate_energy(x, strict=False)
    mae, invalid, err = mae_details(x, np.nan_to_num(e) + 1.0, energy_property())
    assert invalid == 0.5
    assert mae == pytest.approx(1.0)
    assert np.isnan(err[[1, 2]]).all()


@settings(max_examples=30)
@given(st.integers(0, 10_000))
def test_mae_permutation_covariant(seed):
    rng = np.random.default_rng(seed)
    x = _sets(12, seed)
    c = rng.uniform(1.5, 5.0, size=12)
    perm = rng.permutation(12)
    a = mae_to_target(x, c, energy_property())
    b = mae_to_target(x[perm], c[perm], energy_property())
    assert a == pytest.approx(b, rel=1e-12)


def test_manifold_metric_is_translation_free():
    task = get_task("sphere")
    x = _sets(20, 2)
    assert manifold_l2(x - x.mean(axis=1, keepdims=True), task) < 1e-7
    assert manifold_l2(3 * x, task) > 0.1


def test_sweep_shared_seeds_and_failure_isolation(small_model, small_tp, sched):
    base = SamplerConfig.defaults(100, method="tacs")
    ctx = SweepContext(small_model, sched, "sphere", 2.0, 12, 5, tp=small_tp)
    reps = run_sweep("z", [0, 1], base, ctx)
    tcs, _ = run_sampler(small_model, sched, 12, 3, 3, SamplerConfig.defaults(100, method="tcs"), 5, tp=small_tp)
    ref = evaluate_samples(tcs, 2.0, get_task("sphere"))
    assert reps[0].mae == ref.mae and reps[0].manifold_l2 == ref.manifold_l2
    bad = run_sweep("delta", [1, -3, 2], base, ctx)
    assert [r.error is None for r in bad] == [True, False, True]
    assert "ConfigError" in bad[1].error
    with pytest.raises(ConfigError):
        run_sweep("speed", [1], base, ctx)


def test_parallel_sweep_matches_serial(small_model, small_tp, sched):
    base = SamplerConfig.defaults(100, method="og")
    ctx = SweepContext(small_model, sched, "sphere", 2.5, 8, 1, tp=small_tp)
    serial = run_sweep("sigma", [1e-3, 1e-2], base, ctx)
    parallel = run_sweep("sigma", [1e-3, 1e-2], base, ctx, jobs=2)
    assert [r.summary() for r in serial] == [r.summary() for r in parallel]


def test_sweep_outputs(tmp_path, small_model, sched):
    base = SamplerConfig.defaults(100, method="og")
    ctx = SweepContext(small_model, sched, "sphere", 2.0, 6, 0)
    reps = run_sweep("m", [1, 3], base, ctx)
    write_sweep_csv(tmp_path / "s.csv", reps, extra_header="note")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "# note"
    assert lines[1] == "axis_value,mae,manifold_l2,invalid_rate,fallback_rate,n,seed"
    assert read_csv_table(tmp_path / "s.csv").shape == (2, 7)
    write_sweep_json(tmp_path / "s.json", reps, {"axis": "m"})
    doc = json.loads((tmp_path / "s.json").read_text())
    assert doc["meta"]["axis"] == "m" and len(doc["reports"]) == 2
    write_plot_data(tmp_path / "p.csv", {"og": ([1, 3], [r.mae for r in reps])})
    assert (tmp_path / "p.csv").read_text().splitlines()[0] == "series,x,y"
