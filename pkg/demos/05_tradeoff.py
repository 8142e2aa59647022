"""Target accuracy versus staying on the data manifold: OG against TACS.

Sweeps the guidance strength z for both samplers at an in-distribution target
(2.0) and an out-of-distribution one (1.5, below the on-sphere minimum sqrt(3)),
with both conventions for the time-corrected shift. Writes CSV tables and SVG
plots to demos/out/.

Run: python3 demos/05_tradeoff.py   (needs demo_score.bin; about 5 minutes)
"""
from pathlib import Path

import numpy as np

from tacs import SamplerConfig, ScoreModel, TimePredConfig, generate_sphere_dataset, toy_schedule, train_time_predictor
from tacs.eval import SweepContext, run_sweep, write_plot_data, write_svg_plot, write_sweep_csv

out = Path(__file__).parent / "out"
sched = toy_schedule(100)
model = ScoreModel.load("demo_score.bin")
tp, _ = train_time_predictor(generate_sphere_dataset(5000, np.random.default_rng(0)).points, sched,
                             TimePredConfig(epochs=40, batch_size=256))
zs = [0, 1, 2, 5, 10]

for target in (2.0, 1.5):
    series_mae, series_l2 = {}, {}
    runs = [("og", "state"), ("tacs", "state"), ("tacs", "drift")]
    for method, shift in runs:
        base = SamplerConfig.defaults(100, method=method, shift=shift)
        reps = run_sweep("z", zs, base, SweepContext(model, sched, "sphere", target, 500, 7, tp=tp))
        name = method if method == "og" else f"{method}-{shift}"
        write_sweep_csv(out / f"z_{name}_target{target}.csv", reps)
        series_mae[name] = (zs, [r.mae for r in reps])
        series_l2[name] = (zs, [r.manifold_l2 for r in reps])
        print(f"target {target}  {name:11s}", "  ".join(f"z={r.axis_value}: {r.mae:.3f}/{r.manifold_l2:.4f}" for r in reps))
    write_plot_data(out / f"z_target{target}_plot.csv",
                    {**{f"{k}_mae": v for k, v in series_mae.items()}, **{f"{k}_l2": v for k, v in series_l2.items()}})
    write_svg_plot(out / f"z_target{target}_mae.svg", series_mae, "z", "MAE to target")
    write_svg_plot(out / f"z_target{target}_l2.svg", series_l2, "z", "manifold L2", logy=True)
print("columns are MAE / manifold L2; tables in", out)
