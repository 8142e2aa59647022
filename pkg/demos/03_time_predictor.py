"""How well can the timestep be read off a noisy sphere molecule?

Trains the invariant time predictor and compares it with a Monte-Carlo Bayes
classifier that knows the data distribution exactly. On this task the noisy
sample carries little information about t, and even the Bayes classifier is
mostly wrong in the middle of the schedule.

Run: python3 demos/03_time_predictor.py   (a few minutes)
"""
import numpy as np

from tacs import TimePredConfig, generate_sphere_dataset, predict_time, toy_schedule, train_time_predictor
from tacs.geometry import sample_subspace_gaussian, subspace_basis
from tacs.samplers import forward_drift_table
from tacs.schedule import forward_perturb

sched = toy_schedule(100)
train = generate_sphere_dataset(5000, np.random.default_rng(0))
hold = generate_sphere_dataset(300, np.random.default_rng(1))
tp, hist = train_time_predictor(train.points, sched, TimePredConfig(epochs=40, batch_size=256))
print("band        top1   within5")
for r in hist["profile"]:
    print(f"{r['band_lo']:3d}-{r['band_hi']:3d}   {r['top1']:.3f}  {r['within_delta']:.3f}")

# %% Bayes classifier: p(x_t | t) is a mixture of Gaussians centered on scaled data points,
# estimated with 2000 reference molecules in 6-dim subspace coordinates.
Q = subspace_basis(3)
coords = lambda x: np.einsum("ma,nmd->nad", Q, x).reshape(len(x), -1)
ref = coords(generate_sphere_dataset(2000, np.random.default_rng(2)).points)
rng = np.random.default_rng(3)
print("\n  t   bayes within5   learned within5   bayes mean drift   learned mean drift")
for t in range(40, 91, 10):
    xt = forward_perturb(hold.points, t, sample_subspace_gaussian(3, 3, rng, size=len(hold)), sched)
    y = coords(xt)
    logp = np.empty((len(y), sched.T))
    for s in range(1, sched.T + 1):
        var = 1 - sched.bar_alpha[s]
        d2 = ((y[:, None] - np.sqrt(sched.bar_alpha[s]) * ref[None]) ** 2).sum(-1)
        lp = -0.5 * d2 / var - 3 * np.log(var)
        m = lp.max(1)
        logp[:, s - 1] = m + np.log(np.exp(lp - m[:, None]).mean(1))
    bayes = logp.argmax(1) + 1
    learned = predict_time(tp, xt)
    print(f"{t:3d}   {np.mean(np.abs(bayes - t) <= 5):13.3f}   {np.mean(np.abs(learned - t) <= 5):15.3f}"
          f"   {np.mean(bayes - t):16.1f}   {np.mean(learned - t):18.1f}")

rows = forward_drift_table(tp, hold.points, sched, np.random.default_rng(4))
band = [r["mean_drift"] for r in rows if 40 <= r["t"] <= 90]
print(f"\nlearned predictor, mean drift over t in [40, 90]: {np.mean(band):.1f} steps")
