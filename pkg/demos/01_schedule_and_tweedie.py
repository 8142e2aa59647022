"""Noise schedules, the forward process, and Tweedie's clean-sample estimate.

Run: python3 demos/01_schedule_and_tweedie.py
"""
import numpy as np

from tacs import build_linear_schedule, project_zero_com, toy_schedule, tweedie
from tacs.geometry import sample_subspace_gaussian
from tacs.schedule import forward_perturb
from tacs.score import GaussianDataScore

# %% Two schedules. The 100-step toy schedule uses endpoints scaled by 1000/T so
# that the last step is as noisy as the usual 1000-step one.
long = build_linear_schedule(1000, 1e-4, 2e-2)
short = toy_schedule(100)
for s in (long, short):
    print(f"T={s.T:5d}  beta {s.beta_min:.0e}..{s.beta_max:.2f}  abar_T = {s.bar_alpha[-1]:.2e}")
naive = build_linear_schedule(100, 1e-4, 2e-2)
print(f"T=100 with unscaled endpoints leaves abar_T = {naive.bar_alpha[-1]:.2f} (data still visible)")

# %% Point sets live in the zero-center-of-mass subspace.
rng = np.random.default_rng(0)
x = rng.normal(size=(3, 3))
print("CoM before / after projection:", x.mean(0).round(3), project_zero_com(x).mean(0).round(12))

# %% Forward noising and the exact inverse: with the true score (here -eps / sqrt(1 - abar))
# Tweedie's formula returns x0 exactly.
x0 = sample_subspace_gaussian(3, 3, rng, size=4)
for t in (1, 25, 50, 100):
    eps = sample_subspace_gaussian(3, 3, rng, size=4)
    xt = forward_perturb(x0, t, eps, short)
    rec = tweedie(xt, t, -eps / np.sqrt(1 - short.bar_alpha[t]), short)
    print(f"t={t:3d}  |x_t - x0| = {np.abs(xt - x0).max():6.3f}   Tweedie error = {np.abs(rec - x0).max():.1e}")

# %% With only the marginal score (Gaussian data, scale 0.5) Tweedie gives the
# posterior mean, which shrinks toward zero as t grows.
oracle = GaussianDataScore(short, 3, 3, scale=0.5)
data = oracle.sample_data(2000, rng)
for t in (5, 30, 70):
    xt = forward_perturb(data, t, sample_subspace_gaussian(3, 3, rng, size=2000), short)
    est = tweedie(xt, t, oracle.score(xt, t), short)
    print(f"t={t:3d}  std of E[x0 | x_t] = {est.std():.3f}  (data std {data.std():.3f})")
