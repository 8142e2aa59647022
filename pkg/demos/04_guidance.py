"""Online guidance: the gradient that steers a sample toward a target energy.

Run: python3 demos/04_guidance.py   (needs demo_score.bin from 02_train_score.py)
"""
import numpy as np

from tacs import GuidanceConfig, ScoreModel, clip_gradient, og_gradient, surrogate_energy, toy_schedule, tweedie
from tacs.geometry import sample_subspace_gaussian
from tacs.tasks import energy_blackbox, energy_property

sched = toy_schedule(100)
model = ScoreModel.load("demo_score.bin")
rng = np.random.default_rng(0)
x = sample_subspace_gaussian(3, 3, rng, size=4)
t, target = 40, 2.0

# %% The vector differentiates log p(c | x_t) through Tweedie's estimate and the network.
x0 = tweedie(x, t, -model.eps(x, t) / np.sqrt(1 - sched.bar_alpha[t]), sched)
g = og_gradient(x, t, target, model, sched, energy_property(), GuidanceConfig(), rng)
print("energy of Tweedie estimate:", surrogate_energy(x0, strict=False).round(3))
print("guidance norms:            ", np.linalg.norm(g.reshape(4, -1), axis=1).round(3))

# %% A step along g moves the estimate toward the target.
for step in (0.0, 0.05, 0.1):
    y = x + step * g
    y0 = tweedie(y, t, -model.eps(y, t) / np.sqrt(1 - sched.bar_alpha[t]), sched)
    print(f"step {step:4.2f}: |E - target| =", np.abs(surrogate_energy(y0, strict=False) - target).round(3))

# %% Black-box mode: central differences along orthonormal subspace directions.
for k in (2, 6):
    gz = og_gradient(x, t, target, model, sched, energy_blackbox(),
                     GuidanceConfig(mode="zeroth-order", k=k, sigma=0.0), np.random.default_rng(1))
    g0 = og_gradient(x, t, target, model, sched, energy_property(), GuidanceConfig(sigma=0.0), rng)
    cos = (gz * g0).sum(axis=(1, 2)) / np.linalg.norm(gz.reshape(4, -1), axis=1) / np.linalg.norm(g0.reshape(4, -1), axis=1)
    print(f"k={k}: cosine to the analytic vector", cos.round(3))

# %% Clipping caps each vector at kappa without turning it.
print("clipped norms:", np.linalg.norm(clip_gradient(10 * g, 1.0).reshape(4, -1), axis=1).round(6))
