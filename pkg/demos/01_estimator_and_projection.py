# %% [markdown]
# # One NESHT step, taken apart
#
# A NESHT step has two halves: a zeroth-order gradient estimate followed by
# a hard-thresholding projection. This script walks through both on a small
# sparse quadratic where the true smoothed gradient is known in closed form.

# %%
import numpy as np

from nesht import (
    EstimatorConfig,
    HtConfig,
    OptimizerConfig,
    SparseQuadratic,
    averaged_estimate,
    derive_stream,
    initial_state,
    sample_estimates,
    step,
    trunc,
)

np.set_printoptions(precision=3, suppress=True)

# %% [markdown]
# ## The problem
#
# `f(theta) = -||theta - theta*||^2 + noise` with only three nonzero entries
# in `theta*`. Gaussian smoothing keeps the gradient linear:
# `grad F_sigma(theta) = -2 (theta - theta*)`.

# %%
theta_star = np.array([1.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.5, 0.0])
problem = SparseQuadratic(theta_star, scale=1.0, noise_std=0.1)
theta = np.zeros(8)
sigma = 0.5
print("true smoothed gradient:", problem.exact_smoothed(theta, sigma)[1] + 0.0)

# %% [markdown]
# ## The estimator
#
# Each estimate perturbs `theta` with `n` Gaussian directions, runs `N`
# rollouts per direction and averages `f * eps / sigma`. A single estimate is
# noisy; the noise shrinks like `1/n`.

# %%
root = derive_stream(0)
for n in (1, 16, 256):
    g = averaged_estimate(theta, problem, EstimatorConfig(sigma, n=n), root.child(n)).g
    print(f"n={n:4d}", g)

# %% [markdown]
# Averaging many independent estimates recovers the true gradient: the
# estimator is unbiased for the smoothed objective.

# %%
G = sample_estimates(theta, problem, EstimatorConfig(sigma, n=4), derive_stream(1), 20_000)
print("mean of 20000 estimates:", G.mean(axis=0))
print("standard errors:        ", G.std(axis=0, ddof=1) / np.sqrt(len(G)))

# %% [markdown]
# ## The projection
#
# `trunc(v, k)` keeps the `k` largest-magnitude coordinates and zeroes the
# rest; among equal magnitudes the lower index wins. It is the Euclidean
# projection onto vectors with at most `k` nonzeros.

# %%
v = np.array([0.3, -2.0, 0.1, 2.0, -0.3, 0.05, 1.0, 0.0])
for k in (1, 2, 3, 5):
    print(f"k={k}", trunc(v, k))

# %% [markdown]
# ## Putting the halves together
#
# `step` estimates the gradient at `theta_t`, takes the ascent step and
# projects. With `k = 3` the iterate stays 3-sparse from the first step on.

# %%
cfg = OptimizerConfig(alpha=0.1, T=30, estimator=EstimatorConfig(sigma, n=32), ht=HtConfig(3))
state = initial_state(problem, cfg)
for t in range(cfg.T):
    state = step(state, problem, cfg)
    if t % 10 == 9:
        print(f"t={state.t:2d}", state.theta, " distance", round(float(np.linalg.norm(state.theta - theta_star)), 3))
