# %% [markdown]
# # Constants, envelopes and budgets
#
# The convergence analysis rests on three numbers: the smoothness constant
# `L` of the smoothed objective, an envelope on the estimator's mean squared
# error, and the iteration / population sizes that follow from both. Here we
# compute them and hold them against Monte Carlo measurements.

# %%
import math

import numpy as np

from nesht import (
    BoundedStep,
    EstimatorConfig,
    derive_stream,
    episode_complexity,
    lipschitz_probe,
    sample_estimates,
    smoothness_constant,
    theorem_budget,
    theorem_constants,
    variance_bound,
)

# %% [markdown]
# ## Step-size constants
#
# With step size `alpha = c / L` the analysis produces two constants `c1`,
# `c2` that blow up as `c` approaches 0 or 1/2. They are computed exactly.

# %%
for c in ("0.05", "0.1", "0.25", "0.4", "0.45"):
    c1, c2 = theorem_constants(c)
    print(f"c={c:>5}: c1 = {str(c1):>9} ({float(c1):8.3f})   c2 = {str(c2):>5} ({float(c2):6.3f})")

# %% [markdown]
# ## Budgets
#
# For a target accuracy `eps` the budget fixes `T`, the number of
# perturbations `n` and rollouts per perturbation `N`. The total rollout
# count grows like `d^3` and `eps^-6`.

# %%
for d in (8, 16, 32):
    row = []
    for eps in (0.5, 0.25):
        b = theorem_budget(B=1.0, C=1.0, d=d, sigma=1.0, c=0.25, epsilon=eps)
        row.append(f"eps={eps}: T={b.T:>6} n={b.n:>6} N={b.N:>6} total={episode_complexity(b):.3e}")
    print(f"d={d:2d}  " + "   ".join(row))

# %% [markdown]
# ## The smoothness constant in practice
#
# A unit ball indicator is bounded by `B = 1`, so `L = (d + 1) / sigma^2`.
# Probing gradient differences at near and far pairs shows how loose that
# constant is: the observed ratios sit well below it.

# %%
step = BoundedStep(np.zeros(2), 1.0)
for sigma in (0.5, 1.0):
    probe = lipschitz_probe(step, sigma, 200, derive_stream(0, (int(10 * sigma),)))
    print(f"sigma={sigma}: L = {smoothness_constant(1.0, 2, sigma):5.1f}, largest observed ratio = {probe.max_ratio:.3f}")

# %% [markdown]
# ## The variance envelope
#
# The estimator's mean squared error is bounded by
# `C d / (N sigma^2) + d B^2 / (n sigma^2)`. For the deterministic indicator
# `C = 0`, so only the `1/n` term remains. A ball holding most of the
# Gaussian mass brings the single-perturbation error close to the envelope.

# %%
d, sigma = 8, 1.0
step = BoundedStep(np.zeros(d), 1.5 * math.sqrt(d))
theta = np.full(d, 0.2)
ref = step.exact_smoothed(theta, sigma)[1]
for n in (1, 4, 16):
    G = sample_estimates(theta, step, EstimatorConfig(sigma, n=n), derive_stream(1, (n,)), 5000)
    sq = np.einsum("ij,ij->i", G - ref, G - ref)
    bound = variance_bound(0.0, 1.0, d, sigma, n, 1)
    print(f"n={n:2d}: measured {sq.mean():.4f} +- {sq.std(ddof=1) / math.sqrt(len(sq)):.4f}   envelope {bound:.3f}")
