"""Build :class:`~nesht.core.FitnessProblem` objects from config problem specs."""

from __future__ import annotations

import numpy as np

from ..core import FitnessProblem
from ..problems import (
    BoundedStep,
    ConstantFitness,
    LinearFitness,
    MultiStepChain,
    NoisyLinearBandit,
    SparseQuadratic,
    augment_with_noise,
    make_theta_star,
    sparse_reward_mask,
)
from .config import ConfigError


def _theta_star(params, dim_key, default_dim=None):
    if "theta_star" in params:
        return np.array(params["theta_star"], dtype=np.float64)
    d = params.get(dim_key, default_dim)
    if d is None:
        raise ConfigError(f"problem needs either theta_star or {dim_key}")
    k = params.get("k_star", d)
    if k > d:
        raise ConfigError(f"k_star={k} exceeds {dim_key}={d}")
    return make_theta_star(d, k, params.get("problem_seed", 0))


def build_problem(spec: dict) -> FitnessProblem:
    """Instantiate the (possibly wrapped) problem described by ``spec``."""
    name = spec["name"]
    p = spec.get("params", {})
    if name == "sparse_quadratic":
        prob = SparseQuadratic(_theta_star(p, "d"), p.get("scale", 1.0), p.get("noise_std", 0.0))
    elif name == "bandit":
        prob = NoisyLinearBandit(_theta_star(p, "d0", 11), p.get("sigma_x", 1.0))
    elif name == "chain":
        prob = MultiStepChain(
            _theta_star(p, "d0", 11),
            horizon=p.get("horizon", 1),
            scale=p.get("scale", 1.0),
            noise_std=p.get("noise_std", 0.0),
            reward_cap=p.get("reward_cap"),
        )
    elif name == "bounded_step":
        d = p["d"]
        center = np.array(p.get("center", [0.0] * d), dtype=np.float64)
        if center.size != d:
            raise ConfigError(f"bounded_step center has length {center.size}, expected d={d}")
        prob = BoundedStep(center, p.get("radius", 1.0))
    elif name == "linear":
        prob = LinearFitness(p["a"], p.get("noise_std", 0.0))
    elif name == "constant":
        prob = ConstantFitness(p["d"], p.get("value", 1.0))
    else:  # pragma: no cover - config validation rejects unknown names
        raise ConfigError(f"unknown problem {name!r}")

    m = spec.get("noise_ratio", 0)
    if m:
        prob = augment_with_noise(prob, m, collapsed=spec.get("collapse_noise", False))
    if "p_zero" in spec:
        prob = sparse_reward_mask(prob, spec["p_zero"])
    return prob


def true_support(problem) -> np.ndarray | None:
    """Indices of the nonzero optimal weights, if the problem has a ``theta_star``."""
    ts = getattr(problem, "theta_star", None)
    if ts is None:
        return None
    return np.flatnonzero(np.asarray(ts))
