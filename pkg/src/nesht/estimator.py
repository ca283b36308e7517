"""Gaussian-smoothing (NES) gradient estimators.

Sampling layout for one estimate at step stream ``rng`` (path ``(t,)`` when
called from the optimizer):

* perturbation ``eps_i`` is drawn from ``rng.child(i, 0)``,
* rollout ``j`` (1-based) under ``eps_i`` is drawn from ``rng.child(i, j)``.

Every draw is addressed by its indices, so evaluating the ``n * N`` rollouts in
any order or on any number of threads gives the same estimate.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import FitnessProblem, RngStream, _as_generator, pairwise_sum

__all__ = [
    "EstimatorConfig",
    "GradientEstimate",
    "RolloutError",
    "averaged_estimate",
    "empirical_estimator_variance",
    "estimator_squared_errors",
    "sample_estimates",
    "sample_perturbation",
    "single_estimate",
]


class RolloutError(RuntimeError):
    """A rollout raised or returned a non-finite value."""

    def __init__(self, i: int, j: int, message: str):
        super().__init__(f"rollout failed at perturbation i={i}, rollout j={j}: {message}")
        self.i = i
        self.j = j


@dataclass(frozen=True)
class EstimatorConfig:
    sigma: float
    n: int = 1
    N: int = 1

    def __post_init__(self):
        if not (np.isfinite(self.sigma) and self.sigma > 0):
            raise ValueError(f"sigma must be positive and finite, got {self.sigma!r}")
        for name in ("n", "N"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")


@dataclass(frozen=True)
class GradientEstimate:
    g: np.ndarray
    n_used: int
    N_used: int
    sigma: float
    #: mean of the N rollout returns under each perturbation
    per_perturbation_scores: np.ndarray


def sample_perturbation(rng, d: int) -> np.ndarray:
    """``d`` i.i.d. standard normals from ``rng`` (a stream or a generator)."""
    if int(d) != d or d < 1:
        raise ValueError(f"d must be a positive integer, got {d!r}")
    return _as_generator(rng).standard_normal(int(d))


def single_estimate(f_value: float, eps: np.ndarray, sigma: float) -> np.ndarray:
    """``(f_value / sigma) * eps``."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma!r}")
    return (f_value / sigma) * np.asarray(eps, dtype=np.float64)


def _rollouts_or_raise(problem, probes, streams, lo, j):
    try:
        vals = np.asarray(problem.rollout_streams(probes, streams), dtype=np.float64)
    except Exception as exc:
        # replay one by one to name the failing perturbation
        for k, (p, s) in enumerate(zip(probes, streams)):
            try:
                problem.rollout(p, s.generator())
            except Exception as inner:
                raise RolloutError(lo + k, j, f"{type(inner).__name__}: {inner}") from inner
        raise RolloutError(lo, j, f"{type(exc).__name__}: {exc}") from exc
    bad = np.flatnonzero(~np.isfinite(vals))
    if bad.size:
        raise RolloutError(lo + int(bad[0]), j, f"non-finite return {vals[bad[0]]!r}")
    return vals


def _perturbation_block(theta, problem, cfg, rng, lo, hi):
    """Perturbations ``lo..hi-1`` and the mean of their ``N`` rollout returns."""
    d = theta.size
    eps = np.empty((hi - lo, d))
    gen = None
    for i in range(lo, hi):
        gen = rng._extend((i, 0)).generator(reuse=gen)
        eps[i - lo] = gen.standard_normal(d)
    probes = theta + cfg.sigma * eps
    returns = np.empty((hi - lo, cfg.N))
    for j in range(1, cfg.N + 1):
        streams = [rng._extend((i, j)) for i in range(lo, hi)]
        returns[:, j - 1] = _rollouts_or_raise(problem, probes, streams, lo, j)
    return eps, returns.mean(axis=1)


def _blocks(n, parts):
    edges = np.linspace(0, n, parts + 1).round().astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def averaged_estimate(
    theta,
    problem: FitnessProblem,
    cfg: EstimatorConfig,
    rng: RngStream,
    workers: int = 1,
) -> GradientEstimate:
    """Average of ``n * N`` single-rollout estimates around ``theta``.

    ``g = 1/(n N sigma) * sum_i sum_j f_{tau_ij}(theta + sigma eps_i) eps_i``.
    Rollouts under perturbation ``i`` are drawn after, and conditioned on,
    ``eps_i``.  With ``workers > 1`` blocks of perturbations run on threads;
    the estimate is bit-identical to the sequential one.
    """
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (problem.dim,):
        raise ValueError(f"theta has shape {theta.shape}, problem expects ({problem.dim},)")
    if not isinstance(rng, RngStream):
        raise TypeError("averaged_estimate needs an RngStream to address its draws")

    blocks = _blocks(cfg.n, max(1, min(int(workers), cfg.n)))
    if len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=len(blocks)) as pool:
            parts = list(
                pool.map(lambda b: _perturbation_block(theta, problem, cfg, rng, *b), blocks)
            )
    else:
        parts = [_perturbation_block(theta, problem, cfg, rng, 0, cfg.n)]

    eps = np.concatenate([e for e, _ in parts])
    scores = np.concatenate([s for _, s in parts])
    g = pairwise_sum([single_estimate(s, e, cfg.sigma) for e, s in zip(eps, scores)]) / cfg.n
    return GradientEstimate(g, cfg.n, cfg.N, cfg.sigma, scores)


def sample_estimates(
    theta,
    problem: FitnessProblem,
    cfg: EstimatorConfig,
    rng: RngStream,
    reps: int,
    chunk_rows: int = 4096,
) -> np.ndarray:
    """``reps`` independent averaged estimates as a ``(reps, d)`` array.

    Row ``r`` equals ``averaged_estimate(theta, problem, cfg, rng.child(r)).g``
    bit for bit; rollouts are batched across repetitions in chunks of about
    ``chunk_rows`` perturbations to bound memory.
    """
    if int(reps) != reps or reps < 1:
        raise ValueError(f"reps must be a positive integer, got {reps!r}")
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (problem.dim,):
        raise ValueError(f"theta has shape {theta.shape}, problem expects ({problem.dim},)")
    d, n = theta.size, cfg.n
    per_chunk = max(1, int(chunk_rows) // n)
    out = np.empty((int(reps), d))
    for r0 in range(0, int(reps), per_chunk):
        r1 = min(int(reps), r0 + per_chunk)
        pairs = [(r, i) for r in range(r0, r1) for i in range(n)]
        eps = np.empty((len(pairs), d))
        gen = None
        for k, (r, i) in enumerate(pairs):
            gen = rng._extend((r, i, 0)).generator(reuse=gen)
            eps[k] = gen.standard_normal(d)
        probes = theta + cfg.sigma * eps
        returns = np.empty((len(pairs), cfg.N))
        for j in range(1, cfg.N + 1):
            streams = [rng._extend((r, i, j)) for r, i in pairs]
            returns[:, j - 1] = _rollouts_or_raise(problem, probes, streams, 0, j)
        scores = returns.mean(axis=1)
        for r in range(r0, r1):
            k0 = (r - r0) * n
            rows = [single_estimate(scores[k], eps[k], cfg.sigma) for k in range(k0, k0 + n)]
            out[r] = pairwise_sum(rows) / n
    return out


def _reference_gradient(theta, problem, sigma, reference):
    if reference is not None:
        return np.asarray(reference, dtype=np.float64)
    exact = problem.exact_smoothed(theta, sigma)
    if exact is None:
        raise ValueError(
            "no reference smoothed gradient: the problem has no closed form and "
            "none was supplied (see theory.smoothing_oracle)"
        )
    return exact[1]


def estimator_squared_errors(
    theta,
    problem: FitnessProblem,
    cfg: EstimatorConfig,
    rng: RngStream,
    reps: int,
    reference_grad=None,
) -> np.ndarray:
    """``||g_r - grad F_sigma(theta)||^2`` for ``reps`` independent estimates.

    Repetition ``r`` uses the step stream ``rng.child(r)``.
    """
    if int(reps) != reps or reps < 2:
        raise ValueError(f"reps must be an integer >= 2, got {reps!r}")
    theta = np.asarray(theta, dtype=np.float64)
    ref = _reference_gradient(theta, problem, cfg.sigma, reference_grad)
    diff = sample_estimates(theta, problem, cfg, rng, reps) - ref
    return np.einsum("ij,ij->i", diff, diff)


def empirical_estimator_variance(
    theta,
    problem: FitnessProblem,
    cfg: EstimatorConfig,
    rng: RngStream,
    reps: int,
    reference_grad=None,
) -> float:
    """Mean squared distance of the estimator to the smoothed gradient."""
    return float(estimator_squared_errors(theta, problem, cfg, rng, reps, reference_grad).mean())
