"""Analytical constants of NES with hard thresholding, plus Monte Carlo oracles.

The calculators here are the single source for every bound the test suite
compares against: the smoothness constant of the Gaussian-smoothed fitness,
the estimator variance envelope, and the iteration / population / rollout
budgets that guarantee an eps-stationary point.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .core import FitnessProblem, RngStream, _as_generator

__all__ = [
    "LipschitzProbe",
    "OracleEstimate",
    "TheoremBudget",
    "episode_complexity",
    "lipschitz_probe",
    "measured_variance_bound",
    "smoothing_oracle",
    "smoothness_constant",
    "theorem_budget",
    "theorem_constants",
    "variance_bound",
]


def _positive(name, x):
    if not (np.isfinite(x) and x > 0):
        raise ValueError(f"{name} must be positive and finite, got {x!r}")


def smoothness_constant(B: float, d: int, sigma: float) -> float:
    """Lipschitz constant ``(d + 1) B / sigma^2`` of ``grad F_sigma`` when ``|F| <= B``."""
    _positive("B", B)
    _positive("d", d)
    _positive("sigma", sigma)
    return (d + 1) * B / sigma**2


def variance_bound(C: float, B: float, d: int, sigma: float, n: int, N: int) -> float:
    """Envelope ``C d / (N sigma^2) + d B^2 / (n sigma^2)`` on ``E||g - grad F_sigma||^2``."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma!r}")
    if C < 0 or B < 0:
        raise ValueError("C and B must be non-negative")
    if n < 1 or N < 1:
        raise ValueError("n and N must be >= 1")
    return C * d / (N * sigma**2) + d * B**2 / (n * sigma**2)


def theorem_constants(c) -> tuple[Fraction, Fraction]:
    """Exact ``(c1, c2)`` for step-size fraction ``c``.

    ``c1 = (2c(1-2c) + 2) / (c(1-2c))`` and ``c2 = (12 - 8c) / (1 - 2c)``.
    """
    c = Fraction(str(c)) if isinstance(c, float) else Fraction(c)
    if not 0 < c < Fraction(1, 2):
        raise ValueError(f"c must lie in (0, 1/2), got {c}")
    q = c * (1 - 2 * c)
    return (2 * q + 2) / q, (12 - 8 * c) / (1 - 2 * c)


@dataclass(frozen=True)
class TheoremBudget:
    c: float
    c1: float
    c2: float
    L: float
    alpha: float
    T: int
    N: int
    n: int
    epsilon: float
    B: float
    C: float
    d: int
    sigma: float


def _ceil(x: Fraction) -> int:
    return max(1, math.ceil(x))


def theorem_budget(B: float, C: float, d: int, sigma: float, c: float, epsilon: float) -> TheoremBudget:
    """Step size and ``(T, N, n)`` that make the expected stationarity gap ``<= epsilon``.

    ``alpha = c / L``, ``T = ceil(2 c2 B / (alpha eps^2))``,
    ``N = ceil(4 c1 d C / (sigma^2 eps^2))`` (at least 1) and
    ``n = ceil(4 c1 d B^2 / (sigma^2 eps^2))``.  Integer budgets are computed
    in exact rational arithmetic, so no float rounding leaks into the ceilings.
    Values of ``c`` within 0.01 of either pole trigger a warning because
    ``c1`` blows up there.
    """
    _positive("epsilon", epsilon)
    _positive("B", B)
    _positive("sigma", sigma)
    if C < 0:
        raise ValueError(f"C must be >= 0, got {C!r}")
    if int(d) != d or d < 1:
        raise ValueError(f"d must be a positive integer, got {d!r}")
    c1, c2 = theorem_constants(c)
    if not 0.01 < float(c) < 0.49:
        warnings.warn(f"c={c} is close to a pole of c1; budgets will be huge", RuntimeWarning)
    fB, fC, fs, fe = (Fraction(x) for x in (B, C, sigma, epsilon))
    L = (int(d) + 1) * fB / fs**2
    alpha = Fraction(str(c)) if isinstance(c, float) else Fraction(c)
    alpha = alpha / L
    T = _ceil(2 * c2 * fB / (alpha * fe**2))
    N = _ceil(4 * c1 * int(d) * fC / (fs**2 * fe**2))
    n = _ceil(4 * c1 * int(d) * fB**2 / (fs**2 * fe**2))
    return TheoremBudget(
        c=float(c), c1=float(c1), c2=float(c2), L=float(L), alpha=float(alpha),
        T=T, N=N, n=n, epsilon=float(epsilon), B=float(B), C=float(C), d=int(d),
        sigma=float(sigma),
    )


def episode_complexity(budget: TheoremBudget) -> int:
    """Total number of rollouts ``T * N * n`` (exact Python integer)."""
    return int(budget.T) * int(budget.N) * int(budget.n)


# ---------------------------------------------------------------------------
# Monte Carlo oracles
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OracleEstimate:
    value: float
    grad: np.ndarray
    value_se: float
    grad_se: np.ndarray
    samples: int


def _perturbed_values(problem, theta, sigma, eps, gen, inner_rollouts):
    thetas = theta + sigma * eps
    reps = 1 if problem.deterministic else int(inner_rollouts)
    acc = problem.rollout_batch(thetas, gen)
    for _ in range(reps - 1):
        acc = acc + problem.rollout_batch(thetas, gen)
    return acc / reps


def smoothing_oracle(
    problem: FitnessProblem,
    theta,
    sigma: float,
    M: int,
    rng,
    inner_rollouts: int = 1,
) -> OracleEstimate:
    """Plain Monte Carlo estimate of ``F_sigma(theta)`` and its gradient.

    Uses ``M`` perturbations; for stochastic problems each perturbed value is
    the mean of ``inner_rollouts`` rollouts.  Standard errors are the sample
    standard deviations over perturbations divided by ``sqrt(M)``.
    """
    if int(M) != M or M < 1000:
        raise ValueError(f"M must be an integer >= 1000, got {M!r}")
    _positive("sigma", sigma)
    theta = np.asarray(theta, dtype=np.float64)
    gen = _as_generator(rng)
    eps = gen.standard_normal((int(M), theta.size))
    f = _perturbed_values(problem, theta, sigma, eps, gen, inner_rollouts)
    g = f[:, None] * eps / sigma
    root = math.sqrt(M)
    return OracleEstimate(
        value=float(f.mean()),
        grad=g.mean(axis=0),
        value_se=float(f.std(ddof=1) / root),
        grad_se=g.std(axis=0, ddof=1) / root,
        samples=int(M),
    )


def measured_variance_bound(
    problem: FitnessProblem,
    theta,
    sigma: float,
    rng: RngStream,
    points: int = 64,
    rollouts: int = 256,
) -> float:
    """Largest sample rollout variance over ``points`` perturbed parameters.

    A data-driven stand-in for the variance bound ``C`` where the problem
    gives none: the estimator only queries ``theta + sigma * eps``, so the
    variance is sampled there (``points`` draws, ``rollouts`` returns each).
    """
    _positive("sigma", sigma)
    if problem.deterministic:
        return 0.0
    theta = np.asarray(theta, dtype=np.float64)
    gen = rng.child(0).generator()
    worst = 0.0
    for p in range(int(points)):
        x = theta + sigma * gen.standard_normal(theta.size)
        streams = [rng.child(p + 1, j) for j in range(int(rollouts))]
        f = problem.rollout_streams(np.broadcast_to(x, (len(streams), x.size)), streams)
        worst = max(worst, float(np.var(f, ddof=1)))
    return worst


@dataclass(frozen=True)
class LipschitzProbe:
    max_ratio: float
    max_ratio_se: float
    ratios: np.ndarray
    ratio_se: np.ndarray
    distances: np.ndarray
    #: smoothness constant implied by the problem's bound B, if known
    L: float | None


def _anchor(problem):
    for name in ("center", "theta_star"):
        v = getattr(problem, name, None)
        if v is not None:
            return np.asarray(v, dtype=np.float64)
    return np.zeros(problem.dim)


def lipschitz_probe(
    problem: FitnessProblem,
    sigma: float,
    pairs: int,
    rng: RngStream,
    samples: int = 20000,
    use_exact: bool | None = None,
    spread: float | None = None,
    inner_rollouts: int = 1,
) -> LipschitzProbe:
    """Largest observed ``||grad F_sigma(a) - grad F_sigma(b)|| / ||a - b||``.

    Points ``a`` are scattered around the problem's center (or ``theta*``)
    with radius ``spread``; ``b = a + delta`` where ``||delta||`` alternates
    between ``0.1 sigma`` and ``10 sigma`` so the constant is probed at both
    scales.  Gradients come from the closed form when the problem has one
    (and ``use_exact`` is not False), otherwise from :func:`smoothing_oracle`
    style sampling with the same perturbations at ``a`` and ``b``.
    """
    _positive("sigma", sigma)
    if int(pairs) != pairs or pairs < 1:
        raise ValueError(f"pairs must be a positive integer, got {pairs!r}")
    d = problem.dim
    anchor = _anchor(problem)
    if spread is None:
        spread = getattr(problem, "radius", 1.0) + sigma
    if use_exact is None:
        use_exact = problem.exact_smoothed(anchor, sigma) is not None

    ratios = np.empty(int(pairs))
    ses = np.empty(int(pairs))
    dists = np.empty(int(pairs))
    for p in range(int(pairs)):
        gen = rng.child(p).generator()
        a = anchor + spread * gen.standard_normal(d) / math.sqrt(d)
        u = gen.standard_normal(d)
        dist = (0.1 if p % 2 == 0 else 10.0) * sigma
        b = a + dist * u / np.linalg.norm(u)
        step = float(np.linalg.norm(a - b))
        if use_exact:
            diff = problem.exact_smoothed(a, sigma)[1] - problem.exact_smoothed(b, sigma)[1]
            ratios[p] = np.linalg.norm(diff) / step
            ses[p] = 0.0
        else:
            ogen = rng.child(p, 1).generator()
            eps = ogen.standard_normal((int(samples), d))
            fa = _perturbed_values(problem, a, sigma, eps, ogen, inner_rollouts)
            fb = _perturbed_values(problem, b, sigma, eps, ogen, inner_rollouts)
            dg = (fa - fb)[:, None] * eps / sigma
            diff = dg.mean(axis=0)
            se = dg.std(axis=0, ddof=1) / math.sqrt(samples)
            nd = float(np.linalg.norm(diff))
            w = diff / nd if nd > 0 else np.full(d, 1.0 / math.sqrt(d))
            ratios[p] = nd / step
            ses[p] = float(np.sqrt(np.sum(w**2 * se**2))) / step
        dists[p] = step
    L = None if problem.bound_B is None else smoothness_constant(problem.bound_B, d, sigma)
    top = int(np.argmax(ratios))
    return LipschitzProbe(float(ratios[top]), float(ses[top]), ratios, ses, dists, L)
