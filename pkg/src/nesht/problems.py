"""Desk-scale fitness problems with known constants and closed forms.

Linear-policy tasks (:class:`EpisodicLinearTask`) draw an observation matrix
``X`` (one row per time step), act with ``a = X @ theta`` and collect one
reward per step.  They can be widened with pure-noise observation features
(:func:`augment_with_noise`) and have their rewards thinned
(:func:`sparse_reward_mask`), mirroring the noisy-feature / sparse-reward
benchmark protocol at a size that runs in seconds.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .core import FitnessProblem, SparsityMask, as_param_vector

__all__ = [
    "BoundedStep",
    "ConstantFitness",
    "Episode",
    "EpisodicLinearTask",
    "LinearFitness",
    "MultiStepChain",
    "NoiseAugmented",
    "NoisyLinearBandit",
    "SparseQuadratic",
    "SparseRewardMask",
    "augment_with_noise",
    "bandit_rollout",
    "bounded_step_value",
    "make_theta_star",
    "multi_step_chain",
    "sparse_reward_mask",
]


def make_theta_star(d: int, k_star: int, seed: int) -> np.ndarray:
    """A ``k_star``-sparse vector with +-1 entries on a random support."""
    if not 1 <= k_star <= d:
        raise ValueError(f"k_star={k_star} must lie in [1, d={d}]")
    rng = np.random.default_rng(seed)
    support = np.sort(rng.choice(d, size=k_star, replace=False))
    theta = np.zeros(d)
    theta[support] = rng.choice([-1.0, 1.0], size=k_star)
    return theta


# ---------------------------------------------------------------------------
# Plain (non-episodic) problems
# ---------------------------------------------------------------------------


class ConstantFitness(FitnessProblem):
    """``f_tau(theta) = value`` everywhere; the smoothed gradient is zero."""

    deterministic = True

    def __init__(self, dim: int, value: float = 1.0):
        self.dim = int(dim)
        self.value = float(value)
        self.bound_B = abs(self.value) if self.value != 0 else None
        self.var_bound_C = 0.0

    def rollout(self, theta, rng=None):
        return self.value

    def rollout_batch(self, thetas, rng=None):
        return np.full(np.atleast_2d(thetas).shape[0], self.value)

    def exact_expectation(self, theta):
        return self.value

    def exact_smoothed(self, theta, sigma):
        return self.value, np.zeros(self.dim)


class LinearFitness(FitnessProblem):
    """``f_tau(theta) = a . theta + noise``; smoothing keeps the gradient ``a``."""

    def __init__(self, a, noise_std: float = 0.0):
        self.a = as_param_vector(a, "a")
        self.dim = self.a.size
        self.noise_std = float(noise_std)
        self.deterministic = self.noise_std == 0
        self.var_bound_C = self.noise_std**2

    def rollout(self, theta, rng=None):
        v = float(self.a @ theta)
        if self.noise_std:
            v += self.noise_std * rng.standard_normal()
        return v

    def rollout_batch(self, thetas, rng=None):
        v = np.atleast_2d(thetas) @ self.a
        if self.noise_std:
            v = v + self.noise_std * rng.standard_normal(v.size)
        return v

    def exact_expectation(self, theta):
        return float(self.a @ self._check_theta(theta))

    def exact_smoothed(self, theta, sigma):
        return float(self.a @ self._check_theta(theta)), self.a.copy()


class SparseQuadratic(FitnessProblem):
    """``f_tau(theta) = -scale ||theta - theta*||^2 + N(0, noise_std^2)``.

    Closed forms: ``F_sigma = -scale (||theta - theta*||^2 + sigma^2 d)`` and
    ``grad F_sigma = -2 scale (theta - theta*)``.  ``F`` is unbounded, so
    ``bound_B`` is ``None``.
    """

    def __init__(self, theta_star, scale: float = 1.0, noise_std: float = 0.0):
        self.theta_star = as_param_vector(theta_star, "theta_star")
        self.dim = self.theta_star.size
        if not scale > 0:
            raise ValueError(f"scale must be positive, got {scale!r}")
        if noise_std < 0:
            raise ValueError(f"noise_std must be >= 0, got {noise_std!r}")
        self.scale = float(scale)
        self.noise_std = float(noise_std)
        self.deterministic = self.noise_std == 0
        self.var_bound_C = self.noise_std**2

    @property
    def support(self) -> SparsityMask:
        return SparsityMask.of(self.theta_star)

    def rollout(self, theta, rng=None):
        r = theta - self.theta_star
        v = -self.scale * float(r @ r)
        if self.noise_std:
            v += self.noise_std * rng.standard_normal()
        return v

    def rollout_batch(self, thetas, rng=None):
        r = np.atleast_2d(thetas) - self.theta_star
        v = -self.scale * np.einsum("ij,ij->i", r, r)
        if self.noise_std:
            v = v + self.noise_std * rng.standard_normal(v.size)
        return v

    def exact_expectation(self, theta):
        r = self._check_theta(theta) - self.theta_star
        return -self.scale * float(r @ r)

    def exact_smoothed(self, theta, sigma):
        r = self._check_theta(theta) - self.theta_star
        value = -self.scale * (float(r @ r) + sigma**2 * self.dim)
        return value, -2.0 * self.scale * r


class BoundedStep(FitnessProblem):
    """Indicator of a closed ball: ``1`` if ``||theta - center|| <= radius``.

    Discontinuous, deterministic (``C = 0``) and bounded by ``B = 1``.  Its
    Gaussian smoothing is a non-central chi-square CDF, which gives exact
    ``F_sigma`` and ``grad F_sigma`` in any dimension.
    """

    deterministic = True
    bound_B = 1.0
    var_bound_C = 0.0

    def __init__(self, center, radius: float = 1.0):
        self.center = as_param_vector(center, "center")
        self.dim = self.center.size
        if not radius > 0:
            raise ValueError(f"radius must be positive, got {radius!r}")
        self.radius = float(radius)

    def rollout(self, theta, rng=None):
        return bounded_step_value(self, theta)

    def rollout_batch(self, thetas, rng=None):
        r = np.atleast_2d(thetas) - self.center
        return (np.einsum("ij,ij->i", r, r) <= self.radius**2).astype(np.float64)

    def exact_expectation(self, theta):
        return bounded_step_value(self, self._check_theta(theta))

    def exact_smoothed(self, theta, sigma):
        delta = self._check_theta(theta) - self.center
        if self.dim == 1:
            s = float(delta[0])
            hi, lo = (self.radius - s) / sigma, (-self.radius - s) / sigma
            value = stats.norm.cdf(hi) - stats.norm.cdf(lo)
            grad = (stats.norm.pdf(lo) - stats.norm.pdf(hi)) / sigma
            return float(value), np.array([grad])
        x = self.radius**2 / sigma**2
        lam = float(delta @ delta) / sigma**2
        value = _chi2_cdf(x, self.dim, lam)
        # dF/dlam = (cdf_{d+2} - cdf_d) / 2 and dlam/dtheta = 2 delta / sigma^2
        slope = _chi2_cdf(x, self.dim + 2, lam) - value
        return float(value), delta * (slope / sigma**2)


def _chi2_cdf(x: float, df: int, nc: float) -> float:
    if nc == 0:
        return float(stats.chi2.cdf(x, df))
    return float(stats.ncx2.cdf(x, df, nc))


def bounded_step_value(p: BoundedStep, theta) -> float:
    r = np.asarray(theta, dtype=np.float64) - p.center
    return 1.0 if float(r @ r) <= p.radius**2 else 0.0


# ---------------------------------------------------------------------------
# Episodic linear-policy tasks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Episode:
    obs: np.ndarray  # (H, obs_dim)
    targets: np.ndarray  # (H,) optimal actions x_t . theta*
    reward_noise: np.ndarray | None  # (H,) standard normals, or None


def _stack_episodes(draws) -> Episode:
    noise = draws[0].reward_noise
    return Episode(
        np.stack([e.obs for e in draws]),
        np.stack([e.targets for e in draws]),
        None if noise is None else np.stack([e.reward_noise for e in draws]),
    )


def _act(obs, thetas):
    # (m, H, d) x (m, d) -> (m, H); elementwise product then a last-axis sum,
    # so each row's value does not depend on how many rows are batched
    return (obs * thetas[:, None, :]).sum(axis=-1)


class _PerStepRewards(FitnessProblem):
    """Rollouts split into random draws (per stream) and vectorized rewards.

    Subclasses provide ``_draw(rng)``, consuming a rollout's random numbers
    from one generator, and ``_rewards_drawn(thetas, draws)`` returning the
    ``(m, H)`` immediate rewards.  Every public rollout method goes through
    the same two calls, so single and batched rollouts agree exactly.
    """

    horizon: int

    @abc.abstractmethod
    def _draw(self, rng: np.random.Generator):
        ...

    @abc.abstractmethod
    def _rewards_drawn(self, thetas: np.ndarray, draws: list) -> np.ndarray:
        ...

    def step_rewards(self, theta, rng: np.random.Generator) -> np.ndarray:
        theta = np.asarray(theta, dtype=np.float64)
        return self._rewards_drawn(theta[None, :], [self._draw(rng)])[0]

    def rollout(self, theta, rng):
        return float(self.step_rewards(theta, rng).sum())

    def rollout_batch(self, thetas, rng):
        thetas = np.atleast_2d(np.asarray(thetas, dtype=np.float64))
        draws = [self._draw(rng) for _ in range(thetas.shape[0])]
        return self._rewards_drawn(thetas, draws).sum(axis=1)

    def rollout_streams(self, thetas, streams):
        thetas = np.atleast_2d(np.asarray(thetas, dtype=np.float64))
        gen, draws = None, []
        for s in streams:
            gen = s.generator(reuse=gen)
            draws.append(self._draw(gen))
        return self._rewards_drawn(thetas, draws).sum(axis=1)


class EpisodicLinearTask(_PerStepRewards):
    """Linear policy ``a_t = x_t . theta`` acting for ``horizon`` steps.

    Observations have independent ``N(0, obs_scales_i^2)`` coordinates.
    Subclasses define the immediate reward via :meth:`rewards`.
    """

    theta_star: np.ndarray
    obs_scales: np.ndarray

    @property
    def obs_dim(self) -> int:
        return self.dim

    @property
    def support(self) -> SparsityMask:
        return SparsityMask.of(self.theta_star)

    @abc.abstractmethod
    def rewards(self, actions: np.ndarray, episode: Episode) -> np.ndarray:
        """Immediate rewards for the given per-step actions (any leading shape)."""

    @abc.abstractmethod
    def widened(self, extra: int) -> "EpisodicLinearTask":
        """Same task with ``extra`` unit-variance, zero-weight features appended."""

    def _draws_reward_noise(self) -> bool:
        return False

    def sample_episode(self, rng: np.random.Generator) -> Episode:
        obs = self.obs_scales * rng.standard_normal((self.horizon, self.dim))
        noise = rng.standard_normal(self.horizon) if self._draws_reward_noise() else None
        return Episode(obs, obs @ self.theta_star, noise)

    def _draw(self, rng):
        return self.sample_episode(rng)

    def _rewards_drawn(self, thetas, draws):
        ep = _stack_episodes(draws)
        return self.rewards(_act(ep.obs, thetas), ep)


class NoisyLinearBandit(EpisodicLinearTask):
    """One-step task ``f_tau(theta) = x . (theta - theta*)``, ``x ~ N(0, sigma_x^2 I)``.

    ``F`` is identically zero while ``Var f_tau = sigma_x^2 ||theta - theta*||^2``,
    so the problem isolates the estimator's rollout-noise term.
    """

    horizon = 1

    def __init__(self, theta_star, sigma_x: float = 1.0, obs_scales=None):
        self.theta_star = as_param_vector(theta_star, "theta_star")
        self.dim = self.theta_star.size
        if not sigma_x > 0:
            raise ValueError(f"sigma_x must be positive, got {sigma_x!r}")
        self.sigma_x = float(sigma_x)
        if obs_scales is None:
            obs_scales = np.full(self.dim, self.sigma_x)
        self.obs_scales = as_param_vector(obs_scales, "obs_scales")
        # variance bound over the box [-1, 1]^d
        self.var_bound_C = float(np.sum(self.obs_scales**2 * (1 + np.abs(self.theta_star)) ** 2))

    def rewards(self, actions, episode):
        return actions - episode.targets

    def widened(self, extra):
        return NoisyLinearBandit(
            np.concatenate([self.theta_star, np.zeros(extra)]),
            self.sigma_x,
            np.concatenate([self.obs_scales, np.ones(extra)]),
        )

    def rollout_variance(self, theta) -> float:
        r = self._check_theta(theta) - self.theta_star
        return float(np.sum(self.obs_scales**2 * r**2))

    def exact_expectation(self, theta):
        self._check_theta(theta)
        return 0.0

    def exact_smoothed(self, theta, sigma):
        self._check_theta(theta)
        return 0.0, np.zeros(self.dim)


def bandit_rollout(p: NoisyLinearBandit, theta, rng: np.random.Generator) -> float:
    return p.rollout(np.asarray(theta, dtype=np.float64), rng)


class MultiStepChain(EpisodicLinearTask):
    """``horizon``-step regression task with immediate reward

    ``r_t = -scale * min((a_t - x_t . theta*)^2, reward_cap) + noise_std * z_t``.

    Uncapped, ``F(theta) = -horizon * scale * sum_i s_i^2 (theta_i - theta*_i)^2``
    (a sparse quadratic, ``s`` the observation scales).  With a cap the
    rewards are bounded, giving ``B = horizon * scale * cap`` and, by
    Popoviciu's inequality, ``C = horizon * ((scale * cap)^2 / 4 + noise_std^2)``.
    """

    def __init__(
        self,
        theta_star,
        horizon: int = 1,
        scale: float = 1.0,
        noise_std: float = 0.0,
        reward_cap: float | None = None,
        obs_scales=None,
    ):
        self.theta_star = as_param_vector(theta_star, "theta_star")
        self.dim = self.theta_star.size
        if int(horizon) != horizon or horizon < 1:
            raise ValueError(f"horizon must be a positive integer, got {horizon!r}")
        if not scale > 0:
            raise ValueError(f"scale must be positive, got {scale!r}")
        if noise_std < 0:
            raise ValueError(f"noise_std must be >= 0, got {noise_std!r}")
        if reward_cap is not None and not reward_cap > 0:
            raise ValueError(f"reward_cap must be positive, got {reward_cap!r}")
        self.horizon = int(horizon)
        self.scale = float(scale)
        self.noise_std = float(noise_std)
        self.reward_cap = None if reward_cap is None else float(reward_cap)
        if obs_scales is None:
            obs_scales = np.ones(self.dim)
        self.obs_scales = as_param_vector(obs_scales, "obs_scales")
        if self.reward_cap is not None:
            step_span = self.scale * self.reward_cap
            self.bound_B = self.horizon * step_span
            self.var_bound_C = self.horizon * (step_span**2 / 4 + self.noise_std**2)

    def _draws_reward_noise(self):
        return self.noise_std > 0

    def rewards(self, actions, episode):
        loss = (actions - episode.targets) ** 2
        if self.reward_cap is not None:
            loss = np.minimum(loss, self.reward_cap)
        r = -self.scale * loss
        if episode.reward_noise is not None:
            r = r + self.noise_std * episode.reward_noise
        return r

    def widened(self, extra):
        return MultiStepChain(
            np.concatenate([self.theta_star, np.zeros(extra)]),
            self.horizon,
            self.scale,
            self.noise_std,
            self.reward_cap,
            np.concatenate([self.obs_scales, np.ones(extra)]),
        )

    def _weighted_sq(self, theta) -> float:
        r = self._check_theta(theta) - self.theta_star
        return float(np.sum(self.obs_scales**2 * r**2))

    def exact_expectation(self, theta):
        if self.reward_cap is not None:
            return None
        return -self.horizon * self.scale * self._weighted_sq(theta)

    def exact_smoothed(self, theta, sigma):
        if self.reward_cap is not None:
            return None
        theta = self._check_theta(theta)
        w = self.obs_scales**2
        c = self.horizon * self.scale
        value = -c * (self._weighted_sq(theta) + sigma**2 * float(w.sum()))
        return value, -2.0 * c * w * (theta - self.theta_star)

    def per_step_variance(self, theta) -> float | None:
        """Variance of one immediate reward (uncapped chain only)."""
        if self.reward_cap is not None:
            return None
        q = self._weighted_sq(theta)
        return 2.0 * self.scale**2 * q**2 + self.noise_std**2

    def empirical_C(self, theta, rollouts: int, rng: np.random.Generator) -> float:
        """Sample variance of ``rollouts`` returns at ``theta``."""
        theta = self._check_theta(theta)
        f = np.array([self.rollout(theta, rng) for _ in range(int(rollouts))])
        return float(f.var(ddof=1))


def multi_step_chain(horizon: int, theta_star, **kwargs) -> MultiStepChain:
    return MultiStepChain(theta_star, horizon=horizon, **kwargs)


# ---------------------------------------------------------------------------
# Wrappers
# ---------------------------------------------------------------------------


class NoiseAugmented(EpisodicLinearTask):
    """Append ``m * d0`` i.i.d. standard-normal features to every observation.

    The policy dimension becomes ``d0 * (1 + m)``; the optimal weights stay on
    the first ``d0`` (real) coordinates.

    With ``collapsed=True`` the noise block is never materialized: its
    contribution ``x_noise . theta_noise`` is drawn directly as
    ``||theta_noise|| * z`` with one standard normal per step.  Returns have
    the same distribution as in the explicit form at ``1/m`` of the sampling
    cost; :meth:`sample_episode` still yields explicit observations.
    """

    def __init__(self, inner: EpisodicLinearTask, m: int, collapsed: bool = False):
        if not isinstance(inner, EpisodicLinearTask):
            raise TypeError("noise augmentation needs a task with observations")
        if int(m) != m or m < 1:
            raise ValueError(f"noise ratio m must be a positive integer, got {m!r}")
        self.inner = inner
        self.m = int(m)
        self.collapsed = bool(collapsed)
        self.real_dim = inner.dim
        extra = self.m * inner.dim
        self._twin = inner.widened(extra)
        self.dim = self._twin.dim
        self.horizon = inner.horizon
        self.theta_star = self._twin.theta_star
        self.obs_scales = self._twin.obs_scales
        self.bound_B = self._twin.bound_B
        self.var_bound_C = self._twin.var_bound_C

    def sample_episode(self, rng):
        ep = self.inner.sample_episode(rng)
        noise = rng.standard_normal((self.horizon, self.m * self.real_dim))
        return Episode(np.hstack([ep.obs, noise]), ep.targets, ep.reward_noise)

    def rewards(self, actions, episode):
        return self.inner.rewards(actions, episode)

    def _draw(self, rng):
        if not self.collapsed:
            return self.sample_episode(rng)
        return self.inner.sample_episode(rng), rng.standard_normal(self.horizon)

    def _rewards_drawn(self, thetas, draws):
        if not self.collapsed:
            return super()._rewards_drawn(thetas, draws)
        ep = _stack_episodes([d[0] for d in draws])
        z = np.stack([d[1] for d in draws])
        d0 = self.real_dim
        spread = np.sqrt((thetas[:, d0:] ** 2).sum(axis=1))
        return self.inner.rewards(_act(ep.obs, thetas[:, :d0]) + spread[:, None] * z, ep)

    def widened(self, extra):
        return self._twin.widened(extra)

    def exact_expectation(self, theta):
        return self._twin.exact_expectation(theta)

    def exact_smoothed(self, theta, sigma):
        return self._twin.exact_smoothed(theta, sigma)

    def rollout_variance(self, theta):
        return self._twin.rollout_variance(theta)


def augment_with_noise(inner: EpisodicLinearTask, m: int, collapsed: bool = False) -> NoiseAugmented:
    return NoiseAugmented(inner, m, collapsed)


class SparseRewardMask(_PerStepRewards):
    """Zero each immediate reward independently with probability ``p_zero``.

    The mask is drawn from the rollout generator after the inner episode, so
    the wrapped rollout stays a pure function of ``(theta, rng)``.
    ``F`` is scaled by ``1 - p_zero``.
    """

    def __init__(self, inner, p_zero: float):
        if not isinstance(inner, _PerStepRewards):
            raise TypeError("reward masking needs a problem exposing per-step rewards")
        if not 0.0 <= p_zero <= 1.0:
            raise ValueError(f"p_zero must lie in [0, 1], got {p_zero!r}")
        self.inner = inner
        self.p_zero = float(p_zero)
        self.dim = inner.dim
        self.horizon = inner.horizon
        keep = 1.0 - self.p_zero
        self.bound_B = None if inner.bound_B is None else keep * inner.bound_B
        self.var_bound_C = inner.var_bound_C if self.p_zero == 0 else None

    def __getattr__(self, name):
        # expose theta_star / support / obs_dim of the wrapped task
        if name in ("theta_star", "support", "obs_dim", "real_dim", "obs_scales"):
            return getattr(self.inner, name)
        raise AttributeError(name)

    def _draw(self, rng):
        inner = self.inner._draw(rng)
        return inner, rng.random(self.horizon)

    def _rewards_drawn(self, thetas, draws):
        r = self.inner._rewards_drawn(thetas, [d[0] for d in draws])
        keep = np.stack([d[1] for d in draws]) >= self.p_zero
        return np.where(keep, r, 0.0)

    def exact_expectation(self, theta):
        v = self.inner.exact_expectation(theta)
        return None if v is None else (1.0 - self.p_zero) * v

    def exact_smoothed(self, theta, sigma):
        ex = self.inner.exact_smoothed(theta, sigma)
        if ex is None:
            return None
        keep = 1.0 - self.p_zero
        return keep * ex[0], keep * ex[1]


def sparse_reward_mask(inner, p_zero: float) -> SparseRewardMask:
    return SparseRewardMask(inner, p_zero)
