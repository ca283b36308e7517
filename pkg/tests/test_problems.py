import math

import numpy as np
import pytest
from scipy import integrate, stats

from nesht.core import derive_stream
from nesht.problems import (
    BoundedStep,
    ConstantFitness,
    LinearFitness,
    NoisyLinearBandit,
    SparseQuadratic,
    augment_with_noise,
    make_theta_star,
    multi_step_chain,
    sparse_reward_mask,
)


def mc_smoothed(problem, theta, sigma, reps, seed):
    """Plain Monte Carlo of E f(theta + sigma u) with per-sample fresh rollouts."""
    rng = np.random.default_rng(seed)
    u = rng.standard_normal((reps, theta.size))
    f = problem.rollout_batch(theta + sigma * u, rng)
    return f.mean(), f.std(ddof=1) / math.sqrt(reps)


def central_diff(fn, theta, h=1e-5):
    g = np.zeros_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        g[i] = (fn(theta + e) - fn(theta - e)) / (2 * h)
    return g


class TestThetaStar:
    def test_sparse_signs(self):
        t = make_theta_star(121, 11, 7)
        assert np.count_nonzero(t) == 11
        assert set(np.abs(t[t != 0])) == {1.0}
        assert np.array_equal(t, make_theta_star(121, 11, 7))

    def test_rejects_bad_k(self):
        with pytest.raises(ValueError):
            make_theta_star(5, 6, 0)


class TestSimpleProblems:
    def test_constant(self):
        p = ConstantFitness(3, 2.5)
        assert p.rollout(np.zeros(3)) == 2.5
        v, g = p.exact_smoothed(np.ones(3), 0.7)
        assert v == 2.5 and not g.any()

    def test_linear_smoothed_gradient(self):
        p = LinearFitness([2.0, -1.0], noise_std=0.1)
        assert p.exact_smoothed(np.ones(2), 3.0)[1].tolist() == [2.0, -1.0]
        assert p.exact_expectation(np.array([1.0, 1.0])) == 1.0

    def test_sparse_quadratic_closed_form_vs_monte_carlo(self):
        p = SparseQuadratic(np.array([1.0, 0.0, 0.0, -1.0]), scale=1.5, noise_std=0.5)
        theta = np.array([0.3, -0.2, 0.1, 0.0])
        mean, se = mc_smoothed(p, theta, 0.5, 200_000, 1)
        assert abs(mean - p.exact_smoothed(theta, 0.5)[0]) <= 4 * se

    def test_sparse_quadratic_gradient_vs_finite_difference(self):
        p = SparseQuadratic(np.array([1.0, 0.0, -1.0]), scale=2.0)
        theta = np.array([0.5, 0.5, 0.5])
        fd = central_diff(lambda t: p.exact_smoothed(t, 0.3)[0], theta)
        assert np.allclose(fd, p.exact_smoothed(theta, 0.3)[1], rtol=1e-6, atol=1e-8)

    def test_validation(self):
        with pytest.raises(ValueError):
            SparseQuadratic([1.0], scale=0.0)
        with pytest.raises(ValueError):
            SparseQuadratic([1.0], noise_std=-1.0)
        with pytest.raises(ValueError):
            BoundedStep([0.0], radius=0.0)


class TestBoundedStep:
    def test_indicator(self):
        p = BoundedStep(np.zeros(2), 1.0)
        assert p.rollout(np.array([0.6, 0.8])) == 1.0
        assert p.rollout(np.array([0.6, 0.81])) == 0.0
        assert p.rollout_batch(np.array([[0.0, 0.0], [2.0, 0.0]])).tolist() == [1.0, 0.0]

    @pytest.mark.parametrize("s,sigma", [(0.0, 0.5), (0.7, 1.0), (-1.8, 0.4)])
    def test_one_dim_matches_quadrature(self, s, sigma):
        p = BoundedStep(np.array([0.0]), 1.0)
        value, grad = p.exact_smoothed(np.array([s]), sigma)
        q_val = integrate.quad(lambda x: stats.norm.pdf(x, s, sigma), -1, 1)[0]
        # d/ds of the Gaussian mass on [-1, 1]
        q_grad = integrate.quad(lambda x: stats.norm.pdf(x, s, sigma) * (x - s) / sigma**2, -1, 1)[0]
        assert value == pytest.approx(q_val, abs=1e-10)
        assert grad[0] == pytest.approx(q_grad, abs=1e-9)

    @pytest.mark.parametrize("d", [2, 3, 8])
    def test_value_matches_monte_carlo(self, d):
        p = BoundedStep(np.zeros(d), 1.5)
        theta = np.full(d, 0.4)
        mean, se = mc_smoothed(p, theta, 0.6, 200_000, d)
        assert abs(mean - p.exact_smoothed(theta, 0.6)[0]) <= 4 * se + 1e-12

    @pytest.mark.parametrize("d", [2, 5])
    def test_gradient_matches_finite_difference(self, d):
        p = BoundedStep(np.zeros(d), 1.0)
        theta = np.linspace(-0.5, 0.7, d)
        fd = central_diff(lambda t: p.exact_smoothed(t, 0.8)[0], theta, h=1e-4)
        assert np.allclose(fd, p.exact_smoothed(theta, 0.8)[1], rtol=1e-5, atol=1e-7)

    def test_gradient_at_center_is_zero(self):
        p = BoundedStep(np.ones(3), 1.0)
        assert not p.exact_smoothed(np.ones(3), 0.5)[1].any()


class TestBandit:
    def test_mean_zero_and_variance_law(self):
        theta_star = make_theta_star(11, 3, 0)
        p = NoisyLinearBandit(theta_star, sigma_x=1.3)
        theta = np.linspace(-1, 1, 11)
        f = p.rollout_batch(np.tile(theta, (100_000, 1)), np.random.default_rng(2))
        expected = 1.3**2 * float(np.sum((theta - theta_star) ** 2))
        assert p.rollout_variance(theta) == pytest.approx(expected)
        assert abs(f.mean()) <= 4 * math.sqrt(expected / f.size)
        # var of a sample variance for a normal: 2 s^4 / (n - 1)
        assert abs(f.var(ddof=1) - expected) <= 4 * expected * math.sqrt(2 / (f.size - 1))

    def test_exact_f_is_zero(self):
        p = NoisyLinearBandit(np.ones(2))
        assert p.exact_expectation(np.zeros(2)) == 0.0


class TestChain:
    def test_uncapped_expectation_monte_carlo(self):
        p = multi_step_chain(6, np.array([1.0, -1.0, 0.0]), scale=0.5, noise_std=0.3)
        theta = np.array([0.5, 0.0, 0.2])
        f = p.rollout_batch(np.tile(theta, (50_000, 1)), np.random.default_rng(3))
        assert abs(f.mean() - p.exact_expectation(theta)) <= 4 * f.std(ddof=1) / math.sqrt(f.size)

    def test_horizon_one_is_sparse_quadratic(self):
        ts = np.array([1.0, 0.0, -1.0])
        chain = multi_step_chain(1, ts, scale=2.0)
        quad = SparseQuadratic(ts, scale=2.0)
        theta = np.array([0.1, 0.2, 0.3])
        assert chain.exact_expectation(theta) == pytest.approx(quad.exact_expectation(theta))
        assert np.allclose(chain.exact_smoothed(theta, 0.4)[1], quad.exact_smoothed(theta, 0.4)[1])
        assert chain.exact_smoothed(theta, 0.4)[0] == pytest.approx(quad.exact_smoothed(theta, 0.4)[0])

    def test_per_step_variance(self):
        p = multi_step_chain(1, np.array([1.0, 0.0]), scale=1.0, noise_std=0.5)
        theta = np.array([0.4, 0.3])
        f = p.rollout_batch(np.tile(theta, (200_000, 1)), np.random.default_rng(4))
        v = p.per_step_variance(theta)
        assert abs(f.var(ddof=1) / v - 1) < 0.03

    def test_episode_variance_is_horizon_times_step(self):
        p = multi_step_chain(10, np.array([1.0, 0.0]), scale=1.0, noise_std=0.5)
        theta = np.array([0.4, 0.3])
        C = p.empirical_C(theta, 20_000, np.random.default_rng(5))
        assert abs(C / (10 * p.per_step_variance(theta)) - 1) < 0.10

    def test_capped_bounds(self):
        p = multi_step_chain(4, np.ones(2), scale=0.5, reward_cap=2.0, noise_std=0.1)
        assert p.bound_B == 4.0
        assert p.var_bound_C == pytest.approx(4 * (0.25 + 0.01))
        assert p.exact_smoothed(np.zeros(2), 1.0) is None
        r = p.step_rewards(np.full(2, 50.0), np.random.default_rng(0))
        assert np.all(np.abs(r) <= 1.0 + 0.1 * 6)

    def test_validation(self):
        for bad in (dict(horizon=0), dict(scale=-1.0), dict(noise_std=-0.1), dict(reward_cap=0.0)):
            kw = dict(horizon=2) | bad
            with pytest.raises(ValueError):
                multi_step_chain(kw.pop("horizon"), np.ones(2), **kw)


class TestNoiseAugmentation:
    def test_dimension_and_support(self):
        p = augment_with_noise(multi_step_chain(3, make_theta_star(11, 11, 0)), 10)
        assert p.dim == 121 and p.real_dim == 11
        assert p.support.support == tuple(range(11))

    def test_zero_noise_weights_match_inner_with_same_seed(self):
        inner = multi_step_chain(5, np.array([1.0, -1.0]), noise_std=0.4)
        theta = np.concatenate([[0.2, 0.3], np.zeros(4)])
        for collapsed in (False, True):
            aug = augment_with_noise(inner, 2, collapsed=collapsed)
            a = aug.rollout(theta, np.random.default_rng(11))
            b = inner.rollout(theta[:2], np.random.default_rng(11))
            assert a == b

    def test_unit_noise_weight_adds_unit_variance(self):
        inner = NoisyLinearBandit(np.array([1.0, 0.0]))
        aug = augment_with_noise(inner, 1)
        theta = np.array([1.0, 0.0, 1.0, 0.0])
        assert aug.rollout_variance(theta) == inner.rollout_variance(theta[:2]) + 1.0
        f = aug.rollout_batch(np.tile(theta, (100_000, 1)), np.random.default_rng(6))
        assert abs(f.var(ddof=1) - 1.0) <= 4 * math.sqrt(2 / (f.size - 1))

    def test_collapsed_matches_explicit_in_distribution(self):
        inner = multi_step_chain(3, np.array([1.0, 0.0]), noise_std=0.2)
        theta = np.array([0.5, 0.1, 0.3, -0.6, 0.2, 0.0])
        explicit = augment_with_noise(inner, 2).rollout_batch(np.tile(theta, (20_000, 1)), np.random.default_rng(7))
        collapsed = augment_with_noise(inner, 2, collapsed=True).rollout_batch(
            np.tile(theta, (20_000, 1)), np.random.default_rng(8)
        )
        assert stats.ks_2samp(explicit, collapsed).pvalue > 1e-3

    def test_exact_values_delegate_to_widened_task(self):
        inner = multi_step_chain(2, np.array([1.0]))
        aug = augment_with_noise(inner, 3)
        theta = np.array([0.5, 1.0, 0.0, 0.0])
        assert aug.exact_expectation(theta) == pytest.approx(-2 * (0.25 + 1.0))

    def test_rejects_non_episodic(self):
        with pytest.raises(TypeError):
            augment_with_noise(SparseQuadratic([1.0]), 2)
        with pytest.raises(ValueError):
            augment_with_noise(NoisyLinearBandit([1.0]), 0)


class TestRewardMask:
    def test_drop_rate_and_scaled_mean(self):
        inner = multi_step_chain(20, np.array([1.0, 0.0]), scale=1.0)
        p = sparse_reward_mask(inner, 0.9)
        theta = np.array([0.0, 0.5])
        g = np.random.default_rng(9)
        steps = np.array([p.step_rewards(theta, g) for _ in range(5000)])
        assert abs(np.mean(steps == 0.0) - 0.9) < 0.01
        f = steps.sum(axis=1)
        assert abs(f.mean() - p.exact_expectation(theta)) <= 4 * f.std(ddof=1) / math.sqrt(f.size)
        assert p.exact_expectation(theta) == pytest.approx(0.1 * inner.exact_expectation(theta))

    def test_p_zero_zero_is_identity(self):
        inner = multi_step_chain(4, np.array([1.0, 0.0]), noise_std=0.3)
        p = sparse_reward_mask(inner, 0.0)
        theta = np.array([0.2, 0.1])
        assert p.rollout(theta, np.random.default_rng(1)) == inner.rollout(theta, np.random.default_rng(1))

    def test_p_zero_one_silences(self):
        p = sparse_reward_mask(multi_step_chain(4, np.ones(2)), 1.0)
        assert p.rollout(np.zeros(2), np.random.default_rng(0)) == 0.0

    def test_exposes_inner_attributes(self):
        inner = augment_with_noise(multi_step_chain(2, np.array([1.0, 0.0])), 1)
        p = sparse_reward_mask(inner, 0.5)
        assert p.real_dim == 2 and p.support == inner.support
        with pytest.raises(AttributeError):
            p.nonexistent

    def test_rejects(self):
        with pytest.raises(TypeError):
            sparse_reward_mask(SparseQuadratic([1.0]), 0.5)
        with pytest.raises(ValueError):
            sparse_reward_mask(multi_step_chain(1, [1.0]), 1.5)


class TestBatchedRollouts:
    @pytest.fixture(params=["chain", "explicit", "collapsed", "masked"])
    def problem(self, request):
        inner = multi_step_chain(4, np.array([1.0, -1.0]), noise_std=0.3)
        return {
            "chain": inner,
            "explicit": augment_with_noise(inner, 2),
            "collapsed": augment_with_noise(inner, 2, collapsed=True),
            "masked": sparse_reward_mask(augment_with_noise(inner, 2, collapsed=True), 0.7),
        }[request.param]

    def test_streams_match_single_rollouts(self, problem):
        thetas = np.random.default_rng(0).standard_normal((7, problem.dim))
        streams = [derive_stream(3, (1, i, 1)) for i in range(7)]
        batched = problem.rollout_streams(thetas, streams)
        single = [problem.rollout(th, s.generator()) for th, s in zip(thetas, streams)]
        assert batched.tolist() == single

    def test_batch_matches_sequential_generator(self, problem):
        thetas = np.random.default_rng(1).standard_normal((5, problem.dim))
        batched = problem.rollout_batch(thetas, np.random.default_rng(2))
        g = np.random.default_rng(2)
        assert batched.tolist() == [problem.rollout(th, g) for th in thetas]

    def test_row_value_independent_of_batch_size(self, problem):
        thetas = np.random.default_rng(4).standard_normal((6, problem.dim))
        streams = [derive_stream(5, (0, i, 1)) for i in range(6)]
        full = problem.rollout_streams(thetas, streams)
        part = problem.rollout_streams(thetas[2:4], streams[2:4])
        assert full[2:4].tolist() == part.tolist()
