import json
from dataclasses import replace
from fractions import Fraction

import numpy as np
import pytest

from nesht.core import derive_stream
from nesht.estimator import EstimatorConfig
from nesht.ht import HtConfig
from nesht.optimizer import (
    DivergenceError,
    OptimizerConfig,
    RunAborted,
    evaluate,
    initial_state,
    load_checkpoint,
    run,
    save_checkpoint,
    stationarity_proxy,
    step,
)
from nesht.problems import (
    LinearFitness,
    SparseQuadratic,
    augment_with_noise,
    multi_step_chain,
    sparse_reward_mask,
)


def philox_normals(seed, t, i, j, size):
    """Independent replay of the documented stream layout for a depth-3 path."""
    key = np.random.SeedSequence(seed, spawn_key=(3,)).generate_state(2, np.uint64)
    bg = np.random.Philox(key=key, counter=np.array([0, t, i, j], dtype=np.uint64))
    return np.random.Generator(bg).standard_normal(size)


def small_task():
    inner = multi_step_chain(4, np.array([1.0, -1.0, 0.0]), noise_std=0.3)
    return sparse_reward_mask(augment_with_noise(inner, 2, collapsed=True), 0.5)


class TestGoldenStep:
    cfg = OptimizerConfig(alpha=0.1, T=1, estimator=EstimatorConfig(0.5), base_seed=0)

    def test_half_step(self):
        p = LinearFitness([1.0, 0.0])
        eps = philox_normals(0, 0, 0, 0, 2)
        assert eps.tolist() == [-0.41042389591892847, -1.72657112850352]
        nxt = step(initial_state(p, self.cfg), p, self.cfg)
        # exact rational oracle: f = a . (sigma eps), g = f eps / sigma, theta = alpha g
        alpha, sigma = Fraction(0.1), Fraction(1, 2)
        f = sigma * Fraction(eps[0])
        exact = [float(alpha * f * Fraction(e) / sigma) for e in eps]
        np.testing.assert_allclose(nxt.last_half_step, exact, rtol=1e-15, atol=0)
        # bit-level regression value of the float evaluation order
        assert nxt.last_half_step.tolist() == [0.016844777434127142, 0.07086260491415557]
        assert nxt.theta.tolist() == nxt.last_half_step.tolist()

    def test_truncated_step(self):
        p = LinearFitness([1.0, 0.0])
        cfg = OptimizerConfig(alpha=0.1, T=1, estimator=EstimatorConfig(0.5), ht=HtConfig(1))
        nxt = step(initial_state(p, cfg), p, cfg)
        assert nxt.theta.tolist() == [0.0, 0.07086260491415557]
        assert nxt.t == 1


class TestFixedPoints:
    def test_zero_gradient_problem_stays_put(self):
        p = LinearFitness([0.0, 0.0, 0.0])
        cfg = OptimizerConfig(0.5, 5, EstimatorConfig(1.0, n=3), ht=HtConfig(2), theta0=(1.0, 0.0, -2.0))
        rec = run(p, cfg)
        assert rec.final_theta.tolist() == [1.0, 0.0, -2.0]
        assert rec.proxies == [0.0] * 5

    def test_zero_step_size(self):
        p = small_task()
        cfg = OptimizerConfig(0.0, 3, EstimatorConfig(0.3), theta0=tuple(np.linspace(-1, 1, p.dim)))
        rec = run(p, cfg)
        assert np.array_equal(rec.final_theta, np.linspace(-1, 1, p.dim))
        assert rec.proxies == [0.0] * 3

    def test_initial_state_is_projected(self):
        p = LinearFitness(np.ones(4))
        cfg = OptimizerConfig(0.1, 1, EstimatorConfig(1.0), ht=HtConfig(2), theta0=(1.0, -3.0, 2.0, 0.5))
        assert initial_state(p, cfg).theta.tolist() == [0.0, -3.0, 2.0, 0.0]


class TestEquivalences:
    def test_full_capacity_is_vanilla(self):
        p = small_task()
        base = OptimizerConfig(0.05, 6, EstimatorConfig(0.3, n=5, N=2), base_seed=3, eval_rollouts=2)
        vanilla = run(p, base)
        full = run(p, replace(base, ht=HtConfig(p.dim)))
        assert np.array_equal(vanilla.final_theta, full.final_theta)
        assert vanilla.scores == full.scores and vanilla.proxies == full.proxies

    def test_workers_do_not_change_trajectory(self):
        p = small_task()
        cfg = OptimizerConfig(0.05, 5, EstimatorConfig(0.3, n=9, N=2), ht=HtConfig(3), base_seed=1)
        a = run(p, cfg)
        b = run(p, replace(cfg, workers=8))
        assert np.array_equal(a.final_theta, b.final_theta)
        assert a.scores == b.scores and a.proxies == b.proxies

    def test_checkpoint_resume_is_exact(self, tmp_path):
        p = small_task()
        cfg = OptimizerConfig(0.01, 8, EstimatorConfig(0.3, n=4), ht=HtConfig(3), base_seed=2, checkpoint_every=3)
        full = run(p, cfg)
        ck = tmp_path / "ck.json"
        run(p, cfg, checkpoint_path=ck)
        state = load_checkpoint(ck, cfg)
        assert state.t == 6
        rest = run(p, cfg, state=state)
        assert rest.start_step == 6
        assert np.array_equal(rest.final_theta, full.final_theta)
        assert rest.scores == full.scores[6:] and rest.proxies == full.proxies[6:]

    def test_checkpoint_rejects_other_config(self, tmp_path):
        p = LinearFitness([1.0])
        cfg = OptimizerConfig(0.1, 2, EstimatorConfig(1.0))
        save_checkpoint(tmp_path / "ck.json", initial_state(p, cfg), cfg)
        with pytest.raises(ValueError):
            load_checkpoint(tmp_path / "ck.json", OptimizerConfig(0.2, 2, EstimatorConfig(1.0)))
        data = json.loads((tmp_path / "ck.json").read_text())
        data["version"] = 99
        (tmp_path / "ck.json").write_text(json.dumps(data))
        with pytest.raises(ValueError):
            load_checkpoint(tmp_path / "ck.json", cfg)


class TestMetrics:
    def test_proxy_definition(self):
        assert stationarity_proxy([0.0, 0.0], [3.0, 4.0], 0.5) == 10.0
        with pytest.raises(ValueError):
            stationarity_proxy([0.0], [1.0], 0.0)

    def test_proxy_tracks_smoothed_gradient(self):
        p = SparseQuadratic(np.zeros(4), scale=1.0)
        cfg = OptimizerConfig(0.05, 10, EstimatorConfig(0.5, n=4000), theta0=(1.0, 1.0, -1.0, 1.0), eval_rollouts=0)
        state = initial_state(p, cfg)
        for _ in range(cfg.T):
            true = np.linalg.norm(p.exact_smoothed(state.theta, 0.5)[1])
            nxt = step(state, p, cfg)
            proxy = stationarity_proxy(state.theta, nxt.theta, cfg.alpha)
            assert abs(proxy / true - 1) < 0.25
            state = nxt

    def test_evaluate_uses_eval_paths(self):
        p = LinearFitness([1.0, 2.0], noise_std=1.0)
        cfg = OptimizerConfig(0.1, 1, EstimatorConfig(1.0, n=3), eval_rollouts=4, base_seed=5)
        theta = np.array([0.5, -0.5])
        want = np.mean([p.rollout(theta, derive_stream(5, (7, 3, j)).generator()) for j in range(1, 5)])
        assert evaluate(theta, p, cfg, 7) == want

    def test_no_eval_rollouts_gives_nan(self):
        cfg = OptimizerConfig(0.1, 1, EstimatorConfig(1.0), eval_rollouts=0)
        assert np.isnan(evaluate(np.zeros(1), LinearFitness([1.0]), cfg, 0))

    def test_record_contents(self):
        p = small_task()
        cfg = OptimizerConfig(0.05, 4, EstimatorConfig(0.3, n=3), ht=HtConfig(2), group_size=3)
        rec = run(p, cfg)
        assert rec.steps == 4 and len(rec.proxies) == 4
        assert all(l0 <= 2 for l0 in rec.l0)
        assert all(g.shape == (3,) for g in rec.group_norms)
        assert rec.wall_time > 0


class TestFailures:
    def test_divergence_aborts_with_partial_record(self):
        p = SparseQuadratic(np.zeros(2), scale=1.0)
        cfg = OptimizerConfig(5.0, 100, EstimatorConfig(0.1, n=50), theta0=(1.0, 1.0), eval_rollouts=0)
        with pytest.raises(RunAborted) as ei:
            run(p, cfg)
        assert isinstance(ei.value.cause, DivergenceError)
        assert 0 < ei.value.partial.steps < 100
        assert ei.value.cause.dump["t"] == ei.value.partial.steps

    def test_validation(self):
        with pytest.raises(ValueError):
            OptimizerConfig(-0.1, 1, EstimatorConfig(1.0))
        with pytest.raises(ValueError):
            OptimizerConfig(0.1, 0, EstimatorConfig(1.0))
        with pytest.raises(ValueError):
            initial_state(LinearFitness([1.0]), OptimizerConfig(0.1, 1, EstimatorConfig(1.0), theta0=(1.0, 2.0)))
        with pytest.raises(ValueError):
            run(LinearFitness([1.0, 1.0]), OptimizerConfig(0.1, 1, EstimatorConfig(1.0), ht=HtConfig(3)))
