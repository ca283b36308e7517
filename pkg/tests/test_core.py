import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nesht.core import (
    RngStream,
    SparsityMask,
    as_param_vector,
    derive_stream,
    feature_group_norms,
    l0_norm,
    pairwise_sum,
)


def _replay(seed, path):
    """Reference stream built directly from the documented layout."""
    prefix = tuple(path[:-3])
    key = np.random.SeedSequence(seed, spawn_key=(len(path),) + prefix).generate_state(2, np.uint64)
    tail = (0, 0, 0) + tuple(path[-3:])
    counter = np.array([0, tail[-3], tail[-2], tail[-1]], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


class TestStreams:
    def test_same_path_same_draws(self):
        a = derive_stream(42, (3, 1, 0)).generator().standard_normal(100)
        b = derive_stream(42, (3, 1, 0)).generator().standard_normal(100)
        assert np.array_equal(a, b)

    def test_distinct_paths_differ(self):
        a = derive_stream(42, (0, 0, 0)).generator().standard_normal(100)
        b = derive_stream(42, (0, 0, 1)).generator().standard_normal(100)
        assert not np.array_equal(a, b)

    def test_distinct_seeds_differ(self):
        a = derive_stream(1, (0, 0, 0)).generator().standard_normal(10)
        b = derive_stream(2, (0, 0, 0)).generator().standard_normal(10)
        assert not np.array_equal(a, b)

    def test_moments(self):
        x = derive_stream(7, (5, 2, 9)).generator().standard_normal(10_000)
        assert abs(x.mean()) <= 4 / np.sqrt(10_000)
        assert abs(x.var() - 1) <= 0.1

    def test_golden_draws(self):
        # frozen from an independent Philox replay (seed 0, path (1, 2, 3))
        x = derive_stream(0, (1, 2, 3)).generator().standard_normal(3)
        expected = [0.3310295087118798, -0.12442071622132501, -1.1078965105045009]
        assert x.tolist() == expected

    @pytest.mark.parametrize("path", [(), (4,), (1, 2), (0, 0, 0), (9, 8, 7, 6), (1, 2, 3, 4, 5)])
    def test_matches_reference_layout(self, path):
        got = derive_stream(123, path).generator().standard_normal(5)
        assert np.array_equal(got, _replay(123, path).standard_normal(5))

    def test_large_seed_key_is_exact(self):
        seed = 2**64 - 1
        got = derive_stream(seed, (2**63 + 5, 1, 0)).generator().standard_normal(4)
        assert np.array_equal(got, _replay(seed, (2**63 + 5, 1, 0)).standard_normal(4))

    def test_child_equals_extended_path(self):
        s = derive_stream(3, (7,))
        assert s.child(1, 2) == derive_stream(3, (7, 1, 2))

    def test_reuse_rewinds(self):
        g = derive_stream(5, (1, 2, 3)).generator()
        g.standard_normal(7)
        again = derive_stream(5, (4, 5, 6)).generator(reuse=g)
        assert again is g
        assert np.array_equal(g.standard_normal(6), derive_stream(5, (4, 5, 6)).generator().standard_normal(6))

    def test_reuse_rejects_other_bitgen(self):
        with pytest.raises(TypeError):
            derive_stream(0, (1,)).generator(reuse=np.random.default_rng(0))

    @pytest.mark.parametrize("bad", [-1, 2**64, 1.5, True])
    def test_rejects_bad_indices(self, bad):
        with pytest.raises((TypeError, ValueError)):
            derive_stream(0, (bad,))
        with pytest.raises((TypeError, ValueError)):
            RngStream(0).child(bad)

    def test_thread_schedule_independent(self):
        paths = [(t, i, j) for t in range(3) for i in range(4) for j in range(3)]
        seq = {p: derive_stream(11, p).generator().standard_normal(8) for p in paths}
        par = {}

        def work(chunk):
            for p in chunk:
                par[p] = derive_stream(11, p).generator().standard_normal(8)

        threads = [threading.Thread(target=work, args=(paths[k::5],)) for k in range(5)]
        for th in threads:
            th.start()
        for th in threads:
            th.join()
        assert all(np.array_equal(seq[p], par[p]) for p in paths)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**64 - 1), st.lists(st.integers(0, 2**64 - 1), max_size=5))
    def test_derivation_is_pure(self, seed, path):
        a = derive_stream(seed, path).generator().integers(0, 2**63, size=4)
        b = derive_stream(seed, tuple(path)).generator().integers(0, 2**63, size=4)
        assert np.array_equal(a, b)


class TestSparsityHelpers:
    def test_l0_counts_exact_zeros(self):
        assert l0_norm([0.0, 1e-300, -0.0, 2.0]) == 2

    def test_group_norms_short_tail(self):
        g = feature_group_norms([1, -2, 3, -4, 5], 2)
        assert g.tolist() == [3.0, 7.0, 5.0]

    @settings(max_examples=60, deadline=None)
    @given(
        st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=40),
        st.integers(1, 12),
    )
    def test_group_norms_sum_to_l1(self, values, size):
        v = np.array(values)
        assert np.isclose(feature_group_norms(v, size).sum(), np.abs(v).sum(), rtol=1e-12, atol=1e-9)

    def test_group_size_validated(self):
        with pytest.raises(ValueError):
            feature_group_norms([1.0], 0)

    def test_mask_of(self):
        m = SparsityMask.of(np.array([0.0, 3.0, 0.0, -1.0]))
        assert m.support == (1, 3) and m.k == 2 and m.d == 4

    def test_mask_rejects_over_capacity(self):
        with pytest.raises(ValueError):
            SparsityMask((0, 1, 2), k=2, d=4)

    def test_param_vector_rejects_nan(self):
        with pytest.raises(ValueError):
            as_param_vector([1.0, np.nan])


class TestPairwiseSum:
    def test_matches_sum(self):
        rows = [np.full(3, float(i)) for i in range(7)]
        assert np.array_equal(pairwise_sum(rows), np.full(3, 21.0))

    def test_order_is_fixed(self):
        rng = np.random.default_rng(0)
        rows = list(rng.standard_normal((33, 4)))
        assert np.array_equal(pairwise_sum(rows), pairwise_sum([r.copy() for r in rows]))

    def test_empty(self):
        with pytest.raises(ValueError):
            pairwise_sum([])
