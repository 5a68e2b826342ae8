import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adaptg.baselines import bh, storey_bh, storey_pi0

p_lists = st.lists(st.floats(0.0, 1.0), min_size=1, max_size=60)


def step_up_reference(p, level):
    # direct enumeration: largest k with p_(k) <= k level / n
    p = np.asarray(p)
    n = p.size
    srt = np.sort(p)
    ks = [k for k in range(1, n + 1) if srt[k - 1] <= k * level / n]
    if not ks:
        return set()
    return set(np.flatnonzero(p <= srt[max(ks) - 1]).tolist())


class TestBH:
    def test_example(self):
        res = bh([0.01, 0.02, 0.3, 0.9], 0.05)
        assert sorted(res.indices.tolist()) == [0, 1]
        assert res.threshold == pytest.approx(0.02)

    def test_all_ones(self):
        res = bh(np.ones(10), 0.1)
        assert res.indices.size == 0 and res.threshold is None

    def test_boundary_is_rejected(self):
        assert bh([0.05], 0.05).indices.tolist() == [0]

    def test_domain(self):
        with pytest.raises(ValueError):
            bh([0.5, 1.5], 0.1)

    @settings(max_examples=200, deadline=None)
    @given(p=p_lists, alpha=st.floats(0.001, 0.5))
    def test_matches_enumeration(self, p, alpha):
        res = bh(p, alpha)
        assert set(res.indices.tolist()) == step_up_reference(p, alpha)
        if res.indices.size:
            arr = np.asarray(p)
            assert np.all(arr[res.indices] <= res.threshold)
            assert np.all(np.delete(arr, res.indices) > res.threshold)

    @settings(max_examples=100, deadline=None)
    @given(p=p_lists, a1=st.floats(0.001, 0.5), a2=st.floats(0.001, 0.5))
    def test_monotone_in_alpha(self, p, a1, a2):
        lo, hi = sorted((a1, a2))
        assert set(bh(p, lo).indices.tolist()) <= set(bh(p, hi).indices.tolist())

    @settings(max_examples=100, deadline=None)
    @given(p=p_lists, seed=st.integers(0, 1000))
    def test_permutation_equivariance(self, p, seed):
        p = np.asarray(p)
        perm = np.random.default_rng(seed).permutation(p.size)
        a = set(perm[bh(p[perm], 0.1).indices].tolist())
        assert a == set(bh(p, 0.1).indices.tolist())


class TestStorey:
    def test_pi0_calibrated_under_null(self):
        rng = np.random.default_rng(0)
        est = np.array([storey_pi0(rng.uniform(size=10_000)) for _ in range(200)])
        assert np.mean((est >= 0.95) & (est <= 1.05)) >= 0.95

    def test_pi0_capped(self):
        assert storey_pi0(np.full(20, 0.9)) == 1.0

    def test_pi0_formula(self):
        p = np.array([0.1, 0.2, 0.6, 0.7, 0.8, 0.01, 0.02, 0.03])
        assert storey_pi0(p) == pytest.approx((1 + 3) / (8 * 0.5))

    def test_reduces_to_bh_when_pi0_is_one(self):
        rng = np.random.default_rng(1)
        p = rng.uniform(0.4, 1.0, size=300)
        assert storey_pi0(p) == 1.0
        assert storey_bh(p, 0.1).indices.tolist() == bh(p, 0.1).indices.tolist()

    @settings(max_examples=200, deadline=None)
    @given(p=p_lists, alpha=st.floats(0.001, 0.5), lam=st.floats(0.05, 0.95))
    def test_contains_bh(self, p, alpha, lam):
        assert set(bh(p, alpha).indices.tolist()) <= set(storey_bh(p, alpha, lam).indices.tolist())

    def test_bad_lambda(self):
        with pytest.raises(ValueError):
            storey_bh([0.1], 0.1, lambda_s=1.0)
