import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adaptg.data import Hypotheses
from adaptg.engine import (MaskedView, OraclePolicy, ProtocolError, fdp_hat, rank_by_score,
                           reveal_by_score, run)
from adaptg.masking import POINT, MaskingParams, default_params, mask_array
from adaptg.normal import norm_logpdf
from adaptg.simlab import LogisticTruth


def largest_m_first(view: MaskedView):
    idx = view.masked_indices
    return rank_by_score(idx, view.m[idx])[: view.batch_size]


class RandomPolicy:
    def __init__(self, seed):
        self.rng = np.random.default_rng(seed)

    def __call__(self, view):
        idx = view.masked_indices
        k = self.rng.integers(1, view.batch_size + 1)
        return self.rng.choice(idx, size=min(k, idx.size), replace=False)


class NullOnly:
    def log_density_z(self, z, x):
        return norm_logpdf(z)


class TestFdpHat:
    @pytest.mark.parametrize("a, r, zeta, expected", [(0, 1, 20, 0.05), (3, 10, 2, 0.2), (1, 21, 1, 2 / 21)])
    def test_examples(self, a, r, zeta, expected):
        assert fdp_hat(a, r, zeta) == pytest.approx(expected, rel=1e-14)

    def test_zero_rejections(self):
        assert fdp_hat(5, 0, 3.0) == math.inf

    def test_negative_counts(self):
        with pytest.raises(ValueError):
            fdp_hat(-1, 2, 1.0)


class TestRevealByScore:
    def test_argmax(self):
        assert reveal_by_score({3: 0.9, 7: 0.2}) == 3

    def test_tie_goes_to_lowest_index(self):
        assert reveal_by_score({7: 0.5, 3: 0.5}) == 3

    def test_all_ties_gives_index_order(self):
        idx = np.array([9, 2, 5, 0])
        assert rank_by_score(idx, np.full(4, 0.75)).tolist() == [0, 2, 5, 9]


class TestRun:
    def test_single_strong_signal_rejected(self):
        p = np.r_[np.full(99, 0.5), 1e-9]
        params = default_params(100, 0.05)
        assert params.zeta == 20 and params.r_min(0.05) == 1
        res = run(Hypotheses.from_p(p), params, 0.05, largest_m_first)
        assert res.rejected.tolist() == [99]
        assert res.trace[-1].fdp_hat <= 0.05

    def test_nothing_maskable(self):
        res = run(Hypotheses.from_p(np.full(10, 0.95)), default_params(10, 0.1), 0.1, largest_m_first)
        assert res.no_rejections and res.n_masked_initial == 0 and res.n_rejections == 0

    def test_immediate_stop(self):
        p = np.r_[np.full(20, 1e-6), np.full(5, 0.5)]
        params = MaskingParams(0.1, 0.1, 0.9)
        res = run(Hypotheses.from_p(p), params, 0.2, largest_m_first)
        assert res.stop_step == 0 and res.n_rejections == 20 and len(res.trace) == 1

    def test_symmetric_estimator(self):
        rng = np.random.default_rng(0)
        p = np.r_[rng.uniform(size=80), rng.uniform(0, 1e-3, size=40)]
        res = run(Hypotheses.from_p(p), MaskingParams.symmetric(), 0.1, largest_m_first)
        for row in res.trace:
            if row.r:
                assert row.fdp_hat == pytest.approx((1 + row.a) / row.r)

    def test_rejections_are_masked_red(self):
        rng = np.random.default_rng(1)
        p = np.r_[rng.uniform(size=300), rng.uniform(0, 1e-4, size=60)]
        params = MaskingParams(0.1, 0.1, 0.9)
        res = run(Hypotheses.from_p(p), params, 0.1, largest_m_first)
        assert res.n_rejections > 0
        assert np.all(p[res.rejected] <= params.alpha_m)


class Spy:
    """Records every view a policy receives, then delegates."""

    def __init__(self, inner):
        self.inner = inner
        self.views = []

    def __call__(self, view):
        self.views.append(view)
        return self.inner(view)


def test_information_barrier():
    rng = np.random.default_rng(2)
    z = np.r_[rng.normal(size=150), rng.normal(3, 1, size=50)]
    hyps = Hypotheses.from_z(z, 1.0, x=rng.normal(size=200), null=POINT)
    params = MaskingParams(0.1, 0.1, 0.9)
    m, maskable, b = mask_array(hyps.p, params)
    spy = Spy(largest_m_first)
    run(hyps, params, 0.05, spy)
    assert spy.views
    fields = {f.name for f in dataclasses.fields(MaskedView)}
    assert fields == {"x", "m", "sigma", "null", "params", "sign", "masked", "revealed_b",
                      "revealed_p", "a", "r", "step", "batch_size"}
    for view in spy.views:
        hidden = view.masked
        assert np.all(view.revealed_b[hidden] == -1)
        assert np.all(np.isnan(view.revealed_p[hidden]))
        np.testing.assert_array_equal(view.m, m)
        # the sign is the sign of z only for red points, so it never leaks b
        blue = hidden & (b == 1)
        np.testing.assert_array_equal(view.sign[blue], -np.sign(hyps.z[blue]))
        assert view.a == int(b[hidden].sum()) and view.r == int(hidden.sum() - b[hidden].sum())


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(5, 200), alpha=st.sampled_from([0.05, 0.1, 0.2]),
       frac=st.floats(0.0, 0.5))
def test_stop_rule_soundness(seed, n, alpha, frac):
    rng = np.random.default_rng(seed)
    k = int(frac * n)
    p = np.r_[rng.uniform(size=n - k), rng.uniform(0, 1e-3, size=k)]
    params = default_params(n, alpha)
    res = run(Hypotheses.from_p(p), params, alpha, RandomPolicy(seed))
    fdps = [row.fdp_hat for row in res.trace]
    sizes = [row.n_masked for row in res.trace]
    assert all(s1 > s2 for s1, s2 in zip(sizes, sizes[1:]))
    if res.no_rejections:
        assert all(f > alpha for f in fdps)
        assert res.trace[-1].r == 0
    else:
        assert fdps[-1] <= alpha and all(f > alpha for f in fdps[:-1])
        assert res.n_rejections == res.trace[-1].r >= params.r_min(alpha)
        assert np.all(p[res.rejected] <= params.alpha_m)


class TestProtocol:
    def hyps(self):
        return Hypotheses.from_p(np.r_[np.full(120, 0.5), np.full(3, 1e-5)])

    @pytest.mark.parametrize("policy", [
        lambda v: [],
        lambda v: [v.masked_indices[0], v.masked_indices[0]],
        lambda v: v.masked_indices[: v.batch_size + 1],
        lambda v: [10_000],
    ])
    def test_bad_requests_abort(self, policy):
        with pytest.raises(ProtocolError):
            run(self.hyps(), MaskingParams(0.1, 0.1, 0.9), 0.1, policy)

    def test_revealing_twice_aborts(self):
        first = {}

        def policy(view):
            first.setdefault("i", int(view.masked_indices[0]))
            return [first["i"]]

        with pytest.raises(ProtocolError):
            run(self.hyps(), MaskingParams(0.1, 0.1, 0.9), 0.1, policy, batch_size=1)

    def test_failing_policy_falls_back(self):
        def policy(view):
            raise np.linalg.LinAlgError("singular")

        res = run(self.hyps(), MaskingParams(0.1, 0.1, 0.9), 0.1, policy)
        assert any(row.note.startswith("policy-fallback") for row in res.trace)


class TestOracle:
    def view(self, p, x, params):
        hyps = Hypotheses.from_p(p, x=x)
        m, maskable, _ = mask_array(hyps.p, params)
        n = len(p)
        return MaskedView(x=hyps.x, m=m, sigma=hyps.sigma, null=hyps.null, params=params, sign=None,
                          masked=maskable, revealed_b=np.where(maskable, -1, 0).astype(np.int8),
                          revealed_p=np.where(maskable, np.nan, p), a=0, r=0, step=0, batch_size=n)

    def test_null_only_gives_prior_ratio(self):
        params = MaskingParams(0.2, 0.3, 0.9)
        p = np.array([0.01, 0.05, 0.15, 0.4, 0.8])
        q = OraclePolicy(NullOnly()).scores(self.view(p, np.zeros(5), params))
        np.testing.assert_allclose(q, 0.75, rtol=1e-12)

    def test_null_only_reveals_in_index_order(self):
        params = MaskingParams(0.2, 0.3, 0.9)
        p = np.array([0.4, 0.01, 0.8, 0.15])
        pol = OraclePolicy(NullOnly())
        assert list(pol(self.view(p, np.zeros(4), params))) == [0, 1, 2, 3]

    def test_logistic_signal_region(self):
        # pi1(3) is about 0.75 and the signal sits near z = 2, so a tiny m is almost surely red
        params = MaskingParams(0.1, 0.1, 0.9)
        p = np.array([1e-6, 1e-6])
        q = OraclePolicy(LogisticTruth()).scores(self.view(p, np.array([3.0, -3.0]), params))
        assert q[0] < 0.01
        assert q[1] > q[0]
