import numpy as np
import pytest

from adaptg.classifier import (FeatureMap, InterceptOnly, MultinomialLogit, ShallowNet,
                               fit_multinomial_logit, fit_shallow_net, spline_basis,
                               weighted_loglik)


def soft_labels(rng, n, K):
    return rng.dirichlet(np.ones(K), size=n)


class TestSplines:
    x = np.random.default_rng(0).normal(size=400)

    def test_dimension_and_rank(self):
        grid = np.linspace(0, 1, 200)
        B, knots = spline_basis(grid, 2)
        assert B.shape == (200, 2) and np.linalg.matrix_rank(B) == 2
        assert knots[0].size == 3

    def test_knots_at_quantiles(self):
        _, knots = spline_basis(self.x, 4)
        np.testing.assert_allclose(knots[0], np.quantile(self.x, [0, 0.25, 0.5, 0.75, 1]))

    def test_smooth_across_knots(self):
        B, knots = spline_basis(self.x, 4)
        h = 1e-4
        for k in knots[0][1:-1]:
            vals = [spline_basis(np.array([k + s * h]), 4, knots=knots)[0][0] for s in (-2, -1, 0, 1, 2)]
            vals = np.array(vals)
            d1_left, d1_right = (vals[2] - vals[1]) / h, (vals[3] - vals[2]) / h
            d2_left = (vals[2] - 2 * vals[1] + vals[0]) / h ** 2
            d2_right = (vals[4] - 2 * vals[3] + vals[2]) / h ** 2
            np.testing.assert_allclose(d1_left, d1_right, atol=1e-3)
            np.testing.assert_allclose(d2_left, d2_right, atol=1e-1)

    def test_linear_beyond_boundary(self):
        _, knots = spline_basis(self.x, 3)
        lo, hi = knots[0][0], knots[0][-1]
        h = 1e-2
        for centre in (lo - 1.0, lo - 0.1, hi + 0.1, hi + 2.0):
            pts = np.array([centre - h, centre, centre + h])
            B, _ = spline_basis(pts, 3, knots=knots)
            d2 = (B[0] - 2 * B[1] + B[2]) / h ** 2
            np.testing.assert_allclose(d2, 0.0, atol=1e-6)

    def test_constant_covariate(self):
        with pytest.warns(UserWarning, match="constant"):
            F = FeatureMap("spline", 3).fit_transform(np.full((50, 1), 2.0))
        assert F.shape == (50, 1) and np.all(F == 1)

    def test_feature_map_reuses_knots(self):
        fmap = FeatureMap("spline", 3).fit(self.x)
        new = np.array([-5.0, 0.0, 5.0])
        np.testing.assert_array_equal(fmap.transform(new)[:, 1:], spline_basis(new, 3, knots=fmap.knots)[0])
        assert FeatureMap("identity").fit_transform(np.ones((4, 2))).shape == (4, 3)

    def test_needs_enough_rows(self):
        with pytest.raises(ValueError):
            spline_basis(np.arange(3.0), 3)


class TestInterceptOnly:
    def test_closed_form(self):
        rng = np.random.default_rng(1)
        W = soft_labels(rng, 100, 3) * rng.uniform(size=(100, 1))
        clf = InterceptOnly().fit(np.ones((100, 1)), W)
        np.testing.assert_allclose(clf.probs, W.sum(0) / W.sum(), atol=1e-12)
        assert clf.n_params() == 2

    def test_logit_on_intercept_matches_frequencies(self):
        rng = np.random.default_rng(2)
        W = soft_labels(rng, 500, 3)
        clf = fit_multinomial_logit(np.ones((500, 1)), W)
        np.testing.assert_allclose(clf.predict_proba(np.ones((2, 1)))[0], W.mean(0), atol=1e-3)


class TestLogit:
    def test_uniform_weights(self):
        rng = np.random.default_rng(3)
        F = np.column_stack([np.ones(300), rng.normal(size=(300, 2))])
        clf = fit_multinomial_logit(F, np.full((300, 4), 0.25))
        np.testing.assert_allclose(clf.predict_proba(F), 0.25, atol=1e-6)

    def test_separable_against_newton_oracle(self):
        rng = np.random.default_rng(4)
        x = np.r_[rng.uniform(-3, -0.5, 40), rng.uniform(0.5, 3, 40)]
        F = np.column_stack([np.ones(80), x])
        W = np.column_stack([(x > 0).astype(float), (x <= 0).astype(float)])
        clf = MultinomialLogit(maxiter=2000, tol=1e-15).fit(F, W)
        P = clf.predict_proba(F)
        assert np.all((P > 0) & (P < 1)) and np.all(np.isfinite(clf.theta))

        # Newton's method on the same convex penalized objective, standardized coordinates
        X = (F[:, clf.cols] - clf.mean) / clf.scale
        beta = np.zeros(X.shape[1])
        for _ in range(200):
            p = 1 / (1 + np.exp(-X @ beta))
            g = X.T @ (W[:, 0] - p) - clf.ridge * beta
            H = X.T @ (X * (p * (1 - p))[:, None]) + clf.ridge * np.eye(X.shape[1])
            beta = beta + np.linalg.solve(H, g)
        p_oracle = 1 / (1 + np.exp(-X @ beta))
        np.testing.assert_allclose(P[:, 0], p_oracle, atol=1e-4)

    def test_collinear_columns_dropped(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=100)
        F = np.column_stack([np.ones(100), x, 2 * x])
        with pytest.warns(UserWarning, match="collinear"):
            clf = fit_multinomial_logit(F, soft_labels(rng, 100, 2))
        assert clf.cols.tolist() == [0, 1]

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(6)
        F = np.column_stack([np.ones(200), rng.normal(size=(200, 3)) * 50])
        clf = fit_multinomial_logit(F, soft_labels(rng, 200, 5))
        np.testing.assert_allclose(clf.predict_proba(F).sum(1), 1.0, atol=1e-10)


class TestShallowNet:
    def instance(self, seed=7, n=60, d=3, K=3):
        rng = np.random.default_rng(seed)
        F = np.column_stack([np.ones(n), rng.normal(size=(n, d - 1))])
        return F, soft_labels(rng, n, K)

    def test_gradient_matches_finite_differences(self):
        F, W = self.instance()
        net = ShallowNet(hidden=2, seed=1).fit(F, W, maxiter=3)
        theta = net.theta + np.random.default_rng(8).normal(scale=0.3, size=net.theta.size)
        g = net.gradient(F, W, theta)

        def f(t):
            net.theta = t
            return net.objective(F, W)

        eps = 1e-6
        fd = np.array([(f(theta + eps * e) - f(theta - eps * e)) / (2 * eps) for e in np.eye(theta.size)])
        rel = np.linalg.norm(g - fd) / np.linalg.norm(fd)
        assert rel < 1e-5

    def test_zero_output_layer_is_uniform(self):
        F, _ = self.instance()
        net = ShallowNet(hidden=3)
        net.K = 4
        net.theta = net._default_theta(net._prep(F))
        np.testing.assert_allclose(net.predict_proba(F), 0.25, atol=1e-15)

    def test_parameter_count(self):
        F, W = self.instance(d=4, K=3)
        net = fit_shallow_net(F, W, hidden=2)
        assert net.theta.size == net.n_params(4) == (4 + 3 - 1) * 2

    def test_xor_beats_logit(self):
        rng = np.random.default_rng(9)
        x = rng.uniform(-1, 1, size=(400, 2))
        label = (x[:, 0] > 0) ^ (x[:, 1] > 0)
        W = np.column_stack([np.where(label, 0.95, 0.05), np.where(label, 0.05, 0.95)])
        F = np.column_stack([np.ones(400), x])
        logit = fit_multinomial_logit(F, W)
        best = max(weighted_loglik(ShallowNet(hidden=2, seed=s, maxiter=1000).fit(F, W).log_proba(F), W)
                   for s in range(3))
        assert best > weighted_loglik(logit.log_proba(F), W) + 10

    def test_history_monotone(self):
        F, W = self.instance(n=200)
        net = ShallowNet(hidden=2, track_history=True).fit(F, W)
        assert len(net.history) > 2
        assert np.all(np.diff(net.history) >= -1e-8)

    def test_warm_start_never_worse(self):
        F, W = self.instance(n=200)
        net = ShallowNet(hidden=2).fit(F, W, maxiter=5)
        before = net.objective(F, W)
        after = net.copy().fit(F, W, init=net, maxiter=2).objective(F, W)
        assert after >= before - 1e-12

    def test_deterministic(self):
        F, W = self.instance(n=150)
        a = ShallowNet(hidden=2, seed=4).fit(F, W)
        b = ShallowNet(hidden=2, seed=4).fit(F, W)
        assert a.theta.tobytes() == b.theta.tobytes()

    def test_init_constant(self):
        F, _ = self.instance()
        for clf in (ShallowNet(hidden=2), MultinomialLogit()):
            clf.init_constant(F, np.array([0.2, 0.5, 0.3]))
            np.testing.assert_allclose(clf.predict_proba(F), np.tile([0.2, 0.5, 0.3], (F.shape[0], 1)),
                                       atol=1e-10)

    def test_rejects_negative_weights(self):
        F, W = self.instance()
        with pytest.raises(ValueError):
            ShallowNet().fit(F, -W)
