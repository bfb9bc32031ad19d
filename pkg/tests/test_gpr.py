import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import minimize

import oracles
from grl import gpr
from grl.errors import ConfigurationError, DegenerateQueryError, NumericalError, PreconditionError
from grl.kernels import AugmentedState, KernelHyperparameters


def h1(amp=1.0, noise=0.0, lengths=(1.0, 1.0)):
    return KernelHyperparameters(amp, noise, lengths, "se", 1, 1)


class TestFit:
    def test_single_particle_noise_free(self):
        m = gpr.fit([AugmentedState([0.0], [0.0])], [2.0], h1())
        np.testing.assert_allclose(m.alpha, [2.0])

    def test_single_particle_unit_noise(self):
        m = gpr.fit([AugmentedState([0.0], [0.0])], [2.0], h1(noise=1.0))
        np.testing.assert_allclose(m.alpha, [1.0])

    def test_duplicate_inputs_without_noise_raise(self):
        x = AugmentedState([0.5], [0.5])
        with pytest.raises(NumericalError):
            gpr.fit([x, x], [1.0, 2.0], h1())

    def test_empty_input(self):
        with pytest.raises(PreconditionError):
            gpr.fit(np.empty((0, 2)), [], h1())

    def test_non_finite_target(self):
        with pytest.raises((PreconditionError, ConfigurationError, ValueError)):
            gpr.fit([[0.0, 0.0]], [np.nan], h1())

    def test_factor_and_residual_invariants(self, rng):
        X = rng.normal(size=(15, 2))
        q = rng.normal(size=15)
        h = h1(amp=3.0, noise=0.2, lengths=(0.7, 1.2))
        m = gpr.fit(X, q, h)
        K = oracles.gram(X, 3.0, 0.2 + m.jitter, (0.7, 1.2))
        assert np.linalg.norm(m.chol @ m.chol.T - K) <= 1e-8 * np.linalg.norm(K)
        assert np.linalg.norm(K @ m.alpha - q) <= 1e-6 * np.linalg.norm(q)


class TestPredict:
    def test_single_particle_mean_closed_form(self):
        m = gpr.fit([AugmentedState([0.0], [0.0])], [2.0], h1(noise=1.0))
        assert gpr.predict_mean(m, [0.0, 0.0]) == pytest.approx(1.0)

    def test_far_point_reverts_to_prior(self, rng):
        X = rng.normal(size=(6, 2))
        m = gpr.fit(X, rng.normal(size=6), h1(amp=2.5, noise=0.1))
        far = [1e6, 1e6]
        assert gpr.predict_mean(m, far) == 0.0
        assert gpr.predict_variance(m, far) == pytest.approx(2.5)

    def test_zero_noise_interpolates(self, rng):
        X = rng.uniform(-3, 3, size=(10, 2))
        q = rng.normal(size=10) * 5
        m = gpr.fit(X, q, h1(lengths=(0.8, 0.8)))
        np.testing.assert_allclose(m.mean(X), q, atol=1e-8)
        np.testing.assert_allclose(m.variance(X), 0.0, atol=1e-8)

    def test_variance_never_exceeds_amplitude(self, rng):
        X = rng.normal(size=(12, 2))
        m = gpr.fit(X, rng.normal(size=12), h1(amp=4.0, noise=0.3))
        v = m.variance(rng.normal(scale=3, size=(500, 2)))
        assert np.all(v <= 4.0 + 1e-12) and np.all(v >= 0)

    @pytest.mark.parametrize("seed", range(5))
    def test_dense_oracle(self, seed):
        r = np.random.default_rng(seed)
        n = int(r.integers(5, 31))
        X = r.normal(size=(n, 3))
        q = r.normal(size=n) * 10
        ls = tuple(r.uniform(0.5, 2.0, size=3))
        h = KernelHyperparameters(2.0, 0.5, ls, "se", 2, 1)
        Xs = r.normal(size=(7, 3))
        mean, var = gpr.predict(gpr.fit(X, q, h), Xs)
        om, ov = oracles.gp_dense(X, q, Xs, 2.0, 0.5, ls)
        np.testing.assert_allclose(mean, om, atol=1e-8)
        np.testing.assert_allclose(var, ov, atol=1e-8)

    @given(st.floats(0.1, 100.0))
    def test_mean_linear_and_variance_independent_of_targets(self, c):
        r = np.random.default_rng(1)
        X, q, Xs = r.normal(size=(8, 2)), r.normal(size=8), r.normal(size=(5, 2))
        h = h1(noise=0.2)
        a, b = gpr.fit(X, q, h), gpr.fit(X, c * q, h)
        np.testing.assert_allclose(b.mean(Xs), c * a.mean(Xs), rtol=1e-9, atol=1e-12)
        np.testing.assert_allclose(b.variance(Xs), a.variance(Xs), rtol=1e-12, atol=1e-14)


class TestLikelihood:
    def test_hand_value(self):
        m = gpr.fit([AugmentedState([0.0], [0.0])], [2.0], h1(noise=1.0))
        expect = -1.0 - 0.5 * math.log(2.0) - 0.5 * math.log(2 * math.pi)
        assert gpr.log_marginal_likelihood(m) == pytest.approx(expect, abs=1e-12)
        assert expect == pytest.approx(-2.26552, abs=1e-5)

    def test_zero_targets(self, rng):
        X = rng.normal(size=(6, 2))
        h = h1(noise=0.3)
        m = gpr.fit(X, np.zeros(6), h)
        K = oracles.gram(X, 1.0, 0.3, (1.0, 1.0))
        expect = -0.5 * np.linalg.slogdet(K)[1] - 3 * math.log(2 * math.pi)
        assert gpr.log_marginal_likelihood(m) == pytest.approx(expect, abs=1e-10)

    @pytest.mark.parametrize("seed", range(4))
    def test_dense_oracle(self, seed):
        r = np.random.default_rng(100 + seed)
        X, q = r.normal(size=(10, 2)), r.normal(size=10)
        ls = (0.9, 1.6)
        m = gpr.fit(X, q, h1(amp=1.5, noise=0.4, lengths=ls))
        assert gpr.log_marginal_likelihood(m) == pytest.approx(oracles.lml_dense(X, q, 1.5, 0.4, ls), abs=1e-8)

    def test_zero_targets_leave_only_trace_term(self, rng):
        X = rng.normal(size=(7, 2))
        h = h1(amp=2.0, noise=0.3, lengths=(0.8, 1.1))
        g = gpr.lml_gradient(gpr.fit(X, np.zeros(7), h))
        K = oracles.gram(X, 2.0, 0.3, (0.8, 1.1))
        Kinv = np.linalg.inv(K)
        # amplitude derivative in log space is K without the noise
        expect_amp = -0.5 * np.trace(Kinv @ (K - 0.3 * np.eye(7)))
        assert g[0] == pytest.approx(expect_amp, rel=1e-8)

    @pytest.mark.parametrize("kind", ["se", "product"])
    def test_gradient_matches_finite_differences(self, rng, kind):
        X = rng.normal(size=(12, 4))
        q = rng.normal(size=12) * 3
        h = KernelHyperparameters(2.0, 0.3, (0.8, 1.3, 0.6, 1.9), kind, 2, 2)
        g = gpr.lml_gradient(gpr.fit(X, q, h))
        theta = h.log_params()
        for k in range(h.n_params):
            eps = 1e-5
            tp, tm = theta.copy(), theta.copy()
            tp[k] += eps
            tm[k] -= eps
            fd = (gpr.log_marginal_likelihood(gpr.fit(X, q, h.with_log_params(tp)))
                  - gpr.log_marginal_likelihood(gpr.fit(X, q, h.with_log_params(tm)))) / (2 * eps)
            assert g[k] == pytest.approx(fd, rel=1e-4, abs=1e-7)

    def test_gradient_vanishes_at_maximum(self, rng):
        X = rng.uniform(-2, 2, size=(25, 2))
        q = np.sin(X[:, 0]) + 0.1 * rng.normal(size=25)
        h0 = h1(amp=1.0, noise=0.1, lengths=(1.0, 1.0))

        def neg(theta):
            m = gpr.fit(X, q, h0.with_log_params(theta))
            return -gpr.log_marginal_likelihood(m), -gpr.lml_gradient(m)

        res = minimize(neg, h0.log_params(), jac=True, method="L-BFGS-B",
                       options={"gtol": 1e-10, "ftol": 1e-15, "maxiter": 2000})
        g = gpr.lml_gradient(gpr.fit(X, q, h0.with_log_params(res.x)))
        assert np.linalg.norm(g) <= 1e-5


class TestArd:
    def test_trace_non_decreasing_and_improves(self, rng):
        X = rng.uniform(-3, 3, size=(30, 2))
        q = np.sin(X[:, 0]) * 3 + 0.1 * rng.normal(size=30)
        h0 = h1(amp=1.0, noise=1.0, lengths=(5.0, 5.0))
        res = gpr.ard_optimize(X, q, h0, gpr.ArdConfig(max_iters=40))
        assert all(b >= a for a, b in zip(res.trace, res.trace[1:]))
        start = gpr.log_marginal_likelihood(gpr.fit(X, q, h0))
        assert res.lml >= start - 1e-9
        assert res.lml > start
        assert res.n_iter <= 40

    def test_fixed_point(self, rng):
        X = rng.uniform(-2, 2, size=(20, 2))
        q = np.cos(X[:, 1]) + 0.05 * rng.normal(size=20)
        h0 = h1(noise=0.1)

        def neg(theta):
            m = gpr.fit(X, q, h0.with_log_params(theta))
            return -gpr.log_marginal_likelihood(m), -gpr.lml_gradient(m)

        opt = minimize(neg, h0.log_params(), jac=True, method="L-BFGS-B",
                       options={"gtol": 1e-12, "ftol": 1e-16, "maxiter": 5000})
        h_star = h0.with_log_params(opt.x)
        start = gpr.log_marginal_likelihood(gpr.fit(X, q, h_star))
        res = gpr.ard_optimize(X, q, h_star, gpr.ArdConfig(max_iters=50))
        assert res.lml == pytest.approx(start, abs=1e-9)

    def test_bounds_respected(self, rng):
        X = rng.uniform(-2, 2, size=(20, 2))
        q = np.sin(3 * X[:, 0])
        cfg = gpr.ArdConfig(max_iters=60, length_bounds=[(0.5, 1.0), (0.5, 1.0)])
        res = gpr.ard_optimize(X, q, h1(noise=0.1, lengths=(0.8, 0.8)), cfg)
        assert all(0.5 - 1e-12 <= v <= 1.0 + 1e-12 for v in res.hyper.length_scales)

    def test_bad_bounds_shape(self):
        with pytest.raises(ConfigurationError):
            gpr.ArdConfig(length_bounds=[(0.1, 1.0)] * 3).length_box(2)

    def test_needs_two_points(self):
        with pytest.raises(PreconditionError):
            gpr.ard_optimize([[0.0, 0.0]], [1.0], h1())

    def test_zero_noise_stays_zero(self, rng):
        X = rng.uniform(-2, 2, size=(10, 2))
        res = gpr.ard_optimize(X, np.sin(X[:, 0]), h1(noise=0.0), gpr.ArdConfig(max_iters=10))
        assert res.hyper.noise_scale == 0.0


class TestNadarayaWatson:
    def test_lone_particle(self):
        w, est = gpr.nadaraya_watson([[1.0, 2.0]], [7.0], [1.0, 2.0], h1())
        np.testing.assert_allclose(w, [1.0])
        assert est == 7.0

    def test_equidistant_pair(self):
        w, est = gpr.nadaraya_watson([[-1.0, 0.0], [1.0, 0.0]], [0.0, 4.0], [0.0, 0.0], h1())
        assert est == pytest.approx(2.0)

    def test_underflow_raises(self):
        with pytest.raises(DegenerateQueryError):
            gpr.nadaraya_watson([[0.0, 0.0]], [1.0], [1e4, 1e4], h1())

    @given(st.integers(0, 10_000))
    def test_convex_combination(self, seed):
        r = np.random.default_rng(seed)
        X, q = r.normal(size=(9, 2)), r.normal(size=9) * 10
        w, est = gpr.nadaraya_watson(X, q, r.normal(size=2), h1(lengths=(1.5, 1.5)))
        assert np.all(w >= 0)
        assert abs(w.sum() - 1.0) <= 1e-12
        assert q.min() - 1e-12 <= est <= q.max() + 1e-12
