import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from grl.errors import ConfigurationError, PreconditionError
from grl.kernels import (
    AugmentedState,
    KernelHyperparameters,
    correlation,
    correlation_matrix,
    cross_kernel,
    gram_gradients,
    gram_matrix,
    kernel_param_gradient,
    kernel_value,
    paired_correlation,
)


def hyp(amp=1.0, noise=0.0, lengths=(1.0, 1.0), kind="se", m=1, n=1):
    return KernelHyperparameters(amp, noise, lengths, kind, m, n)


finite = st.floats(-5, 5, allow_nan=False)
vec4 = arrays(np.float64, 4, elements=finite)
lengths4 = arrays(np.float64, 4, elements=st.floats(0.2, 5.0))


class TestHyperparameters:
    def test_rejects_non_positive_amplitude(self):
        with pytest.raises(ConfigurationError):
            hyp(amp=0.0)

    def test_rejects_negative_noise(self):
        with pytest.raises(ConfigurationError):
            hyp(noise=-1.0)

    def test_rejects_bad_length(self):
        with pytest.raises(ConfigurationError):
            hyp(lengths=(1.0, 0.0))

    def test_length_count_must_match_dims(self):
        with pytest.raises(ConfigurationError):
            KernelHyperparameters(1.0, 0.0, (1.0, 1.0, 1.0), "se", 1, 1)

    def test_roundtrip_dict(self):
        h = KernelHyperparameters(3.0, 0.2, (1.0, 2.0, 0.5), "product", 2, 1)
        assert KernelHyperparameters.from_dict(h.to_dict()) == h

    def test_log_params_roundtrip(self):
        h = KernelHyperparameters(3.0, 0.2, (1.0, 2.0, 0.5), "se", 2, 1)
        back = h.with_log_params(h.log_params())
        assert back.signal_amplitude == pytest.approx(3.0)
        assert back.length_scales == pytest.approx(h.length_scales)


class TestKernelValue:
    def test_identical_points_give_amplitude(self):
        x = AugmentedState([0.3], [-1.2])
        assert kernel_value(x, x, hyp()) == 1.0

    def test_unit_distance_hand_value(self):
        x, y = AugmentedState([0.0], [0.0]), AugmentedState([1.0], [0.0])
        assert kernel_value(x, y, hyp()) == pytest.approx(math.exp(-0.5), abs=1e-15)
        assert kernel_value(x, y, hyp()) == pytest.approx(0.60653, abs=1e-5)

    def test_noise_only_when_requested(self):
        x = AugmentedState([0.0], [0.0])
        h = hyp(noise=0.1)
        assert kernel_value(x, x, h) == 1.0
        assert kernel_value(x, x, h, include_noise=True) == pytest.approx(1.1)

    def test_accepts_nine_dimensional_joint(self):
        h = KernelHyperparameters(2.0, 0.5, (1.0,) * 9, "se", 3, 6)
        x = AugmentedState(np.zeros(3), np.zeros(6))
        assert kernel_value(x, x, h) == 2.0

    def test_dimension_mismatch(self):
        with pytest.raises(ConfigurationError):
            kernel_value(np.zeros(3), np.zeros(3), hyp())

    @given(vec4, vec4, lengths4, st.floats(0.1, 50))
    def test_matches_oracle_both_kinds(self, a, b, ls, amp):
        for kind in ("se", "product"):
            h = KernelHyperparameters(amp, 0.0, ls, kind, 2, 2)
            expect = oracles.se(a, b, amp, ls) if kind == "se" else oracles.product_kernel(a, b, amp, ls, 2)
            assert kernel_value(a, b, h) == pytest.approx(expect, rel=1e-12, abs=1e-300)

    @given(vec4, vec4, lengths4)
    def test_symmetric(self, a, b, ls):
        h = KernelHyperparameters(2.0, 0.3, ls, "se", 2, 2)
        assert kernel_value(a, b, h) == kernel_value(b, a, h)


class TestCorrelation:
    def test_self_correlation_is_one(self):
        x = AugmentedState([1.0], [2.0])
        assert correlation(x, x, hyp(amp=7.0)) == 1.0

    def test_quadform_two(self):
        # quadform = (dx / l)^2 summed = 2  ->  exp(-1)
        h = hyp(lengths=(1.0, 1.0))
        assert correlation([0.0, 0.0], [1.0, 1.0], h) == pytest.approx(math.exp(-1.0), abs=1e-15)
        assert correlation([0.0, 0.0], [1.0, 1.0], h) == pytest.approx(0.36788, abs=1e-5)

    def test_amplitude_cancels(self):
        a, b = [0.1, 0.7], [1.3, -0.4]
        assert correlation(a, b, hyp(amp=1.0)) == pytest.approx(correlation(a, b, hyp(amp=10.0)), rel=1e-15)

    @given(vec4, vec4, lengths4)
    def test_range(self, a, b, ls):
        h = KernelHyperparameters(3.0, 0.0, ls, "se", 2, 2)
        c = correlation(a, b, h)
        assert 0.0 <= c <= 1.0

    @given(vec4, vec4, lengths4, st.integers(0, 3), st.floats(0.1, 0.9))
    def test_shrinking_length_decreases_correlation(self, a, b, ls, k, factor):
        if abs(a[k] - b[k]) < 1e-3:
            return
        h = KernelHyperparameters(1.0, 0.0, ls, "se", 2, 2)
        shorter = list(ls)
        shorter[k] *= factor
        h2 = KernelHyperparameters(1.0, 0.0, shorter, "se", 2, 2)
        c1, c2 = correlation(a, b, h), correlation(a, b, h2)
        assert c2 < c1 or c1 == 0.0

    def test_matrix_and_paired_agree_with_scalar(self, rng):
        h = KernelHyperparameters(4.0, 0.0, (0.5, 1.0, 2.0, 0.7), "se", 2, 2)
        A, B = rng.normal(size=(6, 4)), rng.normal(size=(6, 4))
        C = correlation_matrix(A, B, h)
        P = paired_correlation(A, B, h)
        for i in range(6):
            assert P[i] == pytest.approx(correlation(A[i], B[i], h), rel=1e-12)
            for j in range(6):
                assert C[i, j] == pytest.approx(correlation(A[i], B[j], h), rel=1e-12)


class TestGram:
    def test_single_point_hand_value(self):
        K = gram_matrix([AugmentedState([0.0], [0.0])], hyp(noise=0.1))
        np.testing.assert_allclose(K, [[1.1]])

    def test_empty_rejected(self):
        with pytest.raises(PreconditionError):
            gram_matrix([], hyp())

    def test_matches_oracle_and_symmetric(self, rng):
        X = rng.normal(size=(12, 4))
        ls = (0.8, 1.1, 0.5, 2.0)
        h = KernelHyperparameters(2.5, 0.3, ls, "se", 2, 2)
        K = gram_matrix(X, h)
        np.testing.assert_allclose(K, oracles.gram(X, 2.5, 0.3, ls), rtol=1e-12)
        assert np.array_equal(K, K.T)

    def test_min_eigenvalue_at_least_noise(self, rng):
        X = rng.normal(size=(20, 4))
        h = KernelHyperparameters(1.0, 0.25, (0.6,) * 4, "se", 2, 2)
        assert np.linalg.eigvalsh(gram_matrix(X, h)).min() >= 0.25 - 1e-10

    def test_cross_kernel_has_no_noise(self, rng):
        X = rng.normal(size=(5, 4))
        h = KernelHyperparameters(1.0, 0.5, (1.0,) * 4, "se", 2, 2)
        np.testing.assert_allclose(np.diag(cross_kernel(X, X, h)), 1.0)

    def test_product_equals_se_on_joint(self, rng):
        # unit-amplitude factors with a single leading amplitude collapse to one SE
        X = rng.normal(size=(8, 5))
        ls = (0.7, 1.3, 0.4, 2.0, 1.0)
        a = gram_matrix(X, KernelHyperparameters(3.0, 0.1, ls, "product", 2, 3))
        b = gram_matrix(X, KernelHyperparameters(3.0, 0.1, ls, "se", 2, 3))
        np.testing.assert_allclose(a, b, rtol=1e-13)


class TestGradients:
    def test_log_amplitude_gradient_is_noise_free_value(self):
        h = KernelHyperparameters(2.0, 0.4, (1.0, 0.5), "se", 1, 1)
        x, y = [0.2, 0.1], [0.9, -0.3]
        assert kernel_param_gradient(x, y, h, 0) == pytest.approx(kernel_value(x, y, h))
        assert kernel_param_gradient(x, x, h, 0) == pytest.approx(2.0)

    def test_log_noise_gradient_off_diagonal_zero(self):
        h = KernelHyperparameters(2.0, 0.4, (1.0, 0.5), "se", 1, 1)
        assert kernel_param_gradient([0.0, 0.0], [1.0, 0.0], h, 1) == 0.0

    def test_out_of_range_index(self):
        with pytest.raises(ConfigurationError):
            kernel_param_gradient([0.0, 0.0], [1.0, 0.0], hyp(), 4)

    @pytest.mark.parametrize("kind", ["se", "product"])
    def test_central_differences(self, rng, kind):
        X = rng.normal(size=(6, 4))
        h = KernelHyperparameters(1.7, 0.3, (0.9, 1.4, 0.6, 2.2), kind, 2, 2)
        G = gram_gradients(X, h)
        theta = h.log_params()
        eps = 1e-6
        for k in range(h.n_params):
            tp, tm = theta.copy(), theta.copy()
            tp[k] += eps
            tm[k] -= eps
            fd = (gram_matrix(X, h.with_log_params(tp)) - gram_matrix(X, h.with_log_params(tm))) / (2 * eps)
            np.testing.assert_allclose(G[k], fd, rtol=1e-6, atol=1e-9)
            for i, j in [(0, 1), (2, 2), (4, 5)]:
                # the Gram diagonal carries the noise, so ask for it there
                g = kernel_param_gradient(X[i], X[j], h, k, include_noise=(i == j))
                assert g == pytest.approx(G[k][i, j], rel=1e-6, abs=1e-12)
