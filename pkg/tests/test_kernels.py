import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kohimspe.kernels import (
    KernelConfig,
    cross_covariance,
    cross_covariance_grad,
    kernel_grad_row,
    kernel_value,
)

unit = st.floats(0.0, 1.0, allow_nan=False)
theta_st = st.floats(0.01, 5.0, allow_nan=False)


class TestKernelValue:
    def test_zero_distance_is_one(self):
        cfg = KernelConfig([0.3, 0.7], nugget=0.0, jitter=0.0)
        assert kernel_value([0.2, 0.4], [0.2, 0.4], cfg, same_index=True) == 1.0

    def test_unit_gap(self):
        cfg = KernelConfig([1.0], jitter=0.0)
        assert kernel_value([0.0], [1.0], cfg) == pytest.approx(math.exp(-1.0), rel=1e-15)

    def test_diagonal_term_only_on_same_index(self):
        cfg = KernelConfig([0.5], nugget=0.1, jitter=1e-8)
        assert kernel_value([0.3], [0.3], cfg) == 1.0
        assert kernel_value([0.3], [0.3], cfg, same_index=True) == pytest.approx(1.1 + 1e-8)

    @given(st.lists(unit, min_size=3, max_size=3), st.lists(unit, min_size=3, max_size=3),
           st.lists(theta_st, min_size=3, max_size=3))
    def test_symmetric(self, a, b, theta):
        cfg = KernelConfig(theta)
        assert kernel_value(a, b, cfg) == kernel_value(b, a, cfg)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            kernel_value([0.1, 0.2], [0.1], KernelConfig([1.0, 1.0]))

    @pytest.mark.parametrize("theta", [[0.0], [-1.0], [np.inf]])
    def test_bad_lengthscale(self, theta):
        with pytest.raises(ValueError):
            KernelConfig(theta)

    def test_negative_nugget(self):
        with pytest.raises(ValueError):
            KernelConfig([1.0], nugget=-1e-3)


class TestCrossCovariance:
    def test_entries_match_kernel_value(self, rng):
        cfg = KernelConfig([0.2, 0.9, 0.4])
        A, B = rng.random((5, 3)), rng.random((4, 3))
        K = cross_covariance(A, B, cfg)
        expect = np.array([[kernel_value(a, b, cfg) for b in B] for a in A])
        np.testing.assert_allclose(K, expect, rtol=1e-14)

    def test_add_diagonal(self, rng):
        cfg = KernelConfig([0.3, 0.3], nugget=0.05)
        A = rng.random((6, 2))
        K = cross_covariance(A, A, cfg, add_diagonal=True)
        np.testing.assert_allclose(np.diag(K), 1.05 + cfg.jitter)
        np.testing.assert_array_equal(K, K.T)

    def test_add_diagonal_needs_same_design(self, rng):
        cfg = KernelConfig([0.3])
        with pytest.raises(ValueError):
            cross_covariance(rng.random((3, 1)), rng.random((3, 1)), cfg, add_diagonal=True)

    def test_column_mismatch(self, rng):
        with pytest.raises(ValueError):
            cross_covariance(rng.random((3, 2)), rng.random((3, 3)), KernelConfig([1.0, 1.0]))

    def test_large_path_agrees(self, rng):
        # the expanded-square branch must agree with explicit differences
        cfg = KernelConfig([0.1, 0.5])
        A, B = rng.random((1200, 2)), rng.random((900, 2))
        K = cross_covariance(A, B, cfg)
        np.testing.assert_allclose(K[:5, :5], cross_covariance(A[:5], B[:5], cfg), atol=1e-12)


class TestGradients:
    @settings(max_examples=50)
    @given(st.lists(unit, min_size=2, max_size=2), st.lists(unit, min_size=2, max_size=2),
           st.lists(st.floats(0.05, 2.0), min_size=2, max_size=2), st.integers(0, 1))
    def test_row_gradient_finite_difference(self, a, b, theta, l):
        cfg = KernelConfig(theta)
        h = 1e-6
        e = np.eye(2)[l] * h
        fd = (kernel_value(np.add(a, e), b, cfg) - kernel_value(np.subtract(a, e), b, cfg)) / (2 * h)
        assert kernel_grad_row(a, b, cfg, l) == pytest.approx(fd, abs=1e-8)

    def test_out_of_range_coordinate(self):
        with pytest.raises(IndexError):
            kernel_grad_row([0.1], [0.2], KernelConfig([1.0]), 1)

    def test_matrix_gradient_matches_rows(self, rng):
        cfg = KernelConfig([0.2, 0.6])
        a, B = rng.random(2), rng.random((7, 2))
        G = cross_covariance_grad(a, B, cfg)
        expect = np.array([[kernel_grad_row(a, b, cfg, l) for b in B] for l in range(2)])
        np.testing.assert_allclose(G, expect, rtol=1e-13)
