import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, special

from kohimspe.gp import GpData, GpFit, predict
from kohimspe.imspe import (
    CandidateRejected,
    KohImspe,
    MImspe,
    ProximityError,
    augmented_covariance,
    block_inverse,
    build_w_set,
    dw_mixed,
    dw_same,
    dw_same_diag,
    integrated_variance,
    koh_imspe,
    koh_imspe_dense,
    koh_imspe_grad,
    m_imspe,
    w_entry_mixed_scale,
    w_entry_same_scale,
)
from kohimspe.kernels import KernelConfig
from kohimspe.koh import FieldData, KohFit, SimData

from conftest import random_koh_fit

unit = st.floats(0.0, 1.0, allow_nan=False)
theta_st = st.floats(0.01, 3.0, allow_nan=False)


def quad_same(a, b, t):
    f = lambda x: math.exp(-(a - x) ** 2 / t - (b - x) ** 2 / t)
    return integrate.quad(f, 0, 1, points=[a, b], epsabs=1e-14, epsrel=1e-13, limit=200)[0]


class TestEntries:
    def test_origin_closed_form(self):
        assert w_entry_same_scale(0.0, 0.0, 1.0) == pytest.approx(
            math.sqrt(2 * math.pi) / 4 * special.erf(math.sqrt(2)), rel=1e-15)

    def test_same_scale_quadrature(self):
        assert abs(w_entry_same_scale(0.3, 0.7, 0.5) - quad_same(0.3, 0.7, 0.5)) < 1e-10

    def test_mixed_scale_quadrature(self):
        f = lambda x: math.exp(-(0.2 - x) ** 2 / 0.3 - (0.8 - x) ** 2 / 0.7)
        ref = integrate.quad(f, 0, 1, epsabs=1e-14, epsrel=1e-13)[0]
        assert abs(w_entry_mixed_scale(0.2, 0.8, 0.3, 0.7) - ref) < 1e-10

    @given(unit, unit, theta_st)
    def test_same_scale_symmetric(self, a, b, t):
        assert w_entry_same_scale(a, b, t) == pytest.approx(w_entry_same_scale(b, a, t), rel=1e-13)

    @given(unit, unit, theta_st)
    def test_mixed_reduces_to_same(self, a, b, t):
        assert w_entry_mixed_scale(a, b, t, t) == pytest.approx(
            w_entry_same_scale(a, b, t), rel=1e-12, abs=1e-300)

    @given(unit, unit, theta_st, theta_st)
    def test_mixed_swap(self, a, b, tm, tb):
        assert w_entry_mixed_scale(a, b, tm, tb) == pytest.approx(
            w_entry_mixed_scale(b, a, tb, tm), rel=1e-12, abs=1e-300)

    @pytest.mark.parametrize("t", [0.0, -0.5])
    def test_nonpositive_lengthscale(self, t):
        with pytest.raises(ValueError):
            w_entry_same_scale(0.1, 0.2, t)
        with pytest.raises(ValueError):
            w_entry_mixed_scale(0.1, 0.2, t, 0.5)

    @settings(max_examples=60)
    @given(unit, st.floats(0.01, 0.99), st.floats(0.05, 2.0), st.floats(0.05, 2.0))
    def test_derivatives_finite_difference(self, a, t, tm, tb):
        h = 1e-6
        fd = (w_entry_same_scale(a, t + h, tm) - w_entry_same_scale(a, t - h, tm)) / (2 * h)
        assert dw_same(a, t, tm) == pytest.approx(fd, abs=1e-7)
        fd = (w_entry_same_scale(t + h, t + h, tm) - w_entry_same_scale(t - h, t - h, tm)) / (2 * h)
        assert dw_same_diag(t, tm) == pytest.approx(fd, abs=1e-7)
        fd = (w_entry_mixed_scale(t + h, a, tm, tb) - w_entry_mixed_scale(t - h, a, tm, tb)) / (2 * h)
        assert dw_mixed(t, a, tm, tb) == pytest.approx(fd, abs=1e-7)


def trapezoid(f, n=2000):
    """Trapezoid rule on n nodes with the first Euler-Maclaurin end
    correction; end slopes from second-order one-sided differences."""
    x = np.linspace(0.0, 1.0, n)
    y = f(x)
    h = x[1] - x[0]
    d0 = (-3 * y[0] + 4 * y[1] - y[2]) / (2 * h)
    d1 = (3 * y[-1] - 4 * y[-2] + y[-3]) / (2 * h)
    return np.trapezoid(y, x) - h * h / 12 * (d1 - d0)


class TestWSet:
    def test_block_structure(self, rng):
        fit = random_koh_fit(rng, p=2, s=1, n_field=3, n_sim=5)
        ws = build_w_set(fit, rng.random(3))
        nf = 3
        assert np.all(ws.Wmb[:, nf:] == 0)
        assert np.all(ws.Wbb[nf:, :] == 0) and np.all(ws.Wbb[:, nf:] == 0)
        np.testing.assert_allclose(ws.Wmm, ws.Wmm.T, rtol=1e-14)
        np.testing.assert_allclose(ws.Wbb, ws.Wbb.T, rtol=1e-14)
        for D in (ws.dWmm, ws.dWmb):
            assert np.all(D[:, :-1, :-1] == 0)

    def test_field_block_has_unit_u_factor(self, rng):
        fit = random_koh_fit(rng, p=1, s=2, n_field=4, n_sim=3)
        ws = build_w_set(fit, rng.random(3))
        Xf = fit.field.Xf[:, 0]
        t = fit.cfg_m.lengthscales[0]
        expect = w_entry_same_scale(Xf[:, None], Xf[None, :], t)
        np.testing.assert_allclose(ws.Wmm[:4, :4], expect, rtol=1e-13)

    def test_trapezoid_oracle(self, rng):
        fit = random_koh_fit(rng, p=1, s=1, n_field=2, n_sim=2, theta=(0.5, 1.0),
                             theta_b=(0.5, 1.0))
        cand = np.array([0.37, 0.81])
        ws = build_w_set(fit, cand)
        Z = np.vstack([fit.design, cand])
        tm, tb = fit.cfg_m.lengthscales, fit.cfg_b.lengthscales
        uh = fit.u_hat.u_hat[0]

        def km(i):
            return lambda x: np.exp(-(Z[i, 0] - x) ** 2 / tm[0] - (Z[i, 1] - uh) ** 2 / tm[1])

        def kb(j):
            return lambda x: np.exp(-(Z[j, 0] - x) ** 2 / tb[0])

        n = Z.shape[0]
        for i in range(n):
            for j in range(n):
                assert abs(ws.Wmm[i, j] - trapezoid(lambda x: km(i)(x) * km(j)(x))) < 1e-8
                if j < 2:
                    assert abs(ws.Wmb[i, j] - trapezoid(lambda x: km(i)(x) * kb(j)(x))) < 1e-8
                if i < 2 and j < 2:
                    assert abs(ws.Wbb[i, j] - trapezoid(lambda x: kb(i)(x) * kb(j)(x))) < 1e-8

    def test_derivatives_finite_difference(self, rng):
        fit = random_koh_fit(rng, p=2, s=2, n_field=3, n_sim=4)
        cand = np.array([0.3, 0.6, 0.45, 0.2])
        ws = build_w_set(fit, cand)
        h = 1e-6
        for l in range(4):
            e = np.eye(4)[l] * h
            hi, lo = build_w_set(fit, cand + e), build_w_set(fit, cand - e)
            np.testing.assert_allclose(ws.dWmm[l], (hi.Wmm - lo.Wmm) / (2 * h), atol=1e-8)
            np.testing.assert_allclose(ws.dWmb[l], (hi.Wmb - lo.Wmb) / (2 * h), atol=1e-8)

    def test_u_derivatives_vanish_at_estimate(self, rng):
        fit = random_koh_fit(rng, p=1, s=2, n_field=3, n_sim=4)
        cand = np.concatenate([[0.42], fit.u_hat.u_hat])
        ws = build_w_set(fit, cand)
        assert np.max(np.abs(ws.dWmm[1:])) <= 1e-12
        assert np.max(np.abs(ws.dWmb[1:])) <= 1e-12


class TestBlockInverse:
    def test_small_instance_against_dense(self, rng):
        fit = random_koh_fit(rng, p=1, s=1, n_field=3, n_sim=2)
        cand = np.array([0.55, 0.35])
        B = block_inverse(fit, cand)
        dense = np.linalg.inv(augmented_covariance(fit, cand))
        assert np.max(np.abs(B.assemble() - dense)) <= 1e-9

    def test_identity(self, rng):
        fit = random_koh_fit(rng, p=2, s=1, n_field=5, n_sim=8)
        cand = rng.random(3)
        S = augmented_covariance(fit, cand)
        np.testing.assert_allclose(block_inverse(fit, cand).assemble() @ S, np.eye(14), atol=1e-8)

    def test_far_candidate(self):
        fit = KohFit.from_params(FieldData([[0.0]], [0.3]), SimData([[0.0], [0.05]], [[0.0], [0.1]],
                                 [0.1, 0.2]), [0.0], KernelConfig([1e-3, 1e-3]),
                                 KernelConfig([0.1], nugget=0.1), 1.7, 0.4)
        B = block_inverse(fit, [1.0, 1.0])
        assert B.b_scalar == pytest.approx(1.7 * (1 + fit.cfg_m.diag), abs=1e-6)

    def test_inner_inverse_symmetric(self, rng):
        fit = random_koh_fit(rng, p=1, s=1)
        A = block_inverse(fit, rng.random(2)).inner_inverse
        assert np.array_equal(A, A.T)


class TestKohImspe:
    def test_fast_path_matches_dense(self, rng):
        for _ in range(10):
            fit = random_koh_fit(rng, p=2, s=2, n_field=5, n_sim=10)
            cand = rng.random(4)
            assert koh_imspe(fit, cand) == pytest.approx(koh_imspe_dense(fit, cand), rel=1e-9)

    def test_batch_matches_single(self, rng):
        fit = random_koh_fit(rng, p=1, s=2, n_field=4, n_sim=6)
        crit = KohImspe(fit)
        C = rng.random((7, 3))
        np.testing.assert_allclose(crit.values(C), [crit.value(c) for c in C], rtol=1e-12)

    def test_bounded_by_prior(self, rng):
        fit = random_koh_fit(rng, p=2, s=1, n_field=4, n_sim=6)
        vals = KohImspe(fit).values(rng.random((100, 3)))
        assert np.all(vals > 0) and np.all(vals < fit.nu_m + fit.nu_b)

    def test_duplicate_rejected(self, rng):
        fit = random_koh_fit(rng, p=1, s=1, n_field=3, n_sim=5)
        dup = fit.design[4]
        with pytest.raises(CandidateRejected):
            koh_imspe(fit, dup)
        assert KohImspe(fit).values(dup[None, :], check=False)[0] == np.inf

    def test_gradient_proximity_guard(self, rng):
        fit = random_koh_fit(rng, p=1, s=1, n_field=3, n_sim=5)
        near = np.clip(fit.design[4] + 5e-7, 0, 1)
        with pytest.raises(ProximityError):
            koh_imspe_grad(fit, near)

    def test_candidate_outside_cube(self, rng):
        fit = random_koh_fit(rng, p=1, s=1)
        with pytest.raises(ValueError):
            koh_imspe(fit, [1.2, 0.5])

    def test_symmetric_toy_has_flat_x_gradient(self):
        field = FieldData([[0.2], [0.8]], [0.1, 0.1])
        sim = SimData([[0.3], [0.7]], [[0.4], [0.4]], [0.0, 0.0])
        fit = KohFit.from_params(field, sim, [0.6], KernelConfig([0.2, 0.3]),
                                 KernelConfig([0.25], nugget=0.05), 1.0, 0.5)
        g = koh_imspe_grad(fit, [0.5, 0.6])
        assert abs(g[0]) <= 1e-8

    def test_w_term_zero_in_u_at_estimate(self, rng):
        fit = random_koh_fit(rng, p=2, s=2, n_field=4, n_sim=6)
        cand = np.concatenate([[0.3, 0.7], fit.u_hat.u_hat])
        _, _, w_term = KohImspe(fit).grad_terms(cand)
        assert np.max(np.abs(w_term[2:])) <= 1e-12

    def test_reduction_to_single_gp(self, rng):
        X = rng.random((8, 2))
        gfit = GpFit.from_config(GpData(X, rng.normal(size=8)), KernelConfig([0.1, 0.2]))
        fit = KohFit.from_params(FieldData.empty(2), SimData(X, np.zeros((8, 0)), gfit.data.y),
                                 np.zeros(0), gfit.cfg, KernelConfig([0.3, 0.3]), gfit.scale, 0.0)
        for c in rng.random((5, 2)):
            v1, g1 = KohImspe(fit).value_and_grad(c)
            v2, g2 = m_imspe(gfit, c)
            assert v1 == pytest.approx(v2, rel=1e-10)
            np.testing.assert_allclose(g1, g2, rtol=1e-8, atol=1e-14)

    def test_current_value_is_integrated_variance(self, rng):
        fit = random_koh_fit(rng, p=1, s=1, n_field=4, n_sim=5)
        x, w = np.polynomial.legendre.leggauss(300)
        x, w = (x + 1) / 2, w / 2
        _, var = fit.predict_field(x[:, None])
        assert integrated_variance(fit) == pytest.approx(float(w @ var), rel=1e-9)


class TestMImspe:
    def test_mc_integration(self, rng):
        X = rng.random((10, 2))
        gfit = GpFit.from_config(GpData(X, rng.normal(size=10)), KernelConfig([0.1, 0.3]))
        cand = np.array([0.4, 0.6])
        aug = GpFit.from_config(GpData(np.vstack([X, cand]), np.append(gfit.data.y, 0.0)),
                                gfit.cfg)
        draws = rng.random((200_000, 2))
        # evaluate at the pre-augmentation scale: the criterion holds nu fixed
        v = predict(aug, draws)[1] / aug.scale * gfit.scale
        mc, se = v.mean(), v.std(ddof=1) / math.sqrt(len(v))
        val, _ = m_imspe(gfit, cand)
        assert abs(val - mc) <= 3 * se

    def test_gradient_finite_difference(self, rng):
        X = rng.random((10, 3))
        gfit = GpFit.from_config(GpData(X, rng.normal(size=10)), KernelConfig([0.1, 0.2, 0.15]))
        crit = MImspe(gfit)
        h = 1e-6
        for c in rng.uniform(0.05, 0.95, size=(5, 3)):
            g = crit.grad(c)
            fd = np.array([(crit.value(c + e) - crit.value(c - e)) / (2 * h)
                           for e in np.eye(3) * h])
            assert np.max(np.abs(g - fd)) <= 1e-4 * np.max(np.abs(fd))
