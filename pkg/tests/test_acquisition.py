import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kohimspe.acquisition import (
    STRATEGIES,
    DesignStrategy,
    OptimizerSettings,
    acquire_comparator,
    acquire_koh_imspe,
    lhs,
)
from kohimspe.imspe import KohImspe
from kohimspe.koh import KohSettings, SimData, fit_koh
from kohimspe.problems import FieldSpec, generate_field, make_sinusoid

from conftest import random_koh_fit


class TestLhs:
    def test_one_per_quartile(self):
        x = np.sort(lhs(4, 1, seed=0)[:, 0])
        np.testing.assert_array_equal(np.floor(x * 4), [0, 1, 2, 3])

    def test_deterministic(self):
        np.testing.assert_array_equal(lhs(10, 3, seed=5), lhs(10, 3, seed=5))

    def test_occupancy_all_ones(self):
        X = lhs(100, 7, seed=1)
        for col in X.T:
            counts = np.bincount(np.floor(col * 100).astype(int), minlength=100)
            np.testing.assert_array_equal(counts, np.ones(100))

    @settings(max_examples=30)
    @given(st.integers(1, 60), st.integers(1, 5), st.integers(0, 2**31))
    def test_stratified(self, n, d, seed):
        X = lhs(n, d, seed)
        assert X.shape == (n, d)
        for col in X.T:
            assert sorted(np.floor(col * n).astype(int)) == list(range(n))

    @pytest.mark.parametrize("n,d", [(0, 2), (3, 0)])
    def test_bad_sizes(self, n, d):
        with pytest.raises(ValueError):
            lhs(n, d)


@pytest.fixture(scope="module")
def sinusoid_fit():
    prob = make_sinusoid()
    field = generate_field(prob, FieldSpec("grid", 5, 2), seed=11)
    D = lhs(10, 2, seed=11)
    sim = SimData(D[:, :1], D[:, 1:], prob.simulate_rows(D))
    return fit_koh(field, sim, settings=KohSettings(starts=5), seed=11)


class TestKohImspeAcquisition:
    def test_not_worse_than_any_seed(self, sinusoid_fit):
        res = acquire_koh_imspe(sinusoid_fit, seed=0)
        assert res.criterion_value <= np.min(res.seed_values) + 1e-15
        assert res.starts_tried == 5
        assert np.all((res.point > 0) & (res.point < 1))
        assert not res.fallback

    def test_reported_value_is_criterion_at_point(self, sinusoid_fit):
        res = acquire_koh_imspe(sinusoid_fit, seed=1)
        assert res.criterion_value == pytest.approx(
            KohImspe(sinusoid_fit).value(res.point), rel=1e-12)

    def test_grid_oracle_2d(self, rng):
        fit = random_koh_fit(rng, p=1, s=1, n_field=4, n_sim=6)
        crit = KohImspe(fit)
        g = np.linspace(0, 1, 41)
        G = np.array([[a, b] for a in g for b in g])
        grid_min = np.min(crit.values(G, check=False))
        res = acquire_koh_imspe(fit, seed=2)
        assert res.criterion_value <= grid_min + 1e-6

    def test_seeded_reproducible(self, sinusoid_fit):
        a = acquire_koh_imspe(sinusoid_fit, seed=4)
        b = acquire_koh_imspe(sinusoid_fit, seed=4)
        np.testing.assert_array_equal(a.point, b.point)


class TestComparators:
    def test_unknown_strategy(self):
        with pytest.raises(ValueError):
            DesignStrategy("maxpro")

    def test_u_at_estimate(self, sinusoid_fit):
        res = acquire_comparator(DesignStrategy("m-imspe-u-at-uhat"), sinusoid_fit, seed=0)
        assert res.point[1] == sinusoid_fit.u_hat.u_hat[0]

    def test_x_in_field(self, sinusoid_fit):
        res = acquire_comparator(DesignStrategy("m-imspe-x-in-field"), sinusoid_fit, seed=0)
        assert res.point[0] in set(sinusoid_fit.field.Xf[:, 0])

    def test_uniform_reproducible(self):
        a = acquire_comparator(DesignStrategy("uniform"), seed=3, dim=4)
        b = acquire_comparator(DesignStrategy("uniform"), seed=3, dim=4)
        np.testing.assert_array_equal(a.point, b.point)

    def test_lhs_uses_pool_row(self):
        row = np.array([0.2, 0.7])
        res = acquire_comparator(DesignStrategy("lhs"), pool_row=row)
        np.testing.assert_array_equal(res.point, row)
        with pytest.raises(ValueError):
            acquire_comparator(DesignStrategy("lhs"))

    def test_m_imspe_within_cube(self, sinusoid_fit):
        res = acquire_comparator(DesignStrategy("m-imspe"), sinusoid_fit, seed=0)
        assert np.all((res.point >= 0) & (res.point <= 1))
        assert res.criterion_value <= np.min(res.seed_values) + 1e-15

    @pytest.mark.parametrize("kind", STRATEGIES)
    def test_every_strategy_returns_a_point(self, kind, sinusoid_fit):
        res = acquire_comparator(DesignStrategy(kind), sinusoid_fit, seed=0,
                                 pool_row=np.array([0.5, 0.5]))
        assert res.point.shape == (2,)
        assert np.all((res.point >= 0) & (res.point <= 1))


def test_fallback_flagged_when_every_start_is_guarded():
    # one candidate, sitting on top of a design row: the only start fails
    rng = np.random.default_rng(0)
    fit = random_koh_fit(rng, p=1, s=1, n_field=3, n_sim=5)
    opts = OptimizerSettings(n_candidates=1, n_starts=1)
    near = fit.design[-1] + 1e-7
    from kohimspe.acquisition import _multistart

    crit = KohImspe(fit)
    # force the finite-valued candidate through the guard
    z, v, tried, fb, _ = _multistart(lambda C: np.zeros(len(C)), crit.value_and_grad, 2, opts,
                                     rng, candidates=near[None, :])
    assert fb and tried == 1
    np.testing.assert_allclose(z, np.clip(near, 1e-9, 1 - 1e-9))
