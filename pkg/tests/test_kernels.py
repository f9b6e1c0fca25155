import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate
from scipy.stats import norm

from martest.errors import DegenerateDataError, DomainError, NumericError
from martest.kernels import (
    KernelConfig,
    ZMode,
    kde_z_integral,
    nw_propensity,
    product_kde,
    silverman_bandwidth,
    undersmoothed_bandwidth,
    undersmoothing_rate,
)


def _unit_sd(n, d, rng):
    x = rng.standard_normal((n, d))
    return (x - x.mean(0)) / x.std(0, ddof=1)


class TestSilverman:
    def test_one_dimension(self, rng):
        h = silverman_bandwidth(_unit_sd(100, 1, rng))
        assert h[0] == pytest.approx((4 / 3) ** 0.2 * 100 ** -0.2, rel=1e-12)
        assert h[0] == pytest.approx(0.4216, abs=1e-4)

    def test_two_dimensions(self, rng):
        h = silverman_bandwidth(_unit_sd(1000, 2, rng))
        np.testing.assert_allclose(h, 1000 ** (-1 / 6), rtol=1e-12)
        assert h[0] == pytest.approx(0.3162, abs=1e-4)

    def test_scale_equivariance(self, rng):
        x = rng.standard_normal((40, 3))
        np.testing.assert_allclose(silverman_bandwidth(2 * x), 2 * silverman_bandwidth(x), rtol=1e-15)

    def test_zero_variance(self):
        with pytest.raises(DegenerateDataError):
            silverman_bandwidth(np.c_[np.arange(5.0), np.ones(5)])

    def test_undersmoothed_rate(self, rng):
        x = _unit_sd(1000, 2, rng)
        np.testing.assert_allclose(undersmoothed_bandwidth(x, 1), 1000 ** -0.4, rtol=1e-12)
        assert undersmoothing_rate(1) == pytest.approx(0.4)
        assert 0.25 < undersmoothing_rate(3) < 1 / 3


class TestPropensity:
    def test_all_observed(self, rng):
        prop = nw_propensity(rng.normal(size=20), np.ones(20), 0.5)
        np.testing.assert_allclose(prop.raw(np.linspace(-2, 2, 7)), 1.0)

    def test_tied_points(self):
        prop = nw_propensity([0.3, 0.3], [1, 0], 1.0)
        assert prop.raw([0.3])[0] == pytest.approx(0.5)

    def test_three_points_by_hand(self):
        w = norm.pdf(np.array([-1.0, 0.0, 1.0]))
        expected = (w[0] + w[2]) / w.sum()
        prop = nw_propensity([0.0, 1.0, 2.0], [1, 0, 1], 1.0)
        assert prop.raw([1.0])[0] == pytest.approx(expected, rel=1e-14)

    def test_clipping(self):
        prop = nw_propensity([0.0, 1.0], [1, 1], 1.0, clip=0.01)
        assert prop([0.5])[0] == pytest.approx(0.99)

    def test_underflow(self):
        prop = nw_propensity([0.0, 1.0], [1, 0], 0.01)
        with pytest.raises(NumericError):
            prop.raw([1e3])

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-3, 3), min_size=2, max_size=15), st.floats(0.05, 2.0), st.floats(-4, 4))
    def test_in_unit_interval(self, u, b, q):
        r = (np.arange(len(u)) % 2).astype(float)
        try:
            val = nw_propensity(u, r, b).raw([q])[0]
        except NumericError:
            # every weight underflows: the query is reported, not guessed
            assert np.min(np.abs(q - np.asarray(u))) / b > 37
            return
        assert 0.0 <= val <= 1.0


class TestProductKde:
    def test_single_bivariate_center(self):
        kde = product_kde([[0.3, -0.2]], [1.0, 1.0])
        assert kde([0.3, -0.2]) == pytest.approx(1 / (2 * np.pi), rel=1e-14)

    def test_two_centers(self):
        kde = product_kde([[0.0], [2.0]], 1.0)
        assert kde([1.0]) == pytest.approx(norm.pdf(1.0), rel=1e-14)
        assert kde([1.0]) == pytest.approx(0.241971, abs=1e-6)

    def test_integrates_to_one(self):
        rng = np.random.default_rng(3)
        kde = product_kde(rng.normal(size=(30, 2)), [0.4, 0.7])
        # importance sampling from a wide normal
        draws = rng.normal(scale=3.0, size=(10**6, 2))
        dens = norm.pdf(draws, scale=3.0).prod(axis=1)
        assert np.mean(kde(draws) / dens) == pytest.approx(1.0, abs=0.01)

    def test_nonnegative(self, rng):
        kde = product_kde(rng.normal(size=(10, 2)), [0.1, 0.1])
        assert np.all(kde(rng.normal(scale=20, size=(100, 2))) >= 0)

    def test_bad_bandwidth(self):
        with pytest.raises(DomainError):
            product_kde([[0.0, 1.0]], [1.0, -1.0])


class TestZIntegral:
    @pytest.mark.parametrize("mode", list(ZMode))
    def test_constant_gives_u_marginal(self, rng, mode):
        x = rng.normal(size=(25, 3))
        kde = product_kde(x, [0.4, 0.5, 0.6])
        u = np.array([0.2])
        cfg = KernelConfig(z_mode=mode)
        got = kde_z_integral(kde, u, lambda z: np.ones(len(z)), cfg)[0]
        expected = np.mean(norm.pdf(u[0], x[:, 0], 0.4))
        assert got == pytest.approx(expected, rel=1e-10)

    def test_gaussian_mean(self):
        kde = product_kde([[0.5, 1.7]], [0.3, 0.8])
        got = kde_z_integral(kde, [0.5], lambda z: z[:, 0], KernelConfig())[0]
        assert got == pytest.approx(1.7 * norm.pdf(0, scale=0.3), abs=1e-8)

    def test_matches_adaptive_quadrature(self):
        rng = np.random.default_rng(11)
        x = rng.normal(size=(3, 2))
        h = np.array([0.6, 0.45])
        kde = product_kde(x, h)
        u = 0.1
        got = kde_z_integral(kde, [u], lambda z: z[:, 0] ** 2, KernelConfig())[0]
        fhat = lambda z: np.mean(norm.pdf(u, x[:, 0], h[0]) * norm.pdf(z, x[:, 1], h[1]))
        oracle, _ = integrate.quad(lambda z: z * z * fhat(z), -np.inf, np.inf, epsabs=0, epsrel=1e-12)
        assert got == pytest.approx(oracle, rel=1e-6)

    def test_modes_agree_for_narrow_z_kernel(self, rng):
        x = rng.normal(size=(15, 2))
        kde = product_kde(x, [0.5, 0.005])
        g = lambda z: np.sin(z[:, 0]) + z[:, 0] ** 2
        a = kde_z_integral(kde, [0.3], g, KernelConfig(z_mode="mixture"))[0]
        b = kde_z_integral(kde, [0.3], g, KernelConfig(z_mode="degenerate"))[0]
        assert abs(a - b) < 1e-3 * abs(b)


class TestKernelConfig:
    @pytest.mark.parametrize(
        "kwargs",
        [
            {"propensity_bandwidth": 0.0},
            {"kde_bandwidth": (1.0, -1.0)},
            {"quadrature_nodes": 1},
            {"clip": 0.6},
        ],
    )
    def test_rejects(self, kwargs):
        with pytest.raises(DomainError):
            KernelConfig(**kwargs)
