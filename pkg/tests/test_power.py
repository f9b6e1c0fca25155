import numpy as np
import pytest
from scipy.stats import norm

from martest.errors import ShapeError
from martest.kernels import KernelConfig
from martest.power import ProbitPropensity, local_power, noncentrality, score_rows
from martest.simulation import Scenario

FAST = KernelConfig(z_mode="degenerate")


class TestProbit:
    def test_gradient_finite_difference(self, rng):
        model = ProbitPropensity(c0=0.7, c2=0.4)
        y, u = rng.normal(size=(2, 10))
        g = model.grad_gamma(y, u)[:, 0]
        fd = (norm.cdf(0.7 + 1e-6 * y + 0.4 * u) - norm.cdf(0.7 - 1e-6 * y + 0.4 * u)) / 2e-6
        np.testing.assert_allclose(g, fd, rtol=1e-7)

    def test_score_rows_mean_zero(self):
        rng = np.random.default_rng(0)
        model = ProbitPropensity(c0=0.8416, c2=0.5)
        u = rng.normal(1, np.sqrt(2), 200_000)
        y = 1 + u + rng.normal(size=u.size)
        r = rng.random(u.size) < model.pi0(u)
        z = score_rows(model, r, y, u)[:, 0]
        assert abs(z.mean()) < 4 * z.std() / np.sqrt(z.size)


class TestNoncentrality:
    def test_quadratic_scaling(self, rng):
        eta = rng.normal(size=(3, 1))
        W = np.diag([1.0, 2.0, 0.5])
        assert noncentrality(eta, W, [2.0]) == pytest.approx(4 * noncentrality(eta, W, [1.0]), rel=1e-14)
        assert noncentrality(eta, W, [0.0]) == 0.0


class TestLocalPower:
    @pytest.fixture(scope="class")
    @classmethod
    def estimates(cls):
        sc = Scenario(n=1000)
        return [local_power(sc, gamma0=[g], n_cal=1000, seed=3, config=FAST) for g in (0.0, 3.0, 6.0)]

    def test_null_gives_level(self, estimates):
        assert estimates[0].noncentrality == 0.0
        assert estimates[0].power_at_level == 0.05

    def test_quadratic_in_gamma(self, estimates):
        np.testing.assert_array_equal(estimates[1].eta_hat, estimates[2].eta_hat)
        assert estimates[2].noncentrality == pytest.approx(4 * estimates[1].noncentrality, rel=1e-12)
        assert estimates[0].power_at_level < estimates[1].power_at_level < estimates[2].power_at_level

    def test_wrong_length(self):
        with pytest.raises(ShapeError):
            local_power(Scenario(n=1000), gamma0=[1.0, 2.0], n_cal=200, config=FAST)
