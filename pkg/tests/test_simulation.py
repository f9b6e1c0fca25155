import numpy as np
import pytest
from scipy.stats import norm

from martest.errors import DomainError, HarnessError
from martest.kernels import KernelConfig
from martest.simulation import (
    FShape,
    Scenario,
    calibrate_c0,
    generate_dataset,
    missing_rate,
    rejection_rate,
    rng_stream,
    run_grid,
)

FAST = KernelConfig(z_mode="degenerate")


class TestDesign:
    def test_moments(self):
        data = generate_dataset(Scenario(n=10**6), seed=3)
        y, u, z = data.oracle_y, data.u[:, 0], data.z[:, 0]
        for arr, mean, var in ((z, 0.0, 1.0), (u, 1.0, 2.0), (y, 2.0, 2.0)):
            assert abs(arr.mean() - mean) < 4 * np.sqrt(var / arr.size)

    def test_masking(self):
        data = generate_dataset(Scenario(n=500), seed=1)
        np.testing.assert_array_equal(np.isnan(data.y), data.r == 0)
        np.testing.assert_array_equal(data.y[data.observed], data.oracle_y[data.observed])

    def test_reproducible_streams(self):
        a = generate_dataset(Scenario(n=100), seed=9, rep=4)
        b = generate_dataset(Scenario(n=100), seed=9, rep=4)
        c = generate_dataset(Scenario(n=100), seed=9, rep=5)
        np.testing.assert_array_equal(a.oracle_y, b.oracle_y)
        assert not np.array_equal(a.oracle_y, c.oracle_y)
        assert rng_stream(1, 2).random() == rng_stream(1, 2).random()

    @pytest.mark.parametrize("text,shape", [("y", FShape.LINEAR), ("quadratic", FShape.QUADRATIC), ("2.5I(y>1)", FShape.THRESHOLD)])
    def test_shape_parse(self, text, shape):
        assert FShape.parse(text) is shape

    def test_shape_values(self):
        y = np.array([-1.0, 1.0, 2.0])
        np.testing.assert_allclose(FShape.QUADRATIC(y), [0.4, 0.4, 1.6])
        np.testing.assert_array_equal(FShape.THRESHOLD(y), [0, 0, 2.5])

    def test_bad_scenario(self):
        with pytest.raises(DomainError):
            Scenario(n=10)
        with pytest.raises(DomainError):
            FShape.parse("cubic")


class TestCalibration:
    def test_closed_form_at_mar(self):
        assert calibrate_c0(Scenario()) == pytest.approx(norm.ppf(0.8), abs=1e-12)

    @pytest.mark.parametrize("sc", [Scenario(c1=0.3), Scenario(c2=0.5, f_shape="0.4y^2", c1=0.25), Scenario(b_z=0.5, c1=0.5)])
    def test_resimulated_rate(self, sc):
        c0 = calibrate_c0(sc)
        full = generate_dataset(sc.replace(n=200_000, c0=c0), seed=77)
        assert abs(missing_rate(sc, c0, full.oracle_y, full.u[:, 0]) - 0.2) < 0.005
        assert abs(1 - full.n_complete / full.n - 0.2) < 0.005

    def test_monotone_in_target(self):
        sc = Scenario(c1=0.3)
        vals = [calibrate_c0(sc.replace(target_missing=t)) for t in (0.4, 0.3, 0.2, 0.1)]
        assert all(a < b for a, b in zip(vals, vals[1:]))


class TestHarness:
    @pytest.fixture(scope="class")
    @classmethod
    def small(cls):
        return rejection_rate(Scenario(n=150), reps=50, config=FAST, seed=4)

    def test_rate_and_se(self, small):
        assert small.failures == 0
        assert 0 <= small.rate <= 1
        assert small.se == pytest.approx(np.sqrt(small.rate * (1 - small.rate) / 50))
        assert small.rate == np.mean(small.p_values < 0.05)

    def test_parallel_matches_serial(self, small):
        par = rejection_rate(Scenario(n=150), reps=50, config=FAST, seed=4, n_jobs=2)
        np.testing.assert_array_equal(par.t_values, small.t_values)

    def test_too_few_reps(self):
        with pytest.raises(DomainError):
            rejection_rate(Scenario(n=150), reps=10)

    def test_failures_counted(self, monkeypatch):
        import martest.hausman as hausman
        from martest.errors import ConvergenceError

        real = hausman.run_test
        calls = {"k": 0}

        def flaky(*args, **kwargs):
            calls["k"] += 1
            if calls["k"] % 20 == 0:
                raise ConvergenceError("forced")
            return real(*args, **kwargs)

        monkeypatch.setattr(hausman, "run_test", flaky)
        res = rejection_rate(Scenario(n=100), reps=60, config=FAST, seed=2)
        assert res.failures == 3
        assert res.rate == np.mean(res.p_values < 0.05)
        assert res.p_values.size == 57

        calls["k"] = 0
        monkeypatch.setattr(hausman, "run_test", lambda *a, **k: (_ for _ in ()).throw(ConvergenceError("always")))
        with pytest.raises(HarnessError):
            rejection_rate(Scenario(n=100), reps=50, config=FAST, seed=2)

    def test_grid(self):
        assert run_grid([], reps=50) == []
        cells = [Scenario(n=100), Scenario(n=100, c2=0.5)]
        a = run_grid(cells, reps=50, seed=8, config=FAST)
        b = run_grid(cells, reps=50, seed=8, config=FAST)
        assert [r.rate for r in a] == [r.rate for r in b]
        assert [r.c2 for r in a] == [0.0, 0.5]

    def test_grid_records_cell_errors(self):
        rows = run_grid([Scenario(n=100, target_missing=0.94, c1=-30.0)], reps=50, seed=1, config=FAST)
        assert rows[0].error.startswith("harness")
        assert np.isnan(rows[0].rate)
