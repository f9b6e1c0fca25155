import numpy as np
import pytest

from martest.data import Dataset
from martest.glm import GlmFamily
from martest.simulation import Scenario, generate_dataset


@pytest.fixture(scope="session")
def null_data():
    return generate_dataset(Scenario(n=300), seed=5)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_dataset(rng, n, family: GlmFamily, beta=(0.2, 0.5, 0.8), missing=0.25) -> Dataset:
    u = rng.standard_normal(n)
    z = 0.5 * u + rng.standard_normal(n)
    eta = beta[0] + beta[1] * u + beta[2] * z
    kind = family.kind.value
    if kind == "gaussian":
        y = eta + np.sqrt(family.dispersion) * rng.standard_normal(n)
    elif kind == "bernoulli":
        y = (rng.random(n) < 1 / (1 + np.exp(-eta))).astype(float)
    else:
        y = rng.poisson(np.exp(0.5 * eta)).astype(float)
    r = rng.random(n) >= missing
    r[:4] = True
    return Dataset(np.where(r, y, np.nan), r.astype(int), u, z)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "REPORT", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
