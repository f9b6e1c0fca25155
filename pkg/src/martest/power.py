"""Local power of the discrepancy test.

Under missingness ``P(R = 1 | y, u) = pi(y, u; gamma)`` with
``gamma = gamma0 / sqrt(n)`` and ``pi(y, u; 0) = pi0(u)``, the statistic is
asymptotically noncentral chi-squared with noncentrality
``gamma0' eta' W^-1 eta gamma0``, where ``eta = Cov(phi - psi, zeta)`` and

    zeta = r grad pi / pi0 - (1 - r) grad pi / (1 - pi0)

is the score of the missingness model in ``gamma`` at zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Protocol

import numpy as np
from scipy.special import ndtr

from .errors import DomainError, ShapeError
from .glm import GlmFamily
from .hausman import discrepancy_covariance, power_at_level, run_test
from .kernels import KernelConfig
from .simulation import FShape, Scenario, generate_dataset, resolve_c0

_NORM_CONST = 1.0 / np.sqrt(2.0 * np.pi)


class PropensityModel(Protocol):
    """Parametric response model that is y-free at ``gamma = 0``."""

    q: int

    def pi0(self, u: np.ndarray) -> np.ndarray: ...

    def grad_gamma(self, y: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Gradient of the response probability in gamma at zero, shape (n, q)."""
        ...


@dataclass(frozen=True)
class ProbitPropensity:
    """``P(R = 1 | y, u) = Phi(c0 + gamma f(y) + c2 u)`` with scalar gamma."""

    c0: float
    c2: float = 0.0
    f_shape: FShape = FShape.LINEAR
    q: int = field(default=1, init=False)

    def pi0(self, u):
        return ndtr(self.c0 + self.c2 * np.asarray(u, dtype=float))

    def grad_gamma(self, y, u):
        lin = self.c0 + self.c2 * np.asarray(u, dtype=float)
        return (_NORM_CONST * np.exp(-0.5 * lin * lin) * self.f_shape(y))[:, None]


@dataclass
class LocalPowerEstimate:
    eta_hat: np.ndarray
    noncentrality: float
    power_at_level: float
    W_hat: Optional[np.ndarray] = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "eta_hat": self.eta_hat.tolist(),
            "noncentrality": self.noncentrality,
            "power_at_level": self.power_at_level,
        }


def score_rows(model: PropensityModel, r, y, u) -> np.ndarray:
    """Rows ``zeta_i`` of the missingness score at ``gamma = 0``."""
    r = np.asarray(r, dtype=float)[:, None]
    pi = model.pi0(u)[:, None]
    g = model.grad_gamma(y, u)
    return r * g / pi - (1.0 - r) * g / (1.0 - pi)


def noncentrality(eta, W, gamma0) -> float:
    """``gamma0' eta' W^-1 eta gamma0`` via a symmetric solve."""
    v = np.asarray(eta, dtype=float) @ np.asarray(gamma0, dtype=float)
    W = 0.5 * (W + W.T)
    return float(max(v @ np.linalg.solve(W, v), 0.0))


def local_power(
    scenario: Scenario,
    prop_model: Optional[PropensityModel] = None,
    gamma0=None,
    level: float = 0.05,
    n_cal: int = 4000,
    seed: int = 0,
    family: GlmFamily = GlmFamily(),
    config: KernelConfig = KernelConfig(),
) -> LocalPowerEstimate:
    """Predicted rejection rate under the drifting alternative.

    One null dataset of size ``n_cal`` is drawn from ``scenario`` with
    ``c1 = 0``; the influence rows of both estimators and the missingness
    score rows are computed on it. ``gamma0`` defaults to
    ``sqrt(scenario.n) * scenario.c1``, which matches ``c1`` at sample size
    ``scenario.n``, and ``prop_model`` to the probit design of the scenario.
    """
    if not 0 < level < 1:
        raise DomainError("level must lie in (0, 1)")
    null = resolve_c0(scenario.replace(c1=0.0, c0=None, n=n_cal), seed)
    if prop_model is None:
        prop_model = ProbitPropensity(null.c0, null.c2, null.f_shape)
    if gamma0 is None:
        gamma0 = [np.sqrt(scenario.n) * scenario.c1]
    gamma0 = np.atleast_1d(np.asarray(gamma0, dtype=float))
    if gamma0.shape != (prop_model.q,):
        raise ShapeError(f"gamma0 must have length {prop_model.q}, got {gamma0.size}")

    data = generate_dataset(null, seed, rep=0)
    res = run_test(data, family, config)
    diff = res.fit_pseudo.influence - res.fit_ipw.influence
    zeta = score_rows(prop_model, data.r, data.oracle_y, data.u[:, 0] if data.m_u == 1 else data.u)
    eta = (diff - diff.mean(axis=0)).T @ (zeta - zeta.mean(axis=0)) / (data.n - 1)
    W = discrepancy_covariance(res.fit_ipw.influence, res.fit_pseudo.influence)
    nc = noncentrality(eta, W, gamma0)
    return LocalPowerEstimate(eta, nc, power_at_level(nc, res.df, level), W)
