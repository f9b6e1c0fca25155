"""Inverse-probability-weighted GLM estimator.

Solves ``n^-1 sum_i r_i / pihat(u_i) * S(y_i, x_i; beta) = 0`` where
``pihat`` is a Nadaraya-Watson estimate of P(R = 1 | U). The estimator is
consistent only when missingness depends on ``u`` alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import Dataset
from .errors import ConvergenceError, IdentifiabilityError, NumericError
from .glm import GlmFamily, design, fit_glm
from .kernels import KernelConfig, PropensityEstimate, nw_propensity, silverman_bandwidth


@dataclass
class EstimatorFit:
    """A fitted coefficient vector with its per-observation influence rows.

    ``influence[i]`` is the estimated contribution of observation ``i`` to
    ``sqrt(n) * (beta - beta0)``; ``influence.T @ influence / n**2``
    estimates the covariance of ``beta``.
    """

    beta: np.ndarray
    influence: np.ndarray = field(repr=False)
    converged: bool
    iterations: int
    score_norm: float
    information: Optional[np.ndarray] = field(default=None, repr=False)
    delta: Optional[np.ndarray] = field(default=None, repr=False)

    def covariance(self) -> np.ndarray:
        n = self.influence.shape[0]
        return self.influence.T @ self.influence / n**2

    def std_errors(self) -> np.ndarray:
        return np.sqrt(np.diag(self.covariance()))


def fit_propensity(data: Dataset, config: KernelConfig) -> PropensityEstimate:
    b = config.propensity_bandwidth
    if b == "auto":
        # one bandwidth for all u coordinates: the geometric mean of the per-coordinate rule
        b = float(np.exp(np.mean(np.log(silverman_bandwidth(data.u)))))
    return nw_propensity(data.u, data.r, float(b), config.clip)


def ipw_weights(data: Dataset, prop: PropensityEstimate) -> np.ndarray:
    """``r_i / pihat(u_i)``, zero for rows with a missing outcome."""
    w = np.zeros(data.n)
    obs = data.observed
    pi = prop(data.u[obs])
    if np.any(pi <= 0):
        raise NumericError("propensity is zero after clipping")
    w[obs] = 1.0 / pi
    return w


def _pieces(beta, data: Dataset, family: GlmFamily, w: np.ndarray):
    obs = data.observed
    d = design(data.x[obs])
    eta = d @ beta
    resid = (data.y[obs] - family.mean(eta)) / family.dispersion
    rows = (w[obs] * resid)[:, None] * d
    curv = w[obs] * family.mean_deriv(eta) / family.dispersion
    info = (d * curv[:, None]).T @ d / data.n
    return rows, info


def ipw_score(beta, data: Dataset, prop: PropensityEstimate, family: GlmFamily = None) -> np.ndarray:
    family = family or GlmFamily()
    rows, _ = _pieces(np.asarray(beta, dtype=float), data, family, ipw_weights(data, prop))
    return rows.sum(axis=0) / data.n


def solve_ipw(
    data: Dataset,
    family: GlmFamily,
    config: KernelConfig = KernelConfig(),
    prop: Optional[PropensityEstimate] = None,
    weighted_information: bool = True,
    tol: float = 1e-9,
    max_iter: int = 100,
) -> EstimatorFit:
    """Newton solve of the weighted score equation plus influence rows.

    With ``weighted_information=False`` the influence prefactor is the plain
    average of ``-dS/dbeta`` over all ``n`` rows, which is available for
    every row because canonical-link Jacobians do not involve ``y``.
    """
    data.check_identifiable()
    prop = prop if prop is not None else fit_propensity(data, config)
    w = ipw_weights(data, prop)
    obs = data.observed
    beta = fit_glm(data.x, np.where(obs, data.y, 0.0), family, weights=data.r).beta

    rows, info = _pieces(beta, data, family, w)
    g = rows.sum(axis=0) / data.n
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        if np.linalg.cond(info) > 1e12:
            raise IdentifiabilityError("weighted score Jacobian is singular")
        done = np.max(np.abs(g)) < tol
        beta = beta + np.linalg.solve(info, g)
        rows, info = _pieces(beta, data, family, w)
        g = rows.sum(axis=0) / data.n
        if not (np.all(np.isfinite(beta)) and np.all(np.isfinite(g))):
            raise NumericError("IPW Newton iteration diverged")
        if done:
            # one extra Newton step past the tolerance leaves the residual at rounding level
            converged = True
            break
    if not converged:
        raise ConvergenceError(f"IPW solver did not converge in {max_iter} iterations", beta)

    if not weighted_information:
        d = design(data.x)
        curv = family.mean_deriv(d @ beta) / family.dispersion
        info = (d * curv[:, None]).T @ d / data.n
    influence = np.zeros((data.n, beta.size))
    influence[obs] = np.linalg.solve(info, rows.T).T
    return EstimatorFit(beta, influence, converged, it, float(np.max(np.abs(g))), info)
