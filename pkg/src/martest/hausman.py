"""Discrepancy test of missing at random.

Both estimators are consistent when missingness depends on ``u`` only;
only the pseudolikelihood estimator stays consistent when it also depends
on ``y``. With influence rows ``psi_i`` (IPW) and ``phi_i``
(pseudolikelihood),

    W = n^-1 sum_i (phi_i - psi_i)(phi_i - psi_i)',
    T = n (beta_pl - beta_ipw)' W^-1 (beta_pl - beta_ipw),

and T is referred to a chi-squared law with m + 1 degrees of freedom.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import gammainc, gammaincc, gammainccinv, gammaln

from .data import Dataset
from .errors import DegenerateCovarianceError, DomainError
from .glm import GlmFamily
from .ipw import EstimatorFit, fit_propensity, solve_ipw
from .kernels import KernelConfig
from .pseudolik import build_context, solve_pseudolik

SCHEMA_VERSION = 1
_EIG_CUTOFF = 1e-10


def discrepancy_covariance(psi, phi) -> np.ndarray:
    psi = np.asarray(psi, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if psi.shape != phi.shape or psi.ndim != 2:
        raise DomainError("influence matrices must have the same (n, m+1) shape")
    d = phi - psi
    return d.T @ d / d.shape[0]


def chisq_sf(t: float, df: int) -> float:
    """Upper tail P(X > t) for X ~ chi-squared(df)."""
    if not t >= 0:
        raise DomainError(f"chi-squared statistic must be nonnegative, got {t}")
    if df <= 0:
        raise DomainError("degrees of freedom must be positive")
    return float(gammaincc(0.5 * df, 0.5 * t))


def chisq_isf(level: float, df: int) -> float:
    """Critical value c with P(X > c) = level."""
    if not 0 < level < 1:
        raise DomainError("level must lie in (0, 1)")
    return float(2.0 * gammainccinv(0.5 * df, level))


def ncx2_cdf(x: float, df: int, nc: float, rtol: float = 1e-12) -> float:
    """Noncentral chi-squared CDF as a Poisson(nc/2) mixture of central CDFs.

    Terms are summed outward from the Poisson mode until the remaining
    Poisson mass on each side falls below ``rtol``.
    """
    if nc < 0:
        raise DomainError("noncentrality must be nonnegative")
    if x <= 0:
        return 0.0
    if nc == 0:
        return float(gammainc(0.5 * df, 0.5 * x))
    lam = 0.5 * nc
    mode = int(np.floor(lam))

    def weight(j):
        return np.exp(-lam + j * np.log(lam) - gammaln(j + 1.0))

    mass = weight(mode)
    total = mass * gammainc(0.5 * df + mode, 0.5 * x)
    j = mode + 1
    while True:
        w = weight(j)
        total += w * gammainc(0.5 * df + j, 0.5 * x)
        mass += w
        if w < rtol * mass and j > lam:
            break
        j += 1
    j = mode - 1
    while j >= 0:
        w = weight(j)
        total += w * gammainc(0.5 * df + j, 0.5 * x)
        mass += w
        if w < rtol * mass:
            break
        j -= 1
    return float(min(total, 1.0))


def power_at_level(nc: float, df: int, level: float) -> float:
    """P(T > central critical value) when T ~ chi-squared(df, nc)."""
    if nc == 0:
        return float(level)
    crit = chisq_isf(level, df)
    return 1.0 - ncx2_cdf(crit, df, nc)


@dataclass
class TestResult:
    __test__ = False

    beta_ipw: np.ndarray
    beta_pseudo: np.ndarray
    W_hat: np.ndarray
    T: float
    df: int
    p_value: float
    relative_bias: np.ndarray  # NaN where |beta_ipw| < 1e-8
    diagnostics: dict = field(default_factory=dict)
    fit_ipw: Optional[EstimatorFit] = field(default=None, repr=False)
    fit_pseudo: Optional[EstimatorFit] = field(default=None, repr=False)

    def to_dict(self) -> dict:
        rb = [None if not np.isfinite(v) else float(v) for v in self.relative_bias]
        return {
            "schema_version": SCHEMA_VERSION,
            "beta_ipw": self.beta_ipw.tolist(),
            "beta_pseudo": self.beta_pseudo.tolist(),
            "T": float(self.T),
            "df": int(self.df),
            "p_value": float(self.p_value),
            "W_hat": self.W_hat.tolist(),
            "relative_bias": rb,
            "diagnostics": self.diagnostics,
        }


def relative_bias(beta_pseudo, beta_ipw) -> np.ndarray:
    beta_pseudo = np.asarray(beta_pseudo, dtype=float)
    beta_ipw = np.asarray(beta_ipw, dtype=float)
    out = np.full(beta_ipw.shape, np.nan)
    ok = np.abs(beta_ipw) >= 1e-8
    out[ok] = (beta_pseudo[ok] - beta_ipw[ok]) / beta_ipw[ok]
    return out


def wald_statistic(diff, W: np.ndarray, n: int) -> tuple[float, float]:
    """``n * diff' W^-1 diff`` via eigendecomposition, plus the condition number.

    Directions with eigenvalue below ``1e-10`` times the largest raise
    :class:`DegenerateCovarianceError` instead of being projected out.
    """
    diff = np.asarray(diff, dtype=float)
    eig, vec = np.linalg.eigh(0.5 * (W + W.T))
    top = eig[-1]
    if not top > 0 or eig[0] < _EIG_CUTOFF * top:
        raise DegenerateCovarianceError(
            f"discrepancy covariance is degenerate (eigenvalues {eig.tolist()})"
        )
    proj = vec.T @ diff
    return float(n * np.sum(proj * proj / eig)), float(top / eig[0])


def statistic_from_fits(fit_ipw: EstimatorFit, fit_pseudo: EstimatorFit) -> tuple[float, np.ndarray, float]:
    """``(T, W_hat, cond(W_hat))`` from two fits on the same rows."""
    W = discrepancy_covariance(fit_ipw.influence, fit_pseudo.influence)
    n = fit_ipw.influence.shape[0]
    T, cond = wald_statistic(fit_pseudo.beta - fit_ipw.beta, W, n)
    return T, W, cond


def _canonical_order(data: Dataset) -> np.ndarray:
    y = np.where(data.observed, data.y, np.inf)
    keys = [y, data.r] + [data.z[:, j] for j in range(data.m_z)][::-1] + [data.u[:, j] for j in range(data.m_u)][::-1]
    return np.lexsort(keys)


def run_test(
    data: Dataset,
    family: GlmFamily,
    config: KernelConfig = KernelConfig(),
    weighted_information: bool = True,
) -> TestResult:
    """Fit both estimators and compute the test.

    Rows are put in a canonical order first, so the result does not depend
    on the order of the input rows.
    """
    order = _canonical_order(data)
    inverse = np.empty_like(order)
    inverse[order] = np.arange(order.size)
    sdata = data.take(order)

    prop = fit_propensity(sdata, config)
    fit_ipw = solve_ipw(sdata, family, config, prop=prop, weighted_information=weighted_information)
    ctx = build_context(sdata, family, config)
    fit_pl = solve_pseudolik(sdata, family, config, prop=prop, ctx=ctx)
    T, W, cond = statistic_from_fits(fit_ipw, fit_pl)
    df = data.m + 1

    for fit in (fit_ipw, fit_pl):
        fit.influence = fit.influence[inverse]
        if fit.delta is not None:
            fit.delta = fit.delta[inverse]
    diagnostics = {
        "n": data.n,
        "n_complete": data.n_complete,
        "condition_number_W": cond,
        "propensity_bandwidth": prop.bandwidth,
        "kde_bandwidth": ctx.kde.bandwidth.tolist(),
        "z_mode": config.z_mode.value,
        "ipw_iterations": fit_ipw.iterations,
        "pseudo_iterations": fit_pl.iterations,
        "ipw_score_norm": fit_ipw.score_norm,
        "pseudo_score_norm": fit_pl.score_norm,
    }
    return TestResult(
        beta_ipw=fit_ipw.beta,
        beta_pseudo=fit_pl.beta,
        W_hat=W,
        T=T,
        df=df,
        p_value=chisq_sf(T, df),
        relative_bias=relative_bias(fit_pl.beta, fit_ipw.beta),
        diagnostics=diagnostics,
        fit_ipw=fit_ipw,
        fit_pseudo=fit_pl,
    )
