"""Kernel pseudolikelihood estimator, valid when missingness depends on (y, u).

Given an instrument ``z`` independent of ``r`` conditional on ``(y, u)``,
the law of ``z`` given ``(y, u)`` is the same for complete and incomplete
rows, and equals

    p(y | u, z; beta) f(u, z) / int p(y | u, z'; beta) f(u, z') dz'.

Maximizing the complete-case log of this ratio, with ``f`` replaced by a
product-kernel density estimate, gives the estimator. Its influence rows add
a correction for the estimation error in the density estimate.

Denominator integrals are discretized as a weighted sum over the points of
a :class:`~martest.kernels.ZMixture`, so every z-integral in this module is
``sum_p exp(logw[i, p]) * g(z_p)``. Everything is computed on the log scale
and ratios of integrals become softmax-weighted averages.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import Dataset
from .errors import ConvergenceError, IdentifiabilityError, NumericError
from .glm import FamilyKind, GlmFamily, fit_glm, y_rule
from .ipw import EstimatorFit, fit_propensity
from .kernels import (
    KdeEstimate,
    KernelConfig,
    PropensityEstimate,
    ZMixture,
    product_kde,
    undersmoothed_bandwidth,
    z_mixture,
)

# target number of matrix entries per block of rows
_CHUNK_ENTRIES = 1 << 21
# log-weight gap beyond which a kernel component is ignored
_PRUNE = 60.0


@dataclass
class PseudoLikContext:
    kde: KdeEstimate
    family: GlmFamily
    config: KernelConfig
    mixture: ZMixture = field(repr=False)
    # log u-kernel weights for complete-case rows, shape (n_complete, n)
    log_u_weights: np.ndarray = field(repr=False)
    log_fhat: np.ndarray = field(repr=False)


def build_context(data: Dataset, family: GlmFamily, config: KernelConfig = KernelConfig()) -> PseudoLikContext:
    x = data.x
    h = config.kde_bandwidth
    h = undersmoothed_bandwidth(x, data.m_u) if h == "auto" else np.broadcast_to(np.asarray(h, dtype=float), (data.m,))
    kde = product_kde(x, h)
    obs = data.observed
    return PseudoLikContext(
        kde=kde,
        family=family,
        config=config,
        mixture=z_mixture(kde, data.m_u, config),
        log_u_weights=kde.log_u_weights(data.u[obs]),
        log_fhat=kde.log_evaluate(x[obs]),
    )


def _row_blocks(u_rows: np.ndarray, log_weights, mix: ZMixture, width: int):
    """Yield ``(rows, logw, points_mask)`` over blocks of rows sorted by u.

    ``log_weights(rows)`` returns the log u-kernel weights of those rows
    against every mixture component. Points whose component weight is below
    ``exp(-_PRUNE)`` times the row maximum for every row of the block are
    dropped; their contribution is far below double precision.
    """
    order = np.argsort(u_rows[:, 0], kind="stable")
    step = int(np.clip(_CHUNK_ENTRIES // max(width * mix.size, 1), 1, 64))
    for start in range(0, order.size, step):
        rows = order[start : start + step]
        lw = log_weights(rows)
        keep = (lw - lw.max(axis=1, keepdims=True) > -_PRUNE).any(axis=0)
        pts = keep[mix.component]
        yield rows, lw[:, mix.component[pts]] + mix.log_node_weight[pts], pts


@dataclass
class _Evaluation:
    value: float
    score: np.ndarray
    rows: np.ndarray  # per-observation gradient of H_i, zeros for missing rows


def _evaluate(beta, data: Dataset, ctx: PseudoLikContext) -> _Evaluation:
    beta = np.asarray(beta, dtype=float)
    fam = ctx.family
    lam = fam.dispersion
    mix = ctx.mixture
    mu_ = data.m_u
    obs = np.flatnonzero(data.observed)
    y = data.y[obs]
    u = data.u[obs]
    z = data.z[obs]
    a = beta[0] + u @ beta[1 : 1 + mu_]
    c = mix.points @ beta[1 + mu_ :]
    eta_own = a + z @ beta[1 + mu_ :]
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(c))):
        raise NumericError("nonfinite linear predictor")

    lse = np.empty(obs.size)
    avg_resid = np.empty(obs.size)
    avg_resid_z = np.empty((obs.size, data.m_z))
    blocks = _row_blocks(u, lambda rows: ctx.log_u_weights[rows], mix, 1)
    for sl, logits, pts in blocks:
        eta = a[sl, None] + c[None, pts]
        logits += (y[sl, None] * eta - fam.cumulant(eta)) / lam
        top = logits.max(axis=1, keepdims=True)
        if not np.all(np.isfinite(top)):
            bad = obs[sl][int(np.argmax(~np.isfinite(top[:, 0])))]
            raise NumericError(f"z-integral denominator underflows at row {bad}")
        wts = np.exp(logits - top)
        tot = wts.sum(axis=1)
        lse[sl] = np.log(tot) + top[:, 0]
        wr = wts * ((y[sl, None] - fam.mean(eta)) / lam)
        avg_resid[sl] = wr.sum(axis=1) / tot
        avg_resid_z[sl] = (wr @ mix.points[pts]) / tot[:, None]

    own_resid = (y - fam.mean(eta_own)) / lam
    h = (y * eta_own - fam.cumulant(eta_own)) / lam + ctx.log_fhat - lse
    rows = np.zeros((data.n, beta.size))
    rows[obs, 0] = own_resid - avg_resid
    rows[obs, 1 : 1 + mu_] = (own_resid - avg_resid)[:, None] * u
    rows[obs, 1 + mu_ :] = own_resid[:, None] * z - avg_resid_z
    return _Evaluation(float(h.sum() / data.n), rows.sum(axis=0) / data.n, rows)


def pseudo_loglik(beta, data: Dataset, ctx: PseudoLikContext) -> float:
    return _evaluate(beta, data, ctx).value


def pseudo_score(beta, data: Dataset, ctx: PseudoLikContext) -> np.ndarray:
    return _evaluate(beta, data, ctx).score


def pseudo_hessian(beta, data: Dataset, ctx: PseudoLikContext) -> np.ndarray:
    """Central finite differences of the analytic score, symmetrized."""
    beta = np.asarray(beta, dtype=float)
    k = beta.size
    out = np.empty((k, k))
    for j in range(k):
        step = 1e-5 * (1.0 + abs(beta[j]))
        e = np.zeros(k)
        e[j] = step
        out[:, j] = (pseudo_score(beta + e, data, ctx) - pseudo_score(beta - e, data, ctx)) / (2 * step)
    return 0.5 * (out + out.T)


def _check_information(info: np.ndarray) -> None:
    eig = np.linalg.eigvalsh(info)
    if eig[0] <= 1e-10 * max(eig[-1], 1e-300):
        raise IdentifiabilityError(
            "pseudolikelihood Hessian is singular or indefinite at the optimum "
            f"(eigenvalues {eig.tolist()}); the instrument may be too weak"
        )


def _ascend(beta, data, ctx, tol, max_iter):
    """Damped Newton ascent with a finite-difference Hessian that is reused
    across iterations and refreshed when progress stalls."""
    ev = _evaluate(beta, data, ctx)
    info = None
    gnorm_at_info = np.inf
    for it in range(1, max_iter + 1):
        gnorm = np.max(np.abs(ev.score))
        if gnorm < tol:
            return beta, ev, it - 1
        if info is None or gnorm > 0.5 * gnorm_at_info:
            info = -pseudo_hessian(beta, data, ctx)
            gnorm_at_info = gnorm
            eig, vec = np.linalg.eigh(info)
            floor = 1e-6 * max(abs(eig[-1]), 1.0)
            # Levenberg-style floor keeps the step an ascent direction away from the optimum
            info_pd = (vec * np.maximum(eig, floor)) @ vec.T
        else:
            gnorm_at_info = min(gnorm_at_info, gnorm)
        step = np.linalg.solve(info_pd, ev.score)
        slope = ev.score @ step
        t = 1.0
        for _ in range(40):
            cand = beta + t * step
            try:
                new = _evaluate(cand, data, ctx)
            except NumericError:
                new = None
            if new is not None and np.isfinite(new.value) and new.value >= ev.value + 1e-4 * t * slope:
                break
            t *= 0.5
        else:
            raise ConvergenceError("line search failed in pseudolikelihood ascent", beta)
        if t < 1.0:
            info = None
        beta, ev = cand, new
    raise ConvergenceError(f"pseudolikelihood ascent did not converge in {max_iter} iterations", beta)


def solve_pseudolik(
    data: Dataset,
    family: GlmFamily,
    config: KernelConfig = KernelConfig(),
    init=None,
    prop: Optional[PropensityEstimate] = None,
    ctx: Optional[PseudoLikContext] = None,
    tol: float = 1e-7,
    max_iter: int = 200,
    restarts: int = 3,
) -> EstimatorFit:
    """Maximize the pseudolikelihood and compute corrected influence rows.

    ``prop`` is the propensity estimate entering the correction rows; it is
    fitted from ``config`` when omitted. ``init`` defaults to the
    complete-case GLM fit; on failure the ascent restarts from jittered
    copies of it.
    """
    data.check_identifiable()
    ctx = ctx if ctx is not None else build_context(data, family, config)
    if init is None:
        obs = data.observed
        init = fit_glm(data.x, np.where(obs, data.y, 0.0), family, weights=data.r).beta
    init = np.asarray(init, dtype=float)

    rng = np.random.default_rng(20240607)
    start = init
    last_error = None
    for attempt in range(restarts + 1):
        try:
            beta, ev, iters = _ascend(start, data, ctx, tol, max_iter)
            break
        except ConvergenceError as exc:
            last_error = exc
            start = init + 0.1 * (1.0 + np.abs(init)) * rng.standard_normal(init.size)
    else:
        raise ConvergenceError(
            f"pseudolikelihood ascent failed after {restarts} restarts: {last_error}",
            last_error.last_iterate,
        )

    info = -pseudo_hessian(beta, data, ctx)
    _check_information(info)
    # chord steps with the final Hessian drive the score to rounding level
    for _ in range(3):
        if np.max(np.abs(ev.score)) < 1e-12:
            break
        beta = beta + np.linalg.solve(info, ev.score)
        ev = _evaluate(beta, data, ctx)

    if prop is None:
        prop = fit_propensity(data, config)
    fit = EstimatorFit(beta, ev.rows, True, iters, float(np.max(np.abs(ev.score))), info)
    fit.delta = delta_hat(fit, data, prop, ctx)
    fit.influence = np.linalg.solve(info, (ev.rows + fit.delta).T).T
    return fit


def _y_nodes(fam: GlmFamily, eta: np.ndarray, nodes: int):
    """Per-row y-integration nodes padded to a common width with zero weights."""
    if fam.kind is FamilyKind.POISSON:
        rules = [y_rule(fam, e, nodes) for e in eta]
        width = max(r.points.size for r in rules)
        pts = np.zeros((eta.size, width))
        wts = np.zeros((eta.size, width))
        for i, rule in enumerate(rules):
            pts[i, : rule.points.size] = rule.points
            wts[i, : rule.weights.size] = rule.weights
        return pts, wts, "truncated-sum"
    if fam.kind is FamilyKind.BERNOULLI:
        p1 = fam.mean(eta)
        pts = np.tile([0.0, 1.0], (eta.size, 1))
        return pts, np.column_stack([1.0 - p1, p1]), "exact-sum"
    rule = y_rule(fam, 0.0, nodes)
    return eta[:, None] + rule.points[None, :], np.tile(rule.weights, (eta.size, 1)), rule.kind


def delta_hat(
    fit: EstimatorFit,
    data: Dataset,
    prop: PropensityEstimate,
    ctx: PseudoLikContext,
    return_rule: bool = False,
):
    """Density-estimation correction rows, one per observation (n x (m+1)).

    Row ``i`` is ``pihat(u_i) * (E[A(Y, u_i)] - E[S(Y, x_i)])`` with the
    expectations over ``Y ~ p(. | u_i, z_i; beta)`` and ``A(y, u)`` the
    ratio ``int dp/dbeta fhat(u, z) dz / int p fhat(u, z) dz``.
    """
    beta = np.asarray(fit.beta, dtype=float)
    fam = ctx.family
    lam = fam.dispersion
    mix = ctx.mixture
    mu_ = data.m_u
    a = beta[0] + data.u @ beta[1 : 1 + mu_]
    c = mix.points @ beta[1 + mu_ :]
    eta_own = a + data.z @ beta[1 + mu_ :]
    ypts, ywts, rule_kind = _y_nodes(fam, eta_own, int(ctx.config.y_nodes))
    K = ypts.shape[1]

    mean_own = fam.mean(eta_own)
    out = np.empty((data.n, beta.size))
    blocks = _row_blocks(data.u, lambda rows: ctx.kde.log_u_weights(data.u[rows]), mix, K)
    for sl, lw, pts in blocks:
        eta = a[sl, None] + c[None, pts]
        bfun = fam.cumulant(eta)
        mean = fam.mean(eta)
        yk = ypts[sl][:, :, None]
        logits = lw[:, None, :] + (yk * eta[:, None, :] - bfun[:, None, :]) / lam
        top = logits.max(axis=2, keepdims=True)
        if not np.all(np.isfinite(top)):
            bad = sl[int(np.argmax(~np.all(np.isfinite(top[:, :, 0]), axis=1)))]
            raise NumericError(f"z-integral denominator underflows at row {bad}")
        wts = np.exp(logits - top)
        wts /= wts.sum(axis=2, keepdims=True)
        wr = wts * ((yk - mean[:, None, :]) / lam)
        # A(y_k, u_i) - S(y_k, x_i) at each y node, then averaged over the nodes
        own = (ypts[sl] - mean_own[sl, None]) / lam
        e = wr.sum(axis=2) - own
        ez = np.einsum("ikp,pd->ikd", wr, mix.points[pts]) - own[:, :, None] * data.z[sl][:, None, :]
        e = (e * ywts[sl]).sum(axis=1)
        out[sl, 0] = e
        out[sl, 1 : 1 + mu_] = e[:, None] * data.u[sl]
        out[sl, 1 + mu_ :] = np.einsum("ikd,ik->id", ez, ywts[sl])

    out *= prop(data.u)[:, None]
    if not np.all(np.isfinite(out)):
        raise NumericError("nonfinite correction rows")
    return (out, rule_kind) if return_rule else out
