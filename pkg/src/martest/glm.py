"""Exponential dispersion families with canonical links.

The density of one observation is

    p(y | x; beta) = exp{(y * eta - b(eta)) / lambda + c(y; lambda)},
    eta = alpha + u' beta_u + z' beta_z,

so with a canonical link the score is ``(y - mu(eta)) / lambda * (1, x)`` and
its Jacobian ``-b''(eta) / lambda * (1, x)(1, x)'`` does not involve ``y``.

All functions accept a single observation (``y`` scalar, ``x`` of shape
``(m,)``) or a batch (``y`` of shape ``(n,)``, ``x`` of shape ``(n, m)``).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
from scipy.special import expit, gammaln

from .errors import (
    DomainError,
    IdentifiabilityError,
    NumericError,
    OverflowNumericError,
    ShapeError,
)

GAUSS_HERMITE_NODES = 40
POISSON_TAIL = 1e-12
_LOG_2PI = np.log(2.0 * np.pi)


class FamilyKind(str, enum.Enum):
    GAUSSIAN = "gaussian"
    BERNOULLI = "bernoulli"
    POISSON = "poisson"


@dataclass(frozen=True)
class GlmFamily:
    """Family and (known) dispersion. Links are always canonical."""

    kind: FamilyKind = FamilyKind.GAUSSIAN
    dispersion: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", FamilyKind(self.kind))
        lam = float(self.dispersion)
        if not np.isfinite(lam) or lam <= 0:
            raise DomainError(f"dispersion must be positive, got {self.dispersion}")
        if self.kind is not FamilyKind.GAUSSIAN and lam != 1.0:
            raise DomainError(f"{self.kind.value} family requires dispersion 1")
        object.__setattr__(self, "dispersion", lam)

    @classmethod
    def from_name(cls, name: str, dispersion: float = 1.0) -> "GlmFamily":
        return cls(FamilyKind(name.lower()), dispersion)

    # cumulant function and its derivatives

    def cumulant(self, eta):
        if self.kind is FamilyKind.GAUSSIAN:
            return 0.5 * eta * eta
        if self.kind is FamilyKind.BERNOULLI:
            return np.logaddexp(0.0, eta)
        return np.exp(eta)

    def mean(self, eta):
        if self.kind is FamilyKind.GAUSSIAN:
            return eta
        if self.kind is FamilyKind.BERNOULLI:
            return expit(eta)
        return np.exp(eta)

    def mean_deriv(self, eta):
        if self.kind is FamilyKind.GAUSSIAN:
            return np.ones_like(eta)
        if self.kind is FamilyKind.BERNOULLI:
            p = expit(eta)
            return p * (1.0 - p)
        return np.exp(eta)

    def log_base(self, y):
        """c(y; lambda)."""
        if self.kind is FamilyKind.GAUSSIAN:
            lam = self.dispersion
            return -0.5 * y * y / lam - 0.5 * (_LOG_2PI + np.log(lam))
        if self.kind is FamilyKind.BERNOULLI:
            return np.zeros_like(y, dtype=float)
        return -gammaln(y + 1.0)

    def check_support(self, y) -> None:
        y = np.asarray(y, dtype=float)
        if not np.all(np.isfinite(y)):
            raise DomainError("outcome must be finite")
        if self.kind is FamilyKind.BERNOULLI and not np.all((y == 0) | (y == 1)):
            raise DomainError("bernoulli outcome must be 0 or 1")
        if self.kind is FamilyKind.POISSON and not np.all((y >= 0) & (y == np.floor(y))):
            raise DomainError("poisson outcome must be a nonnegative integer")

    def log_density_eta(self, y, eta):
        """Unchecked log p(y | eta), broadcasting over ``y`` and ``eta``."""
        return (y * eta - self.cumulant(eta)) / self.dispersion + self.log_base(y)


@dataclass
class GlmModel:
    family: GlmFamily
    beta: np.ndarray
    m_u: int
    m_z: int

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=float)
        if self.beta.ndim != 1 or self.beta.size != 1 + self.m_u + self.m_z:
            raise ShapeError(
                f"beta must have length 1 + m_u + m_z = {1 + self.m_u + self.m_z}, "
                f"got shape {self.beta.shape}"
            )

    @property
    def m(self) -> int:
        return self.m_u + self.m_z

    def linear_predictor(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.m:
            raise ShapeError(f"x must have {self.m} columns, got shape {x.shape}")
        eta = self.beta[0] + x @ self.beta[1:]
        if not np.all(np.isfinite(eta)):
            raise OverflowNumericError("nonfinite linear predictor")
        if self.family.kind is FamilyKind.POISSON and np.any(eta > 700.0):
            raise OverflowNumericError("linear predictor overflows the poisson mean")
        return eta


def design(x) -> np.ndarray:
    """Prepend the intercept column: rows become (1, x')."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return np.concatenate([[1.0], x])
    return np.column_stack([np.ones(x.shape[0]), x])


def log_density(model: GlmModel, y, x):
    model.family.check_support(y)
    eta = model.linear_predictor(x)
    return model.family.log_density_eta(np.asarray(y, dtype=float), eta)


def score(model: GlmModel, y, x) -> np.ndarray:
    """Gradient of log p(y | x; beta) in beta; shape (m+1,) or (n, m+1)."""
    model.family.check_support(y)
    eta = model.linear_predictor(x)
    resid = (np.asarray(y, dtype=float) - model.family.mean(eta)) / model.family.dispersion
    return np.asarray(resid)[..., None] * design(x)


def score_jacobian(model: GlmModel, y, x) -> np.ndarray:
    """Jacobian of :func:`score` in beta; shape (m+1, m+1) or (n, m+1, m+1)."""
    model.family.check_support(y)
    eta = model.linear_predictor(x)
    d = design(x)
    curv = model.family.mean_deriv(eta) / model.family.dispersion
    return -np.asarray(curv)[..., None, None] * (d[..., :, None] * d[..., None, :])


class YRule(NamedTuple):
    """Discretization of the law of y given eta: ``E g(Y) = sum(weights * g(points))``.

    ``kind`` is ``"exact-sum"`` for Bernoulli, ``"truncated-sum"`` for
    Poisson and ``"gauss-hermite"`` for Gaussian.
    """

    kind: str
    points: np.ndarray
    weights: np.ndarray


_GH_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def gauss_hermite_normal(nodes: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights for E f(N(0, 1)) with ``nodes`` points."""
    if nodes not in _GH_CACHE:
        t, w = np.polynomial.hermite.hermgauss(nodes)
        _GH_CACHE[nodes] = (np.sqrt(2.0) * t, w / np.sqrt(np.pi))
    return _GH_CACHE[nodes]


def y_rule(family: GlmFamily, eta: float, nodes: int = GAUSS_HERMITE_NODES) -> YRule:
    eta = float(eta)
    if not np.isfinite(eta):
        raise OverflowNumericError("nonfinite linear predictor")
    if family.kind is FamilyKind.BERNOULLI:
        p1 = float(expit(eta))
        return YRule("exact-sum", np.array([0.0, 1.0]), np.array([1.0 - p1, p1]))
    if family.kind is FamilyKind.POISSON:
        if eta > 700.0:
            raise OverflowNumericError("linear predictor overflows the poisson mean")
        mu = np.exp(eta)
        kmax = int(np.ceil(mu + 40.0 * np.sqrt(mu) + 60.0))
        k = np.arange(kmax + 1, dtype=float)
        pmf = np.exp(k * eta - mu - gammaln(k + 1.0))
        cut = int(np.searchsorted(np.cumsum(pmf), 1.0 - POISSON_TAIL)) + 1
        cut = min(cut, kmax + 1)
        return YRule("truncated-sum", k[:cut], pmf[:cut])
    t, w = gauss_hermite_normal(nodes)
    return YRule("gauss-hermite", eta + np.sqrt(family.dispersion) * t, w)


def expect_over_y(
    model: GlmModel,
    x,
    g: Callable[[float], np.ndarray],
    nodes: int = GAUSS_HERMITE_NODES,
) -> np.ndarray:
    """Integrate ``g(y)`` against p(y | x; beta)."""
    eta = model.linear_predictor(np.asarray(x, dtype=float))
    rule = y_rule(model.family, eta, nodes)
    vals = np.array([np.atleast_1d(np.asarray(g(y), dtype=float)) for y in rule.points])
    out = rule.weights @ vals
    if not np.all(np.isfinite(out)):
        raise NumericError("nonfinite value in y-integration")
    return out


@dataclass
class GlmFit:
    beta: np.ndarray
    converged: bool
    iterations: int
    score_norm: float
    information: np.ndarray = field(repr=False)


def fit_glm(
    x,
    y,
    family: GlmFamily,
    weights=None,
    init=None,
    tol: float = 1e-10,
    max_iter: int = 100,
) -> GlmFit:
    """Weighted maximum likelihood by Newton's method.

    Solves ``sum_i w_i S(y_i, x_i; beta) = 0``; rows with zero weight are
    ignored entirely (their ``y`` may be NaN).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n, m = x.shape
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    keep = w > 0
    x, y, w = x[keep], y[keep], w[keep]
    family.check_support(y)
    d = design(x)
    beta = np.zeros(m + 1) if init is None else np.array(init, dtype=float)
    if init is None and family.kind is not FamilyKind.GAUSSIAN:
        ybar = np.clip(np.average(y, weights=w), 1e-3, None)
        if family.kind is FamilyKind.BERNOULLI:
            ybar = min(ybar, 1 - 1e-3)
            beta[0] = np.log(ybar / (1 - ybar))
        else:
            beta[0] = np.log(ybar)
    wsum = w.sum()

    def pieces(b):
        eta = d @ b
        mu = family.mean(eta)
        g = d.T @ (w * (y - mu)) / (family.dispersion * wsum)
        info = (d * (w * family.mean_deriv(eta))[:, None]).T @ d / (family.dispersion * wsum)
        return g, info

    g, info = pieces(beta)
    it = 0
    converged = False
    for it in range(1, max_iter + 1):
        try:
            step = np.linalg.solve(info, g)
        except np.linalg.LinAlgError as exc:
            raise IdentifiabilityError("singular information matrix in GLM fit") from exc
        if np.linalg.cond(info) > 1e12:
            raise IdentifiabilityError("GLM information matrix is numerically singular")
        beta = beta + step
        done = np.max(np.abs(g)) < tol
        g, info = pieces(beta)
        if not np.all(np.isfinite(beta)) or not np.all(np.isfinite(g)):
            raise NumericError("GLM Newton iteration diverged")
        if done:
            converged = True
            break
    return GlmFit(beta, converged, it, float(np.max(np.abs(g))), info)
