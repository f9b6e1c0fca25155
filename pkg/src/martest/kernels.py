"""Gaussian kernel machinery.

* Nadaraya-Watson regression of the response indicator on ``u``.
* Product-kernel density estimation on ``x = (u, z)``.
* Integrals ``int g(z) fhat(u, z) dz`` over the ``z`` block of a product
  KDE, either by Gauss-Hermite quadrature on each mixture component or by
  collapsing each ``z`` kernel to a point mass at its center.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np
from scipy.special import logsumexp

from .errors import DegenerateDataError, DomainError, NumericError, ShapeError
from .glm import gauss_hermite_normal

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)
# exp() of anything below this is zero in double precision
_LOG_UNDERFLOW = np.log(np.finfo(float).tiny)

Bandwidth = Union[float, str]


class ZMode(str, enum.Enum):
    MIXTURE = "mixture"
    DEGENERATE = "degenerate"


@dataclass(frozen=True)
class KernelConfig:
    """Smoothing choices shared by both estimators.

    An ``"auto"`` propensity bandwidth resolves to Silverman's rule on ``u``;
    an ``"auto"`` density bandwidth resolves to :func:`undersmoothed_bandwidth`
    on ``(u, z)``.
    """

    propensity_bandwidth: Bandwidth = "auto"
    kde_bandwidth: Union[Sequence[float], str] = "auto"
    quadrature_nodes: int = 20
    z_mode: ZMode = ZMode.MIXTURE
    y_nodes: int = 40
    clip: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "z_mode", ZMode(self.z_mode))
        b = self.propensity_bandwidth
        if b != "auto" and not (np.isfinite(float(b)) and float(b) > 0):
            raise DomainError(f"propensity bandwidth must be positive, got {b}")
        h = self.kde_bandwidth
        if h != "auto":
            h = np.atleast_1d(np.asarray(h, dtype=float))
            if not np.all(np.isfinite(h) & (h > 0)):
                raise DomainError(f"KDE bandwidths must be positive, got {self.kde_bandwidth}")
            object.__setattr__(self, "kde_bandwidth", tuple(h.tolist()))
        if int(self.quadrature_nodes) < 2:
            raise DomainError("quadrature_nodes must be at least 2")
        if int(self.y_nodes) < 2:
            raise DomainError("y_nodes must be at least 2")
        if not 0 < self.clip < 0.5:
            raise DomainError("clip must lie in (0, 0.5)")


def silverman_bandwidth(samples) -> np.ndarray:
    """Normal-reference bandwidth for a d-dimensional product kernel.

    ``h_j = (4 / (d + 2))**(1 / (d + 4)) * n**(-1 / (d + 4)) * sd_j``.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n, d = x.shape
    if n < 2:
        raise DegenerateDataError("bandwidth selection needs at least two samples")
    sd = x.std(axis=0, ddof=1)
    if np.any(~np.isfinite(sd)) or np.any(sd <= 0):
        raise DegenerateDataError("zero-variance coordinate; cannot choose a bandwidth")
    return (4.0 / (d + 2)) ** (1.0 / (d + 4)) * n ** (-1.0 / (d + 4)) * sd


def undersmoothing_rate(m_u: int) -> float:
    """Exponent ``a`` in ``h ~ n**-a`` for the pseudolikelihood density.

    The smoothing bias vanishes faster than ``n**-1/2`` when ``a > 1/4`` and
    the u-kernel sums stay stable when ``a < 1/m_u``. Returns ``2/5``, or
    the middle of that window when it is narrower.
    """
    return min(0.4, 0.5 * (0.25 + 1.0 / m_u))


def undersmoothed_bandwidth(samples, m_u: int = 1) -> np.ndarray:
    """Silverman's constant and scale with the rate ``n**-undersmoothing_rate(m_u)``.

    The normal-reference rate ``n**(-1/(d+4))`` leaves a smoothing bias in
    the pseudolikelihood estimate of the same order as its sampling error.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n, d = x.shape
    return silverman_bandwidth(x) * n ** (1.0 / (d + 4) - undersmoothing_rate(m_u))


def _as_matrix(a, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise ShapeError(f"{name} must be a matrix")
    return a


def _log_gauss_kernel(query: np.ndarray, centers: np.ndarray, h: np.ndarray) -> np.ndarray:
    """log prod_d phi((q_d - c_d) / h_d) / h_d, shape (len(query), len(centers))."""
    out = np.zeros((query.shape[0], centers.shape[0]))
    for d in range(centers.shape[1]):
        diff = (query[:, d, None] - centers[None, :, d]) / h[d]
        out -= 0.5 * diff * diff
    out -= centers.shape[1] * _LOG_SQRT_2PI + np.log(h).sum()
    return out


@dataclass(frozen=True)
class PropensityEstimate:
    """Nadaraya-Watson estimate of P(R = 1 | U = u) with a Gaussian kernel."""

    u: np.ndarray = field(repr=False)
    r: np.ndarray = field(repr=False)
    bandwidth: float = 1.0
    clip: float = 0.01

    def raw(self, u_query) -> np.ndarray:
        q = np.asarray(u_query, dtype=float)
        single = q.ndim == 1 and self.u.shape[1] > 1 or q.ndim == 0
        q = q.reshape(1, -1) if single else _as_matrix(q, "u")
        lk = _log_gauss_kernel(q, self.u, np.full(self.u.shape[1], self.bandwidth))
        top = lk.max(axis=1)
        if np.any(top < _LOG_UNDERFLOW):
            bad = int(np.argmax(top < _LOG_UNDERFLOW))
            raise NumericError(
                f"all kernel weights underflow at query {q[bad].tolist()}; "
                "query too far from the training support"
            )
        w = np.exp(lk - top[:, None])
        val = (w @ self.r) / w.sum(axis=1)
        return val[0] if single else val

    def __call__(self, u_query) -> np.ndarray:
        return np.clip(self.raw(u_query), self.clip, 1.0 - self.clip)


def nw_propensity(u, r, b: float, clip: float = 0.01) -> PropensityEstimate:
    u = _as_matrix(u, "u")
    r = np.asarray(r, dtype=float)
    if u.shape[0] < 1 or r.shape != (u.shape[0],):
        raise ShapeError("u and r must have the same number of rows")
    if not (np.isfinite(b) and b > 0):
        raise DomainError(f"bandwidth must be positive, got {b}")
    return PropensityEstimate(u, r, float(b), clip)


@dataclass(frozen=True)
class KdeEstimate:
    """Uniform mixture of Gaussian product kernels centered at the rows of ``x``."""

    x: np.ndarray = field(repr=False)
    bandwidth: np.ndarray = field(default=None)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    def log_evaluate(self, x_query) -> np.ndarray:
        q = np.asarray(x_query, dtype=float)
        single = q.ndim == 1
        q = np.atleast_2d(q)
        lk = _log_gauss_kernel(q, self.x, self.bandwidth)
        out = logsumexp(lk, axis=1) - np.log(self.n)
        return out[0] if single else out

    def __call__(self, x_query) -> np.ndarray:
        return np.exp(self.log_evaluate(x_query))

    def log_u_weights(self, u_query) -> np.ndarray:
        """log of n^-1 prod_{d in u} K_h(u_d - U_jd) for each query row and center j."""
        q = _as_matrix(u_query, "u")
        mu = q.shape[1]
        return _log_gauss_kernel(q, self.x[:, :mu], self.bandwidth[:mu]) - np.log(self.n)

    def u_marginal(self, u_query) -> np.ndarray:
        return np.exp(logsumexp(self.log_u_weights(u_query), axis=1))


def product_kde(x, h) -> KdeEstimate:
    x = _as_matrix(x, "x")
    h = np.atleast_1d(np.asarray(h, dtype=float))
    if h.size == 1 and x.shape[1] > 1:
        h = np.full(x.shape[1], h[0])
    if h.shape != (x.shape[1],):
        raise ShapeError(f"need one bandwidth per coordinate ({x.shape[1]}), got {h.shape}")
    if not np.all(np.isfinite(h) & (h > 0)):
        raise DomainError("bandwidths must be positive")
    if x.shape[0] < 1:
        raise ShapeError("KDE needs at least one point")
    return KdeEstimate(x, h)


@dataclass(frozen=True)
class ZMixture:
    """Discretization of the ``z`` block of a product KDE.

    ``points[p]`` belongs to mixture component ``component[p]`` and carries
    log quadrature weight ``log_node_weight[p]``; for a query ``u`` the
    full log weight is ``kde.log_u_weights(u)[component] + log_node_weight``.
    """

    points: np.ndarray
    component: np.ndarray
    log_node_weight: np.ndarray
    m_u: int

    @property
    def size(self) -> int:
        return self.points.shape[0]


def z_mixture(kde: KdeEstimate, m_u: int, config: KernelConfig) -> ZMixture:
    zc = kde.x[:, m_u:]
    m_z = zc.shape[1]
    if m_z < 1:
        raise ShapeError("KDE has no z coordinates")
    n = kde.n
    if config.z_mode is ZMode.DEGENERATE:
        return ZMixture(zc.copy(), np.arange(n), np.zeros(n), m_u)
    t, w = gauss_hermite_normal(int(config.quadrature_nodes))
    grid = np.array(list(itertools.product(t, repeat=m_z)))
    logw = np.array([np.log(np.prod(c)) for c in itertools.product(w, repeat=m_z)])
    hz = kde.bandwidth[m_u:]
    pts = (zc[:, None, :] + grid[None, :, :] * hz).reshape(-1, m_z)
    comp = np.repeat(np.arange(n), grid.shape[0])
    lnw = np.tile(logw, n)
    return ZMixture(pts, comp, lnw, m_u)


def kde_z_integral(
    kde: KdeEstimate,
    u,
    g: Callable[[np.ndarray], np.ndarray],
    config: KernelConfig,
) -> np.ndarray:
    """Compute ``int g(z) fhat(u, z) dz``.

    ``g`` is called once with a ``(P, m_z)`` array of z points and must
    return shape ``(P,)`` or ``(P, k)``.
    """
    u = np.atleast_1d(np.asarray(u, dtype=float))
    mix = z_mixture(kde, u.size, config)
    lw = kde.log_u_weights(u[None, :])[0][mix.component] + mix.log_node_weight
    vals = np.asarray(g(mix.points), dtype=float)
    if vals.ndim == 1:
        vals = vals[:, None]
    out = np.exp(lw) @ vals
    if not np.all(np.isfinite(out)):
        raise NumericError("nonfinite z-integral")
    return out
