"""Simulation design for size and power studies.

Data are drawn as

    Z ~ N(0, 1),  U | Z ~ N(1 - Z, 1),  Y | U, Z ~ N(1 + U + b_z Z, 1),
    P(R = 1 | Y, U, Z) = Phi(c0 + c1 f(Y) + c2 U),

so ``c1 = 0`` is missing at random and ``c0`` is tuned to a target
missing fraction.
"""

from __future__ import annotations

import dataclasses
import enum
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
from scipy.special import ndtr

from .data import Dataset
from .errors import CalibrationError, DomainError, HarnessError, MarTestError
from .glm import GlmFamily
from .kernels import KernelConfig

log = logging.getLogger(__name__)

CALIBRATION_DRAWS = 100_000
_CALIBRATION_STREAM = 0xC0
MIN_REPS = 50


class FShape(str, enum.Enum):
    LINEAR = "y"
    QUADRATIC = "0.4y^2"
    THRESHOLD = "2.5I(y>1)"

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        if self is FShape.LINEAR:
            return y
        if self is FShape.QUADRATIC:
            return 0.4 * y * y
        return 2.5 * (y > 1.0)

    @classmethod
    def parse(cls, text: str) -> "FShape":
        key = text.strip().lower().replace(" ", "")
        aliases = {
            "y": cls.LINEAR, "linear": cls.LINEAR,
            "0.4y^2": cls.QUADRATIC, "0.4y2": cls.QUADRATIC, "quadratic": cls.QUADRATIC,
            "2.5i(y>1)": cls.THRESHOLD, "threshold": cls.THRESHOLD,
        }
        if key not in aliases:
            raise DomainError(f"unknown f shape {text!r}; use linear, quadratic or threshold")
        return aliases[key]


@dataclass(frozen=True)
class Scenario:
    b_z: float = 1.0
    c1: float = 0.0
    c2: float = 0.0
    f_shape: FShape = FShape.LINEAR
    n: int = 1000
    c0: Optional[float] = None
    target_missing: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "f_shape", FShape(self.f_shape))
        if int(self.n) != self.n or self.n < 50:
            raise DomainError(f"n must be an integer >= 50, got {self.n}")
        if not 0.05 < self.target_missing < 0.95:
            raise DomainError("target_missing must lie in (0.05, 0.95)")

    def replace(self, **changes) -> "Scenario":
        return dataclasses.replace(self, **changes)


def rng_stream(seed: int, *keys: int) -> np.random.Generator:
    """Counter-based generator keyed by ``(seed, *keys)``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, keys)])))


def _draw_full(sc: Scenario, n: int, rng: np.random.Generator):
    z = rng.standard_normal(n)
    u = 1.0 - z + rng.standard_normal(n)
    y = 1.0 + u + sc.b_z * z + rng.standard_normal(n)
    return y, u, z


def missing_rate(sc: Scenario, c0: float, y, u) -> float:
    return float(np.mean(ndtr(-(c0 + sc.c1 * sc.f_shape(y) + sc.c2 * u))))


@lru_cache(maxsize=256)
def _calibrate(b_z, c1, c2, f_shape, target, seed) -> float:
    sc = Scenario(b_z=b_z, c1=c1, c2=c2, f_shape=f_shape, target_missing=target)
    y, u, _ = _draw_full(sc, CALIBRATION_DRAWS, rng_stream(seed, _CALIBRATION_STREAM))
    shift = sc.c1 * sc.f_shape(y) + sc.c2 * u
    lo, hi = -10.0, 10.0

    def rate(c0):
        return float(np.mean(ndtr(-(c0 + shift))))

    if not rate(lo) >= target >= rate(hi):
        raise CalibrationError(f"missing fraction {target} is not bracketed by c0 in [-10, 10]")
    # bisection on a common-random-numbers estimate, so the result is deterministic
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if rate(mid) > target:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-13:
            break
    return 0.5 * (lo + hi)


def calibrate_c0(sc: Scenario, seed: int = 0) -> float:
    """Intercept giving the target missing fraction, ignoring ``sc.c0``."""
    return _calibrate(float(sc.b_z), float(sc.c1), float(sc.c2), sc.f_shape, float(sc.target_missing), int(seed))


def resolve_c0(sc: Scenario, seed: int = 0) -> Scenario:
    return sc if sc.c0 is not None else sc.replace(c0=calibrate_c0(sc, seed))


def generate_dataset(sc: Scenario, seed: int, rep: int = 0) -> Dataset:
    """Draw one dataset; ``rep`` selects an independent stream under ``seed``."""
    sc = resolve_c0(sc, seed)
    rng = rng_stream(seed, rep)
    y, u, z = _draw_full(sc, sc.n, rng)
    p_obs = ndtr(sc.c0 + sc.c1 * sc.f_shape(y) + sc.c2 * u)
    r = (rng.random(sc.n) < p_obs).astype(np.int8)
    return Dataset(np.where(r == 1, y, np.nan), r, u, z, oracle_y=y)


@dataclass
class RepOutcome:
    """What one replication produced; ``error`` is set when it failed."""

    rep: int
    T: float = np.nan
    p_value: float = np.nan
    beta_ipw: Optional[np.ndarray] = None
    beta_pseudo: Optional[np.ndarray] = None
    var_ipw: Optional[np.ndarray] = None
    var_pseudo: Optional[np.ndarray] = None
    missing_fraction: float = np.nan
    error: Optional[str] = None


def run_replication(sc: Scenario, rep: int, seed: int, family: GlmFamily, config: KernelConfig) -> RepOutcome:
    """Simulate dataset ``rep`` of the scenario and run the test on it.

    ``sc.c0`` must already be set.
    """
    from .hausman import run_test

    data = generate_dataset(sc, seed, rep)
    try:
        res = run_test(data, family, config)
    except MarTestError as exc:
        return RepOutcome(rep, missing_fraction=1 - data.n_complete / data.n, error=f"{exc.code}: {exc}")
    return RepOutcome(
        rep,
        T=res.T,
        p_value=res.p_value,
        beta_ipw=res.beta_ipw,
        beta_pseudo=res.beta_pseudo,
        var_ipw=np.diag(res.fit_ipw.covariance()),
        var_pseudo=np.diag(res.fit_pseudo.covariance()),
        missing_fraction=1 - data.n_complete / data.n,
    )


def _replication_task(args):
    return run_replication(*args)


@dataclass
class RejectionRate:
    scenario: Scenario
    reps: int
    level: float
    rate: float
    se: float
    failures: int
    outcomes: list = field(default_factory=list, repr=False)

    @property
    def t_values(self) -> np.ndarray:
        return np.array([o.T for o in self.outcomes if o.error is None])

    @property
    def p_values(self) -> np.ndarray:
        return np.array([o.p_value for o in self.outcomes if o.error is None])


def rejection_rate(
    sc: Scenario,
    reps: int = 500,
    level: float = 0.05,
    family: GlmFamily = GlmFamily(),
    config: KernelConfig = KernelConfig(),
    seed: int = 0,
    n_jobs: int = 1,
    max_failure_fraction: float = 0.1,
) -> RejectionRate:
    """Fraction of replications with p-value below ``level``.

    Replication ``k`` uses the stream ``(seed, k)``, so results do not depend
    on ``n_jobs``. Failed replications are excluded from the denominator and
    counted separately; more than ``max_failure_fraction`` of them is an error.
    """
    if reps < MIN_REPS:
        raise DomainError(f"need at least {MIN_REPS} replications, got {reps}")
    if not 0 < level < 1:
        raise DomainError("level must lie in (0, 1)")
    sc = resolve_c0(sc, seed)
    tasks = [(sc, k, seed, family, config) for k in range(reps)]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            outcomes = list(pool.map(_replication_task, tasks, chunksize=max(1, reps // (4 * n_jobs))))
    else:
        outcomes = [_replication_task(t) for t in tasks]
    failures = sum(o.error is not None for o in outcomes)
    if failures > max_failure_fraction * reps:
        first = next(o.error for o in outcomes if o.error is not None)
        raise HarnessError(f"{failures} of {reps} replications failed (first: {first})")
    ok = reps - failures
    rejected = sum(o.p_value < level for o in outcomes if o.error is None)
    rate = rejected / ok if ok else float("nan")
    se = math.sqrt(rate * (1 - rate) / ok) if ok else float("nan")
    log.info("cell %s: rate %.4f (se %.4f, %d failures)", sc, rate, se, failures)
    return RejectionRate(sc, reps, level, rate, se, failures, outcomes)


@dataclass
class GridRow:
    f_shape: str
    b_z: float
    c2: float
    c1: float
    n: int
    reps: int
    rate: float
    se: float
    failures: int
    c0: float = float("nan")
    error: str = ""
    t_values: list = field(default_factory=list, repr=False)


GRID_COLUMNS = ["f_shape", "b_z", "c2", "c1", "n", "reps", "rate", "se", "failures", "error"]


def run_grid(
    scenarios: Sequence[Scenario],
    reps: int = 500,
    level: float = 0.05,
    seed: int = 0,
    family: GlmFamily = GlmFamily(),
    config: KernelConfig = KernelConfig(),
    n_jobs: int = 1,
) -> list[GridRow]:
    """Rejection rate for every scenario; a failing cell records its error
    and the grid carries on."""
    rows = []
    for sc in scenarios:
        base = dict(f_shape=sc.f_shape.value, b_z=sc.b_z, c2=sc.c2, c1=sc.c1, n=sc.n, reps=reps)
        try:
            res = rejection_rate(sc, reps, level, family, config, seed, n_jobs)
        except MarTestError as exc:
            rows.append(GridRow(**base, rate=float("nan"), se=float("nan"), failures=reps, error=f"{exc.code}: {exc}"))
            continue
        rows.append(
            GridRow(
                **base,
                rate=res.rate,
                se=res.se,
                failures=res.failures,
                c0=res.scenario.c0,
                t_values=sorted(res.t_values.tolist()),
            )
        )
    return rows
