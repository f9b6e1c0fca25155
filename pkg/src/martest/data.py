from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DegenerateDataError, SchemaError, ShapeError


@dataclass
class Dataset:
    """Outcome with missing entries plus fully observed covariates.

    ``y`` holds NaN wherever ``r == 0``. ``u`` are the ordinary covariates
    and ``z`` the instruments, each an ``(n, k)`` matrix. ``oracle_y`` is
    the complete outcome vector, kept only for simulated data.
    """

    y: np.ndarray
    r: np.ndarray
    u: np.ndarray
    z: np.ndarray
    oracle_y: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float).ravel()
        self.r = np.asarray(self.r).astype(np.int8).ravel()
        self.u = np.asarray(self.u, dtype=float)
        self.z = np.asarray(self.z, dtype=float)
        if self.u.ndim == 1:
            self.u = self.u[:, None]
        if self.z.ndim == 1:
            self.z = self.z[:, None]
        n = self.y.size
        if self.r.size != n or self.u.shape[0] != n or self.z.shape[0] != n:
            raise ShapeError("y, r, u and z must have the same number of rows")
        if self.u.shape[1] < 1 or self.z.shape[1] < 1:
            raise ShapeError("need at least one u column and one z column")
        if not np.all((self.r == 0) | (self.r == 1)):
            raise SchemaError("r must be binary")
        if np.any(np.isnan(self.y) != (self.r == 0)):
            raise SchemaError("r must be 1 exactly where y is observed")
        if not (np.all(np.isfinite(self.u)) and np.all(np.isfinite(self.z))):
            raise SchemaError("covariates must be finite")
        if not np.all(np.isfinite(self.y[self.r == 1])):
            raise SchemaError("observed outcomes must be finite")

    def check_identifiable(self) -> None:
        """Enough rows and complete cases to identify beta (checked by the solvers)."""
        if self.n < self.m + 2 or self.n_complete < self.m + 2:
            raise DegenerateDataError(
                f"need at least m + 2 = {self.m + 2} rows and complete cases, "
                f"got n={self.n}, complete={self.n_complete}"
            )

    @classmethod
    def from_arrays(cls, y, u, z, oracle_y=None) -> "Dataset":
        """Build from an outcome vector that uses NaN for missing entries."""
        y = np.asarray(y, dtype=float)
        return cls(y, (~np.isnan(y)).astype(np.int8), u, z, oracle_y)

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def m_u(self) -> int:
        return self.u.shape[1]

    @property
    def m_z(self) -> int:
        return self.z.shape[1]

    @property
    def m(self) -> int:
        return self.m_u + self.m_z

    @property
    def x(self) -> np.ndarray:
        return np.hstack([self.u, self.z])

    @property
    def observed(self) -> np.ndarray:
        return self.r == 1

    @property
    def n_complete(self) -> int:
        return int(self.r.sum())

    def take(self, index) -> "Dataset":
        index = np.asarray(index)
        oy = None if self.oracle_y is None else self.oracle_y[index]
        return Dataset(self.y[index], self.r[index], self.u[index], self.z[index], oy)
