"""Estimates with standard errors, moment reports, and small fitting helpers.

Every number the package emits is either exact (stderr 0 and flagged) or a
Monte Carlo mean with a standard error across independent draws; z-scores
against a reference (usually 0) are the common currency of all statistical
tests. The package-wide pass threshold is ``Z_THRESHOLD`` = 4.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

Z_THRESHOLD = 4.0


def mean_stderr(values) -> tuple[float, float]:
    """Sample mean and stderr of the mean; stderr is 0 for a single value."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("no values")
    if v.size == 1:
        return float(v[0]), 0.0
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))


def zscore(value: float, stderr: float, reference: float = 0.0) -> float:
    """(value - reference)/stderr; +-inf on exact disagreement, 0 on exact match."""
    d = value - reference
    if stderr > 0.0:
        return d / stderr
    return 0.0 if d == 0.0 else math.copysign(math.inf, d)


@dataclass(frozen=True)
class Estimate:
    """A scalar estimate with standard error and sample count."""

    value: float
    stderr: float
    n: int

    def z(self, reference: float = 0.0) -> float:
        return zscore(self.value, self.stderr, reference)

    @classmethod
    def from_values(cls, values) -> "Estimate":
        m, se = mean_stderr(values)
        return cls(m, se, len(np.asarray(values)))


@dataclass(frozen=True)
class MomentEntry:
    """One monomial functional: estimate, stderr, z against its reference."""

    name: str
    estimate: float
    stderr: float
    z: float
    n: int


@dataclass
class MomentReport:
    """Per-monomial estimates plus run metadata (budgets, seeds, raw columns)."""

    entries: list[MomentEntry]
    meta: dict = field(default_factory=dict)

    def names(self) -> list[str]:
        return [e.name for e in self.entries]

    def entry(self, name: str) -> MomentEntry:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    def estimates(self) -> np.ndarray:
        return np.array([e.estimate for e in self.entries])

    def stderrs(self) -> np.ndarray:
        return np.array([e.stderr for e in self.entries])

    def max_abs_z(self) -> float:
        return max((abs(e.z) for e in self.entries), default=0.0)

    def passed(self, threshold: float = Z_THRESHOLD) -> bool:
        return self.max_abs_z() < threshold


def jackknife(stat_fn, *columns) -> tuple[float, float]:
    """Leave-one-out jackknife mean and stderr of stat_fn(col_means...).

    ``columns`` are equal-length per-draw arrays; ``stat_fn`` maps their
    means to a scalar (possibly nonlinear, e.g. a product of means).
    """
    cols = [np.asarray(c, dtype=float) for c in columns]
    n = cols[0].size
    if any(c.size != n for c in cols):
        raise ValueError("jackknife columns must have equal length")
    full = stat_fn(*[c.mean() for c in cols])
    if n < 2:
        return float(full), 0.0
    sums = [c.sum() for c in cols]
    loo = np.empty(n)
    for i in range(n):
        loo[i] = stat_fn(*[(s - c[i]) / (n - 1) for s, c in zip(sums, cols)])
    se = math.sqrt((n - 1) / n * np.sum((loo - loo.mean()) ** 2))
    return float(full), se


def fit_loglog(x, y) -> tuple[float, float]:
    """Least-squares slope and intercept of log(y) against log(x)."""
    lx = np.log(np.asarray(x, dtype=float))
    ly = np.log(np.asarray(y, dtype=float))
    A = np.vstack([lx, np.ones_like(lx)]).T
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    return float(coef[0]), float(coef[1])
