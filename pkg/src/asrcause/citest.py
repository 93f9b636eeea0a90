"""Conditional-independence tests on discrete data."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .graph import DiscreteDataset

TESTS = ("g2", "chi2")


@dataclass(frozen=True)
class CiTestConfig:
    test: str = "g2"
    alpha: float = 0.05
    min_samples_per_df: float = 10.0

    def __post_init__(self):
        if self.test not in TESTS:
            raise ValueError(f"unknown CI test {self.test!r}; expected one of {TESTS}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not self.min_samples_per_df > 0:
            raise ValueError("min_samples_per_df must be positive")


@dataclass(frozen=True)
class CiResult:
    statistic: float
    dof: int
    p_value: float
    independent: bool
    reliable: bool


def contingency(data: DiscreteDataset, x: str, y: str, z: Iterable[str] = ()) -> np.ndarray:
    """Stratified counts with shape ``(n_strata, |x|, |y|)``.

    One stratum per joint configuration of ``z`` (mixed radix, first variable
    most significant); ``z = ()`` gives a single stratum.
    """
    z = tuple(z)
    if x == y:
        raise ValueError("x and y must differ")
    if x in z or y in z:
        raise ValueError("conditioning set must exclude x and y")
    if len(set(z)) != len(z):
        raise ValueError("conditioning set has duplicates")
    for name in (x, y, *z):
        var = data.variable(name)
        if not var.discrete:
            raise ValueError(
                f"{name!r} is a numeric outcome; bin it into ordinal levels before CI testing"
            )
    vx, vy = data.variable(x), data.variable(y)
    n_strata = 1
    stratum = np.zeros(data.n_rows, dtype=np.int64)
    for name in z:
        k = data.variable(name).n_levels
        stratum = stratum * k + data.column(name)
        n_strata *= k
    cell = (stratum * vx.n_levels + data.column(x)) * vy.n_levels + data.column(y)
    counts = np.bincount(cell, minlength=n_strata * vx.n_levels * vy.n_levels)
    return counts.reshape(n_strata, vx.n_levels, vy.n_levels)


def _expected(table: np.ndarray):
    rows = table.sum(axis=2, keepdims=True)
    cols = table.sum(axis=1, keepdims=True)
    tot = rows.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        expected = np.where(tot > 0, rows * cols / np.where(tot > 0, tot, 1), 0.0)
    return expected, rows[:, :, 0], cols[:, 0, :]


def _dof(rows: np.ndarray, cols: np.ndarray) -> int:
    r_nz = (rows > 0).sum(axis=1)
    c_nz = (cols > 0).sum(axis=1)
    return int((np.maximum(r_nz - 1, 0) * np.maximum(c_nz - 1, 0)).sum())


def g2_statistic(table) -> tuple[float, int]:
    """Likelihood-ratio statistic summed over strata, with zero-margin df correction."""
    table = np.asarray(table, dtype=float)
    if table.ndim == 2:
        table = table[None]
    expected, rows, cols = _expected(table)
    mask = table > 0
    stat = 2.0 * float(np.sum(table[mask] * np.log(table[mask] / expected[mask])))
    return max(stat, 0.0), _dof(rows, cols)


def pearson_statistic(table) -> tuple[float, int]:
    table = np.asarray(table, dtype=float)
    if table.ndim == 2:
        table = table[None]
    expected, rows, cols = _expected(table)
    mask = expected > 0
    stat = float(np.sum((table[mask] - expected[mask]) ** 2 / expected[mask]))
    return stat, _dof(rows, cols)


_EPS = 1e-16
_TINY = 1e-300


def _gamma_p_series(a: float, x: float) -> float:
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(10_000):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_q_contfrac(a: float, x: float) -> float:
    # modified Lentz evaluation
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, 10_000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def gamma_q(a: float, x: float) -> float:
    """Regularized upper incomplete gamma function Q(a, x)."""
    if a <= 0:
        raise ValueError("a must be positive")
    if x < 0:
        raise ValueError("x must be nonnegative")
    if x == 0:
        return 1.0
    if x < a + 1.0:
        return 1.0 - _gamma_p_series(a, x)
    return _gamma_q_contfrac(a, x)


def chi2_sf(statistic: float, dof: int) -> float:
    """Survival function of the chi-squared distribution."""
    if statistic < 0 or not math.isfinite(statistic):
        if statistic == math.inf:
            return 0.0
        raise ValueError(f"statistic must be a nonnegative number, got {statistic}")
    if dof < 0:
        raise ValueError("dof must be nonnegative")
    if dof == 0 or statistic == 0:
        return 1.0
    return min(1.0, max(0.0, gamma_q(dof / 2.0, statistic / 2.0)))


def ci_test(
    data: DiscreteDataset,
    x: str,
    y: str,
    z: Iterable[str] = (),
    config: CiTestConfig | None = None,
) -> CiResult:
    """Test ``x`` independent of ``y`` given ``z``.

    Tests with fewer than ``min_samples_per_df * dof`` rows are flagged
    unreliable and reported as dependent, which keeps the edge.
    """
    config = config or CiTestConfig()
    # canonical argument order makes the result exactly symmetric
    if y < x:
        x, y = y, x
    table = contingency(data, x, y, sorted(z))
    if config.test == "g2":
        stat, dof = g2_statistic(table)
    else:
        stat, dof = pearson_statistic(table)
    p = chi2_sf(stat, dof)
    reliable = data.n_rows >= config.min_samples_per_df * dof
    return CiResult(stat, dof, p, reliable and p > config.alpha, reliable)
