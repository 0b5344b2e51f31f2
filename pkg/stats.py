#!/usr/bin/env python3
"""
Per-event t-tests and patient-count ratios

Every event column of the grouped before matrix X is compared with the same
column of the after matrix Y. The statistic is computed column-vectorized;
t_test runs the same code on a single column.
"""

from dataclasses import dataclass
from enum import Enum
from typing import List, Mapping, NamedTuple, Optional, Tuple, Union

import numpy as np
from loguru import logger
from scipy import special

from errors import DimensionMismatch, InsufficientGroups, UsageError
from feature_matrix import FeatureMatrix
from readcode import UNKNOWN_TERM

DEFAULT_ALPHA = 0.05


class TestKind(str, Enum):
    STUDENT_POOLED = "student_pooled"
    WELCH = "welch"
    PAIRED = "paired"


@dataclass(frozen=True)
class TestConfig:
    kind: TestKind = TestKind.STUDENT_POOLED
    alpha: float = DEFAULT_ALPHA

    def __post_init__(self):
        try:
            object.__setattr__(self, "kind", TestKind(self.kind))
        except ValueError as e:
            raise UsageError(f"unknown test kind {self.kind!r}") from e
        if not 0.0 < self.alpha < 1.0:
            raise UsageError(f"alpha must lie strictly between 0 and 1, got {self.alpha}")


class TTestResult(NamedTuple):
    t: float
    df: float
    p: float


@dataclass(frozen=True)
class EventStats:
    """Test outcome and patient counts for one event column"""
    code: str
    term: str
    n_before: int
    n_after: int
    t: float
    df: float
    p: float
    r1: float
    r2: float

    @property
    def r2_percent(self) -> float:
        return self.r2 * 100.0

    def significant(self, alpha: float = DEFAULT_ALPHA) -> bool:
        return self.p < alpha


# =============================================================================
# T DISTRIBUTION
# =============================================================================

def t_cdf_two_sided(t, df):
    """
    Two-sided tail probability P(|T| >= |t|) for Student's t with df degrees of freedom.

    Uses the regularized incomplete beta identity p = I_{df/(df+t^2)}(df/2, 1/2).
    Accepts scalars or arrays; infinite t gives 0 and t = 0 gives 1.
    """
    t_arr = np.abs(np.asarray(t, dtype=float))
    df_arr = np.asarray(df, dtype=float)
    if np.any(df_arr <= 0):
        raise ValueError("degrees of freedom must be positive")
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        x = df_arr / (df_arr + t_arr * t_arr)
        p = special.betainc(df_arr / 2.0, 0.5, x)
    p = np.where(np.isinf(t_arr), 0.0, p)
    p = np.where(t_arr == 0.0, 1.0, p)
    p = np.clip(p, 0.0, 1.0)
    if p.ndim == 0:
        return float(p)
    return p


# =============================================================================
# T STATISTICS
# =============================================================================

def _t_statistics(x: np.ndarray, y: np.ndarray, kind: TestKind) -> Tuple[np.ndarray, np.ndarray]:
    """t and df for every column of two G x E arrays"""
    n = x.shape[0]
    if n < 2:
        raise InsufficientGroups(n)

    if kind is TestKind.PAIRED:
        d = x - y
        difference = d.mean(axis=0)
        se2 = d.var(axis=0, ddof=1) / n
        df = np.full(x.shape[1], n - 1.0)
    else:
        difference = x.mean(axis=0) - y.mean(axis=0)
        vx = x.var(axis=0, ddof=1)
        vy = y.var(axis=0, ddof=1)
        if kind is TestKind.STUDENT_POOLED:
            pooled = ((n - 1) * vx + (n - 1) * vy) / (2 * n - 2)
            se2 = pooled * (1.0 / n + 1.0 / n)
            df = np.full(x.shape[1], 2.0 * n - 2.0)
        else:
            ax, ay = vx / n, vy / n
            se2 = ax + ay
            spread = ax * ax / (n - 1) + ay * ay / (n - 1)
            with np.errstate(divide="ignore", invalid="ignore"):
                df = np.where(spread > 0, se2 * se2 / spread, 2.0 * n - 2.0)

    # zero variance: equal means carry no evidence, unequal means infinite evidence
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(se2 > 0, difference / np.sqrt(se2), np.sign(difference) * np.inf)
    t = np.where((se2 <= 0) & (difference == 0), 0.0, t)
    return t, df


def t_test(x, y, kind: Union[TestKind, str] = TestKind.STUDENT_POOLED) -> TTestResult:
    """Two-sided t-test between two equal-length samples"""
    kind = TestKind(kind)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise DimensionMismatch(f"samples must be equal-length vectors, got {x.shape} and {y.shape}")
    t, df = _t_statistics(x[:, None], y[:, None], kind)
    return TTestResult(float(t[0]), float(df[0]), float(t_cdf_two_sided(t[0], df[0])))


# =============================================================================
# RATIOS
# =============================================================================

def ratios(n_before: int, n_after: int, n: int) -> Tuple[float, float]:
    """
    R1 = N_A / N_B (N_A itself when N_B = 0) and R2 = N_A / N as a fraction.
    """
    if n < 1:
        raise ValueError(f"cohort size must be >= 1, got {n}")
    if n_before < 0 or n_after < 0:
        raise ValueError("patient counts cannot be negative")
    r1 = n_after / n_before if n_before > 0 else float(n_after)
    return r1, n_after / n


def bonferroni_alpha(alpha: float, n_events: int) -> float:
    return alpha / max(n_events, 1)


# =============================================================================
# ALL EVENTS
# =============================================================================

def test_all_events(X: FeatureMatrix, Y: FeatureMatrix, N: int,
                    config: Optional[TestConfig] = None,
                    terms: Optional[Mapping[str, str]] = None) -> List[EventStats]:
    """One EventStats per event column, in event-index order"""
    config = config or TestConfig()
    terms = terms or {}
    _check_aligned(X, Y)
    if N < 1:
        raise ValueError(f"cohort size must be >= 1, got {N}")

    codes = X.index.codes
    if not codes:
        return []

    t, df = _t_statistics(X.dense().astype(float), Y.dense().astype(float), config.kind)
    p = t_cdf_two_sided(t, df)
    n_before = X.column_sums()
    n_after = Y.column_sums()

    results = []
    for e, code in enumerate(codes):
        r1, r2 = ratios(int(n_before[e]), int(n_after[e]), N)
        results.append(EventStats(
            code=code,
            term=terms.get(code, UNKNOWN_TERM),
            n_before=int(n_before[e]),
            n_after=int(n_after[e]),
            t=float(t[e]),
            df=float(df[e]),
            p=float(p[e]),
            r1=r1,
            r2=r2,
        ))

    significant = sum(1 for r in results if r.p < config.alpha)
    logger.info(
        f"Tested {len(results)} events ({config.kind.value}, G={X.n_groups}): "
        f"{significant} with p < {config.alpha}"
    )
    return results


def _check_aligned(X: FeatureMatrix, Y: FeatureMatrix) -> None:
    if X.entries.shape != Y.entries.shape:
        raise DimensionMismatch(f"X is {X.entries.shape}, Y is {Y.entries.shape}")
    if X.group_sizes != Y.group_sizes:
        raise DimensionMismatch("X and Y have different group sizes")
    if X.index is None or Y.index is None:
        raise DimensionMismatch("feature matrices carry no event index")
    if X.index.codes != Y.index.codes:
        raise DimensionMismatch("X and Y were built on different event indexes")
