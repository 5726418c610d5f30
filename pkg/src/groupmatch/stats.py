"""Statistical tests producing the p-values the matching criteria consume.

Two tests ship built in: Welch's unequal-variance t-test (means) and the
k-sample Anderson-Darling test (distributional shape).  Both are implemented
here from first principles; user-defined tests plug into the same registry
contract and are referenced by name from criteria.

Every test function is pure and deterministic.  When a test is undefined for
the given samples it raises :class:`UndefinedTestError` instead of fabricating
a p-value; search code treats such states as infeasible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import RegistrationError, UndefinedTestError

__all__ = [
    "TestFunction",
    "TestRegistry",
    "WelchResult",
    "ADResult",
    "default_registry",
    "regularized_incomplete_beta",
    "student_t_sf",
    "welch_t",
    "welch_t_p",
    "anderson_darling",
    "anderson_darling_p",
    "register_test",
]

# P-values from the Anderson-Darling tail fit are clamped into this range
# when the standardized statistic falls outside the published table.
AD_P_FLOOR = 1e-12

_INCBETA_EPS = 3e-16
_INCBETA_FPMIN = 1e-300
_INCBETA_MAX_ITER = 500


def _incbeta_cf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta (modified Lentz)."""
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _INCBETA_FPMIN:
        d = _INCBETA_FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, _INCBETA_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _INCBETA_FPMIN:
            d = _INCBETA_FPMIN
        c = 1.0 + aa / c
        if abs(c) < _INCBETA_FPMIN:
            c = _INCBETA_FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _INCBETA_FPMIN:
            d = _INCBETA_FPMIN
        c = 1.0 + aa / c
        if abs(c) < _INCBETA_FPMIN:
            c = _INCBETA_FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _INCBETA_EPS:
            return h
    return h  # converged to double precision long before this in practice


def regularized_incomplete_beta(x: float, a: float, b: float) -> float:
    """I_x(a, b) for a, b > 0 and x in [0, 1], to near machine precision.

    Uses the continued-fraction expansion on whichever side of the
    crossover point converges fast, with the symmetry
    I_x(a, b) = 1 - I_{1-x}(b, a).
    """
    if not (a > 0.0 and b > 0.0):
        raise ValueError(f"shape parameters must be positive, got a={a}, b={b}")
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x must lie in [0, 1], got {x}")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    log_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _incbeta_cf(a, b, x) / a
    return 1.0 - front * _incbeta_cf(b, a, 1.0 - x) / b


def student_t_sf(t: float, df: float) -> float:
    """Two-sided survival probability P(|T_df| >= |t|).

    Evaluated through the incomplete beta so the result depends on t only
    through t*t (exact sign symmetry).
    """
    if df <= 0.0:
        raise ValueError(f"degrees of freedom must be positive, got {df}")
    tt = t * t
    return regularized_incomplete_beta(df / (df + tt), df / 2.0, 0.5)


@dataclass(frozen=True)
class WelchResult:
    statistic: float
    df: float
    p_value: float


def _as_sample(values, minimum: int) -> np.ndarray:
    arr = np.asarray(values, dtype=float).ravel()
    if arr.size < minimum:
        raise UndefinedTestError(
            f"sample has {arr.size} observations, need at least {minimum}"
        )
    return arr


def welch_t(x, y) -> WelchResult:
    """Welch's two-sample t-test with Satterthwaite degrees of freedom.

    Requires >=2 observations per sample and a positive variance in at
    least one sample.  Two samples that are all constant at the same value
    get p = 1 by convention (no evidence of a difference is obtainable).
    """
    xs = _as_sample(x, 2)
    ys = _as_sample(y, 2)
    nx, ny = xs.size, ys.size
    mx, my = float(xs.mean()), float(ys.mean())
    vx = float(xs.var(ddof=1))
    vy = float(ys.var(ddof=1))
    if vx == 0.0 and vy == 0.0:
        if mx == my:
            return WelchResult(0.0, float(nx + ny - 2), 1.0)
        raise UndefinedTestError(
            "both samples are constant with different means; t is undefined"
        )
    sx = vx / nx
    sy = vy / ny
    se2 = sx + sy
    t = (mx - my) / math.sqrt(se2)
    df = se2 * se2 / (sx * sx / (nx - 1) + sy * sy / (ny - 1))
    return WelchResult(t, df, student_t_sf(t, df))


def welch_t_p(x, y) -> float:
    """Two-sided Welch t-test p-value."""
    return welch_t(x, y).p_value


# Tail-area interpolation coefficients for the standardized k-sample
# Anderson-Darling statistic (Scholz-Stephens Table 2): percentile
# t_m(alpha) ~= b0 + b1/sqrt(m) + b2/m at the seven significance levels.
_AD_SIG = np.array([0.25, 0.10, 0.05, 0.025, 0.01, 0.005, 0.001])
_AD_B0 = np.array([0.675, 1.281, 1.645, 1.960, 2.326, 2.573, 3.085])
_AD_B1 = np.array([-0.245, 0.250, 0.678, 1.149, 1.822, 2.364, 3.615])
_AD_B2 = np.array([-0.105, -0.305, -0.362, -0.391, -0.396, -0.345, -0.154])


@dataclass(frozen=True)
class ADResult:
    statistic: float       # A2akN (ties-corrected statistic)
    standardized: float    # (A2akN - (k-1)) / sigma
    p_value: float
    extrapolated: bool     # standardized statistic fell outside the table


def _ad_midrank_statistic(samples: list[np.ndarray]) -> float:
    """Ties-corrected k-sample statistic computed over distinct pooled values."""
    pooled = np.sort(np.concatenate(samples))
    total = pooled.size
    distinct, pooled_counts = np.unique(pooled, return_counts=True)
    # midrank count of pooled observations at or below each distinct value
    below_mid = np.cumsum(pooled_counts) - 0.5 * pooled_counts
    denom = below_mid * (total - below_mid) - total * pooled_counts / 4.0
    weight = pooled_counts / total
    a2 = 0.0
    for sample in samples:
        s = np.sort(sample)
        right = np.searchsorted(s, distinct, side="right")
        left = np.searchsorted(s, distinct, side="left")
        counts = right - left
        mid = right - 0.5 * counts
        num = (total * mid - below_mid * sample.size) ** 2
        a2 += float(np.sum(weight * num / denom)) / sample.size
    return a2 * (total - 1.0) / total


def _ad_variance(n_samples: int, total: int, sizes: np.ndarray) -> float:
    """Null variance of the k-sample statistic (exact finite-N formula)."""
    k = n_samples
    N = total
    H = float(np.sum(1.0 / sizes))
    inv = 1.0 / np.arange(1, N)          # 1/1 .. 1/(N-1)
    h = float(inv.sum())
    # g = sum over 1 <= i < j <= N-1 of 1 / ((N - i) * j)
    prefix = np.cumsum(1.0 / np.arange(N - 1, 1, -1))   # sums of 1/(N-t)
    g = float(np.sum(prefix / np.arange(2, N)))
    a = (4 * g - 6) * (k - 1) + (10 - 6 * g) * H
    b = (2 * g - 4) * k**2 + 8 * h * k + (2 * g - 14 * h - 4) * H - 8 * h + 4 * g - 6
    c = (6 * h + 2 * g - 2) * k**2 + (4 * h - 4 * g + 6) * k + (2 * h - 6) * H + 4 * h
    d = (2 * h + 6) * k**2 - 4 * h * k
    return (a * N**3 + b * N**2 + c * N + d) / ((N - 1.0) * (N - 2.0) * (N - 3.0))


def anderson_darling(samples: Sequence) -> ADResult:
    """k-sample Anderson-Darling test (k >= 2), midrank ties correction.

    The p-value comes from a quadratic fit of log significance against the
    published percentiles of the standardized statistic.  Outside the
    tabulated range the fit is extrapolated along its monotone branch,
    clamped into [1e-12, 1], and flagged via ``extrapolated``.
    """
    if len(samples) < 2:
        raise UndefinedTestError("need at least two samples")
    arrays = [_as_sample(s, 2) for s in samples]
    pooled_size = sum(a.size for a in arrays)
    k = len(arrays)
    distinct = np.unique(np.concatenate(arrays))
    if distinct.size < 2:
        raise UndefinedTestError("all pooled observations are identical")
    sizes = np.array([a.size for a in arrays], dtype=float)
    a2 = _ad_midrank_statistic(arrays)
    sigma_sq = _ad_variance(k, pooled_size, sizes)
    if sigma_sq <= 0.0:
        raise UndefinedTestError("degenerate null variance for the statistic")
    standardized = (a2 - (k - 1)) / math.sqrt(sigma_sq)

    m = k - 1
    percentiles = _AD_B0 + _AD_B1 / math.sqrt(m) + _AD_B2 / m
    fit = np.polyfit(percentiles, np.log(_AD_SIG), 2)
    # evaluate on the branch of the parabola that decreases with the
    # statistic, so extrapolated tails stay monotone
    at = standardized
    c2, c1, _ = fit
    if c2 != 0.0:
        vertex = -c1 / (2.0 * c2)
        at = max(at, vertex) if c2 < 0.0 else min(at, vertex)
    p = float(np.exp(np.polyval(fit, at)))
    extrapolated = bool(
        standardized < percentiles[0] or standardized > percentiles[-1]
    )
    p = min(max(p, AD_P_FLOOR), 1.0)
    return ADResult(a2, standardized, p, extrapolated)


def anderson_darling_p(samples: Sequence) -> float:
    """k-sample Anderson-Darling p-value."""
    return anderson_darling(samples).p_value


@dataclass(frozen=True)
class TestFunction:
    """A named statistical test mapping samples to a p-value in [0, 1].

    ``arity`` is "two_sample" (exactly two groups) or "k_sample" (two or
    more).  ``evaluate`` receives one array per group, kept members only.
    """

    name: str
    arity: str
    evaluate: Callable[[Sequence[np.ndarray]], float]

    __test__ = False  # "Test" prefix is domain vocabulary, not a pytest case

    def __post_init__(self):
        if self.arity not in ("two_sample", "k_sample"):
            raise ValueError(f"unknown arity {self.arity!r}")

    def __call__(self, samples: Sequence[np.ndarray]) -> float:
        if self.arity == "two_sample" and len(samples) != 2:
            raise UndefinedTestError(
                f"test {self.name!r} takes exactly two samples, got {len(samples)}"
            )
        if len(samples) < 2:
            raise UndefinedTestError("need at least two samples")
        p = float(self.evaluate(samples))
        if not 0.0 <= p <= 1.0 or math.isnan(p):
            raise UndefinedTestError(
                f"test {self.name!r} produced p={p!r} outside [0, 1]"
            )
        return p


class TestRegistry:
    """Name -> TestFunction mapping used to resolve criteria."""

    __test__ = False

    def __init__(self, include_builtin: bool = True):
        self._tests: dict[str, TestFunction] = {}
        if include_builtin:
            self.register(
                TestFunction("welch_t", "two_sample", lambda s: welch_t_p(s[0], s[1]))
            )
            self.register(
                TestFunction("anderson_darling", "k_sample", anderson_darling_p)
            )

    def register(self, test: TestFunction) -> TestFunction:
        if test.name in self._tests:
            raise RegistrationError(f"test {test.name!r} already registered")
        self._tests[test.name] = test
        return test

    def get(self, name: str) -> TestFunction:
        try:
            return self._tests[name]
        except KeyError:
            raise KeyError(
                f"no test named {name!r}; registered: {sorted(self._tests)}"
            ) from None

    def names(self) -> list[str]:
        return sorted(self._tests)

    def __contains__(self, name: str) -> bool:
        return name in self._tests


default_registry = TestRegistry()


def register_test(
    name: str,
    evaluate: Callable[[Sequence[np.ndarray]], float],
    *,
    arity: str = "k_sample",
    registry: TestRegistry | None = None,
) -> TestFunction:
    """Register a user-defined test in ``registry`` (default registry if None)."""
    target = default_registry if registry is None else registry
    return target.register(TestFunction(name, arity, evaluate))
