"""Paired hypothesis tests and dose-slope regression.

Shapiro-Wilk follows Royston's AS R94 approximation; the Student-t tail
uses a continued-fraction regularized incomplete beta. Inverse normal and
normal CDF come from :class:`statistics.NormalDist`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist

import numpy as np

from .._accel import signed_rank_sums
from ..errors import DegenerateVarianceError, InvalidArgumentError

_NORMAL = NormalDist()

# largest n for which the Wilcoxon null distribution is enumerated exactly
WILCOXON_EXACT_MAX_N = 12
# p-value reported for a slope fitted with zero residuals (no sampling variability)
EXACT_FIT_P = 0.0


def _poly(coefs, x: float) -> float:
    return sum(c * x ** i for i, c in enumerate(coefs))


@dataclass(frozen=True)
class ShapiroResult:
    W: float
    p: float


def shapiro_wilk(samples) -> ShapiroResult:
    x = np.sort(np.asarray(samples, dtype=np.float64).ravel())
    n = x.size
    if not 3 <= n <= 5000:
        raise InvalidArgumentError(f"Shapiro-Wilk needs 3 <= n <= 5000, got {n}")
    ss = float(np.sum((x - x.mean()) ** 2))
    if ss <= 0 or x[-1] - x[0] <= 1e-12 * max(abs(x[0]), abs(x[-1]), 1.0):
        raise InvalidArgumentError("Shapiro-Wilk undefined for zero-variance samples")

    half = n // 2
    if n == 3:
        a_half = np.array([math.sqrt(0.5)])
    else:
        m = np.array([_NORMAL.inv_cdf((i - 0.375) / (n + 0.25)) for i in range(1, n + 1)])
        summ2 = float(m @ m)
        u = 1.0 / math.sqrt(n)
        an = m[-1] / math.sqrt(summ2) + _poly((0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056), u)
        if n > 5:
            an1 = m[-2] / math.sqrt(summ2) + _poly((0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633), u)
            eps = (summ2 - 2 * m[-1] ** 2 - 2 * m[-2] ** 2) / (1 - 2 * an ** 2 - 2 * an1 ** 2)
            fixed = [an, an1]
        else:
            eps = (summ2 - 2 * m[-1] ** 2) / (1 - 2 * an ** 2)
            fixed = [an]
        # a_half[k] is the weight of x[n-1-k] - x[k]
        a_half = np.array(fixed + [m[n - 1 - k] / math.sqrt(eps) for k in range(len(fixed), half)])
    num = float(np.sum(a_half * (x[::-1][:half] - x[:half])))
    w = min(num * num / ss, 1.0)

    if n == 3:
        p = 6.0 / math.pi * (math.asin(math.sqrt(w)) - math.asin(math.sqrt(0.75)))
        return ShapiroResult(w, min(max(p, 0.0), 1.0))
    if n <= 11:
        gamma = _poly((-2.273, 0.459), n)
        mu = _poly((0.5440, -0.39978, 0.025054, -6.714e-4), n)
        sigma = math.exp(_poly((1.3822, -0.77857, 0.062767, -0.0020322), n))
        w1 = math.log1p(-w) if w < 1 else -math.inf
        if w1 >= gamma:
            return ShapiroResult(w, 1e-99)
        y = -math.log(gamma - w1)
    else:
        ln = math.log(n)
        mu = _poly((-1.5861, -0.31082, -0.083751, 0.0038915), ln)
        sigma = math.exp(_poly((-0.4803, -0.082676, 0.0030302), ln))
        y = math.log1p(-w) if w < 1 else -math.inf
    if y == -math.inf:
        return ShapiroResult(w, 1.0)
    return ShapiroResult(w, 1.0 - _NORMAL.cdf((y - mu) / sigma))


# ---------------------------------------------------------------------------
# Wilcoxon signed-rank
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WilcoxonResult:
    W: float  # min(W+, W-)
    w_plus: float
    w_minus: float
    p: float
    n: int  # non-zero differences used
    method: str  # "exact" or "normal_approx"


def average_ranks(values) -> np.ndarray:
    """1-based ranks with ties sharing their average rank."""
    v = np.asarray(values, dtype=np.float64)
    order = np.argsort(v, kind="mergesort")
    ranks = np.empty(v.size)
    sv = v[order]
    i = 0
    while i < v.size:
        j = i
        while j + 1 < v.size and sv[j + 1] == sv[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def wilcoxon_signed_rank(a, b=None) -> WilcoxonResult:
    """Two-sided signed-rank test of paired samples (or of ``a`` alone as differences)."""
    a = np.asarray(a, dtype=np.float64).ravel()
    d = a if b is None else a - np.asarray(b, dtype=np.float64).ravel()
    if b is not None and len(a) != len(np.asarray(b).ravel()):
        raise InvalidArgumentError("paired samples must have equal length")
    d = d[d != 0]
    n = d.size
    if n == 0:
        raise InvalidArgumentError("all paired differences are zero")
    ranks = average_ranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    if n <= WILCOXON_EXACT_MAX_N:
        ranks2 = np.rint(2 * ranks).astype(np.int64)
        sums = signed_rank_sums(ranks2)
        obs = int(round(2 * w_plus))
        lower = np.count_nonzero(sums <= obs) / sums.size
        upper = np.count_nonzero(sums >= obs) / sums.size
        p = min(1.0, 2.0 * min(lower, upper))
        method = "exact"
    else:
        mean = n * (n + 1) / 4.0
        _, counts = np.unique(np.abs(d), return_counts=True)
        var = n * (n + 1) * (2 * n + 1) / 24.0 - float(np.sum(counts ** 3 - counts)) / 48.0
        z = max(abs(w_plus - mean) - 0.5, 0.0) / math.sqrt(var)
        p = min(1.0, 2.0 * (1.0 - _NORMAL.cdf(z)))
        method = "normal_approx"
    return WilcoxonResult(min(w_plus, w_minus), w_plus, w_minus, p, n, method)


# ---------------------------------------------------------------------------
# Student t
# ---------------------------------------------------------------------------


def _betacf(a: float, b: float, x: float, max_iter: int = 500, tol: float = 1e-15) -> float:
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c, d = 1.0, 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < tol:
            break
    return h


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta ``I_x(a, b)``."""
    if not 0.0 <= x <= 1.0:
        raise InvalidArgumentError(f"x must be in [0, 1], got {x}")
    if x in (0.0, 1.0):
        return x
    lbt = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    if x < (a + 1.0) / (a + b + 2.0):
        return math.exp(lbt) * _betacf(a, b, x) / a
    return 1.0 - math.exp(lbt) * _betacf(b, a, 1.0 - x) / b


def t_two_sided_p(t: float, df: float) -> float:
    if math.isinf(t):
        return 0.0
    return betainc(df / 2.0, 0.5, df / (df + t * t))


@dataclass(frozen=True)
class TTestResult:
    t: float
    df: int
    p: float


def paired_t_test(a, b=None) -> TTestResult:
    a = np.asarray(a, dtype=np.float64).ravel()
    if b is not None:
        b = np.asarray(b, dtype=np.float64).ravel()
        if a.size != b.size:
            raise InvalidArgumentError("paired samples must have equal length")
    d = a if b is None else a - b
    n = d.size
    if n < 2:
        raise InvalidArgumentError(f"paired t-test needs at least 2 pairs, got {n}")
    sd = float(np.std(d, ddof=1))
    if sd == 0.0 or sd <= 1e-14 * float(np.max(np.abs(d))):
        raise DegenerateVarianceError("paired differences have zero variance")
    t = float(np.mean(d)) / (sd / math.sqrt(n))
    return TTestResult(t, n - 1, t_two_sided_p(t, n - 1))


# ---------------------------------------------------------------------------
# slope regression
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SlopeResult:
    slope: float
    intercept: float
    p_slope: float
    stderr: float
    exact_fit: bool = False

    def to_dict(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "p_slope": self.p_slope,
                "stderr": self.stderr, "exact_fit": self.exact_fit}


def slope_regression(x, y) -> SlopeResult:
    """OLS line with a two-sided t-test of slope = 0 on n - 2 degrees of freedom."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.size != y.size:
        raise InvalidArgumentError("x and y must have equal length")
    n = x.size
    if n < 3:
        raise InvalidArgumentError(f"slope regression needs at least 3 points, got {n}")
    xm, ym = x.mean(), y.mean()
    sxx = float(np.sum((x - xm) ** 2))
    if sxx == 0:
        raise InvalidArgumentError("x values have zero variance")
    slope = float(np.sum((x - xm) * (y - ym)) / sxx)
    intercept = float(ym - slope * xm)
    resid = y - (intercept + slope * x)
    sse = float(resid @ resid)
    scale = max(float(np.sum((y - ym) ** 2)), float(np.max(np.abs(y))) ** 2 * n, 1e-300)
    if sse <= 1e-24 * scale:
        if abs(slope) <= 1e-12 * max(1.0, abs(intercept)):
            return SlopeResult(0.0, intercept, 1.0, 0.0, exact_fit=True)
        return SlopeResult(slope, intercept, EXACT_FIT_P, 0.0, exact_fit=True)
    stderr = math.sqrt(sse / (n - 2) / sxx)
    t = slope / stderr
    return SlopeResult(slope, intercept, t_two_sided_p(t, n - 2), stderr)
