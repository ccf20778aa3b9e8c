"""Scenario risk levels, support-constraint counts and incomplete-beta special functions."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import betaln, logsumexp

from .errors import EtaTooLarge, NoRoot

EXACT = "exact-eq7"
FIXED = "fixed-solution"
MODES = (EXACT, FIXED)


@dataclass(frozen=True)
class SupportRule:
    """Degrees of freedom ``d`` of the decision variable and its convexity class.

    ``d=None`` lets :func:`support_bound` derive it from the matrix dimension.
    """

    d: int | None = None
    convexity: str = "convex"  # or "quasi-convex"

    def __post_init__(self):
        if self.d is not None and self.d < 0:
            raise ValueError("d must be nonnegative")
        if self.convexity not in ("convex", "quasi-convex"):
            raise ValueError(f"unknown convexity class {self.convexity!r}")


def support_bound(rule: SupportRule, n: int | None = None, P_fixed: bool = False) -> int:
    """Bound on the number of support constraints: ``d+1`` (convex) or ``2d+1`` (quasi-convex).

    A free trace-one symmetric ``P`` has ``d = n(n+1)/2 - 1``; a fixed ``P`` has ``d = 0``.
    """
    d = rule.d
    if d is None:
        if P_fixed:
            d = 0
        elif n is None:
            raise ValueError("n is required to derive d for a free P")
        else:
            d = n * (n + 1) // 2 - 1
    return d + 1 if rule.convexity == "convex" else 2 * d + 1


@dataclass(frozen=True)
class RiskQuery:
    N: int
    k: int
    beta: float
    mode: str = EXACT

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be at least 1")
        if not 0 <= self.k <= self.N:
            raise ValueError(f"k={self.k} outside [0, N={self.N}]")
        if not 0 < self.beta < 1:
            raise ValueError("beta must lie in (0, 1)")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")


def _log_pmf(N, eps, j0, j1):
    """log Bin(N, eps) pmf at j0..j1-1, by the ratio recursion from j=0."""
    j = np.arange(1, j1, dtype=float)
    steps = np.log(N - j + 1) - np.log(j) + (math.log(eps) - math.log1p(-eps))
    lp = N * math.log1p(-eps) + np.concatenate([[0.0], np.cumsum(steps)])
    return lp[j0:j1]


def _log_upper_tail(N, eps, k):
    """log P(Bin(N, eps) >= k+1), summed directly until the terms are negligible."""
    total = -np.inf
    start, chunk = k + 1, 4096
    lp_prev = _log_pmf(N, eps, k, k + 1)[0]
    while start <= N:
        stop = min(N + 1, start + chunk)
        j = np.arange(start, stop, dtype=float)
        steps = np.log(N - j + 1) - np.log(j) + (math.log(eps) - math.log1p(-eps))
        lp = lp_prev + np.cumsum(steps)
        total = np.logaddexp(total, logsumexp(lp))
        lp_prev = lp[-1]
        if lp[-1] < total - 50 and steps[-1] < 0:
            break
        start, chunk = stop, chunk * 2
    return float(total)


def _log_tail_and_pmf(N, k, eps):
    lp = _log_pmf(N, eps, 0, k + 1)
    log_lower = logsumexp(lp)
    if log_lower < math.log(0.5):
        log_tail = math.log1p(-math.exp(log_lower))
    else:
        log_tail = _log_upper_tail(N, eps, k)
    return log_tail, float(lp[k])


def eq7_log_residual(N, k, beta, eps) -> float:
    """``log(eps * pmf_k * N / beta) - log P(Bin >= k+1)``; zero exactly at the risk level.

    Multiplying both sides of the defining equation by ``eps^(k+1)`` turns the
    finite sum into a binomial upper tail, which stays finite at any ``N``.
    """
    log_tail, log_pmf_k = _log_tail_and_pmf(N, k, eps)
    return math.log(eps) + log_pmf_k + math.log(N / beta) - log_tail


def _exact_root(N, k, beta):
    f = lambda u: eq7_log_residual(N, k, beta, math.exp(u))
    scale = (k + 1 + math.log(1 / beta)) / N
    lo = math.log(min(scale, 0.5) * 1e-3)
    hi = math.log(min(0.999999, 50 * scale))
    for _ in range(60):
        if f(lo) > 0:
            break
        lo -= 5.0
    else:
        raise NoRoot("could not bracket the risk level from below")
    for _ in range(60):
        if f(hi) < 0:
            break
        hi = math.log1p(-0.5 * (1 - math.exp(hi)))
    else:
        raise NoRoot("could not bracket the risk level from above")
    u = brentq(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=400)
    return math.exp(u)


def epsilon_bar(q: RiskQuery) -> float:
    """Risk level for ``N`` samples with support bound ``k`` at confidence ``1-beta``."""
    if q.k == q.N:
        return 1.0
    if q.mode == FIXED:
        return -math.expm1(math.log(q.beta) / q.N)
    return _exact_root(q.N, q.k, q.beta)


def min_samples_for(target, k, beta, mode=EXACT) -> int:
    """Smallest ``N`` with ``epsilon_bar(N, k, beta) < target``."""
    if not 0 < target < 1:
        raise ValueError("target risk must lie in (0, 1)")
    if mode == FIXED:
        N = math.floor(math.log(beta) / math.log1p(-target)) + 1
        while N > 1 and -math.expm1(math.log(beta) / (N - 1)) < target:
            N -= 1
        while -math.expm1(math.log(beta) / N) >= target:
            N += 1
        return N
    below = lambda N: N > k and epsilon_bar(RiskQuery(N, k, beta, mode)) < target
    lo, hi = k, max(2 * k + 2, 16)
    while not below(hi):
        lo, hi = hi, 2 * hi
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if below(mid):
            hi = mid
        else:
            lo = mid
    return hi


# -- incomplete beta -----------------------------------------------------------------

_FPMIN = 1e-300


def _betacf(a, b, y, max_iter=10000, tol=1e-16):
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c, d = 1.0, 1.0 - qab * y / qap
    d = 1.0 / (d if abs(d) > _FPMIN else _FPMIN)
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * y / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _FPMIN else _FPMIN)
        c = 1.0 + aa / c
        c = c if abs(c) > _FPMIN else _FPMIN
        h *= d * c
        aa = -(a + m) * (qab + m) * y / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _FPMIN else _FPMIN)
        c = 1.0 + aa / c
        c = c if abs(c) > _FPMIN else _FPMIN
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < tol:
            return h
    raise RuntimeError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, y={y})")


def regularized_incomplete_beta(a, b, y) -> float:
    """``I_{a,b}(y)``, the normalised integral of ``t^(a-1) (1-t)^(b-1)`` over ``[0, y]``."""
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    if not 0 <= y <= 1:
        raise ValueError("y must lie in [0, 1]")
    if y == 0 or y == 1:
        return float(y)
    log_front = a * math.log(y) + b * math.log1p(-y) - betaln(a, b)
    if y < (a + 1) / (a + b + 2):
        return math.exp(log_front) * _betacf(a, b, y) / a
    return 1.0 - math.exp(log_front) * _betacf(b, a, 1 - y) / b


def inverse_regularized_beta(a, b, z, tol=1e-13) -> float:
    """``y`` with ``I_{a,b}(y) = z``: safeguarded Newton inside a shrinking bracket."""
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    if not 0 <= z <= 1:
        raise ValueError("z must lie in [0, 1]")
    if z == 0 or z == 1:
        return float(z)
    lo, hi = 0.0, 1.0
    lbeta = betaln(a, b)
    # start from the small-y asymptote I ~ y^a / (a B)
    y = min(0.5, math.exp((math.log(z) + math.log(a) + lbeta) / a))
    for _ in range(300):
        r = regularized_incomplete_beta(a, b, y) - z
        if abs(r) <= tol:
            return y
        if r > 0:
            hi = y
        else:
            lo = y
        dens = math.exp((a - 1) * math.log(y) + (b - 1) * math.log1p(-y) - lbeta)
        step = y - r / dens if dens > 0 else None
        if step is None or not lo < step < hi:
            step = 0.5 * (lo + hi)
        if hi - lo <= 4 * np.finfo(float).eps * max(hi, 1e-300):
            return y
        y = step
    return y


def cap_fraction(n, eta):
    """``Itilde_{(n-1)/2, 1/2}(2 eta)`` = ``1 - sbar^2``."""
    if not 0 < eta < 0.5:
        raise EtaTooLarge(f"eta={eta:.6g} must lie in (0, 1/2)", eta=eta)
    return inverse_regularized_beta((n - 1) / 2, 0.5, 2 * eta)


def sbar_from_eta(n: int, eta: float) -> float:
    """``sbar = sqrt(1 - Itilde_{(n-1)/2, 1/2}(2 eta))``; requires ``0 < eta < 1/2``."""
    return math.sqrt(1 - cap_fraction(n, eta))


def epsilon_from_eta(n: int, eta: float) -> float:
    """``sqrt(sbar^-2 - 1)``, evaluated as ``sqrt(t / (1 - t))`` to avoid cancellation."""
    t = cap_fraction(n, eta)
    return math.sqrt(t / (1 - t))


def epsilon_curve(Ns, k, beta, mode=EXACT):
    """Risk levels along a sample-size grid."""
    return np.array([epsilon_bar(RiskQuery(int(N), k, beta, mode)) for N in Ns])
