"""Special functions and quadrature rules.

Everything here works in log space where it matters; the beta-function
machinery has to stay finite for shape parameters in the hundreds of
thousands.
"""
from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np

__all__ = [
    "DomainError",
    "ConvergenceError",
    "QuadratureRule",
    "log_gamma",
    "log_beta",
    "log_reg_inc_beta",
    "reg_inc_beta",
    "log_beta_mass",
    "beta_quantile",
    "gauss_hermite",
    "log1mexp",
    "logdiffexp",
    "logsumexp",
]

CF_MAX_ITER = 1_000_000
CF_TOL = 1e-15


class DomainError(ValueError):
    """Argument outside the domain of a special function."""


class ConvergenceError(ArithmeticError):
    """An iterative evaluation failed to converge."""


# Bernoulli-number coefficients B_2k / (2k (2k-1)) of the Stirling series.
_STIRLING = (
    1.0 / 12.0,
    -1.0 / 360.0,
    1.0 / 1260.0,
    -1.0 / 1680.0,
    1.0 / 1188.0,
    -691.0 / 360360.0,
    1.0 / 156.0,
    -3617.0 / 122400.0,
)
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
_STIRLING_MIN = 10.0


def _log_gamma_array(x: np.ndarray) -> np.ndarray:
    x = x.astype(float, copy=True)
    shift = np.zeros_like(x)
    small = x < _STIRLING_MIN
    # recurrence: log G(x) = log G(x + n) - log(x (x+1) ... (x+n-1))
    while np.any(small):
        shift[small] += np.log(x[small])
        x[small] += 1.0
        small = x < _STIRLING_MIN
    inv = 1.0 / x
    inv2 = inv * inv
    series = np.zeros_like(x)
    for c in reversed(_STIRLING):
        series = series * inv2 + c
    series *= inv
    return (x - 0.5) * np.log(x) - x + _HALF_LOG_2PI + series - shift


def _stirling_delta(x: float) -> float:
    """log G(x) minus its Stirling approximation, for x >= 10."""
    inv = 1.0 / x
    inv2 = inv * inv
    series = 0.0
    for c in reversed(_STIRLING):
        series = series * inv2 + c
    return series * inv


def log_gamma(x):
    """Natural log of the gamma function for positive arguments.

    Accepts scalars or arrays. Stirling's series is used for x >= 10 and the
    upward recurrence below that, so relative accuracy is close to machine
    precision away from the roots at 1 and 2 (which are returned as exact 0).
    """
    arr = np.asarray(x, dtype=float)
    if np.any(~(arr > 0)) or np.any(~np.isfinite(arr)):
        raise DomainError(f"log_gamma requires finite x > 0, got {x!r}")
    out = _log_gamma_array(np.atleast_1d(arr))
    out[(np.atleast_1d(arr) == 1.0) | (np.atleast_1d(arr) == 2.0)] = 0.0
    if arr.ndim == 0:
        return float(out[0])
    return out.reshape(arr.shape)


def log_beta(a, b):
    """log B(a, b) = log G(a) + log G(b) - log G(a + b)."""
    a_ = np.asarray(a, dtype=float)
    b_ = np.asarray(b, dtype=float)
    if np.any(~(a_ > 0)) or np.any(~(b_ > 0)):
        raise DomainError(f"log_beta requires a, b > 0, got a={a!r}, b={b!r}")
    small, large = np.minimum(a_, b_), np.maximum(a_, b_)
    naive = log_gamma(a_) + log_gamma(b_) - log_gamma(a_ + b_)
    if not np.any(large >= _STIRLING_MIN):
        return naive
    # log G(L) - log G(L + s) from Stirling's series, avoiding the difference of two huge values
    L = np.maximum(large, _STIRLING_MIN)
    delta = np.vectorize(_stirling_delta, otypes=[float])
    diff = -(L - 0.5) * np.log1p(small / L) - small * np.log(L + small) + small + delta(L) - delta(L + small)
    out = np.where(large >= _STIRLING_MIN, log_gamma(small) + diff, naive)
    return float(out) if out.ndim == 0 else out


def log1mexp(x: float) -> float:
    """log(1 - exp(x)) for x <= 0, accurate across the whole range."""
    if x > 0:
        raise DomainError("log1mexp requires x <= 0")
    if x == 0:
        return -math.inf
    if x > -math.log(2.0):
        return math.log(-math.expm1(x))
    return math.log1p(-math.exp(x))


def logdiffexp(a: float, b: float) -> float:
    """log(exp(a) - exp(b)) for a >= b."""
    if b > a:
        raise DomainError("logdiffexp requires a >= b")
    if b == -math.inf:
        return a
    return a + log1mexp(b - a)


def logsumexp(values, weights=None) -> float:
    v = np.asarray(values, dtype=float)
    m = np.max(v)
    if not np.isfinite(m):
        return float(m)
    if weights is None:
        return float(m + np.log(np.sum(np.exp(v - m))))
    return float(m + np.log(np.sum(np.asarray(weights) * np.exp(v - m))))


def _betacf(x: float, a: float, b: float) -> float:
    """Modified Lentz evaluation of the incomplete-beta continued fraction."""
    tiny = 1e-300
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, CF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < CF_TOL:
            return h
    raise ConvergenceError(
        f"incomplete beta continued fraction did not converge (x={x}, a={a}, b={b})"
    )


def _check_beta_args(x: float, a: float, b: float) -> None:
    if not (a > 0 and b > 0) or not (math.isfinite(a) and math.isfinite(b)):
        raise DomainError(f"shape parameters must be positive, got a={a}, b={b}")
    if not (0.0 <= x <= 1.0):
        raise DomainError(f"x must lie in [0, 1], got {x}")


def _log_beta_kernel(x: float, a: float, b: float) -> float:
    """log[x^a (1-x)^b / B(a, b)] without the cancellation of the naive form."""
    if a < _STIRLING_MIN or b < _STIRLING_MIN:
        return a * math.log(x) + b * math.log1p(-x) - log_beta(a, b)
    n = a + b
    x0 = a / n
    # a log(x/x0) + b log((1-x)/(1-x0)), each a log1p of a small relative step
    ra, rb = (x - x0) / x0, (x0 - x) / (1.0 - x0)
    la = math.log1p(ra) if abs(ra) < 0.5 else math.log(x) - math.log(x0)
    lb = math.log1p(rb) if abs(rb) < 0.5 else math.log1p(-x) - math.log1p(-x0)
    core = a * la + b * lb
    return (
        core
        + 0.5 * math.log(a * b / (2.0 * math.pi * n))
        - _stirling_delta(a)
        - _stirling_delta(b)
        + _stirling_delta(n)
    )


def _log_tails(x: float, a: float, b: float) -> tuple[float, float]:
    """Return (log I_x(a,b), log(1 - I_x(a,b)))."""
    if x == 0.0:
        return -math.inf, 0.0
    if x == 1.0:
        return 0.0, -math.inf
    log_front = _log_beta_kernel(x, a, b)
    if x < (a + 1.0) / (a + b + 2.0):
        lower = log_front + math.log(_betacf(x, a, b)) - math.log(a)
        return lower, log1mexp(min(lower, 0.0))
    upper = log_front + math.log(_betacf(1.0 - x, b, a)) - math.log(b)
    return log1mexp(min(upper, 0.0)), upper


def log_reg_inc_beta(x: float, a: float, b: float, upper: bool = False) -> float:
    """log I_x(a, b), or log(1 - I_x(a, b)) when ``upper`` is set.

    The tail that is not evaluated by the continued fraction is obtained via
    I_x(a,b) = 1 - I_{1-x}(b,a), so both tails keep full relative precision.
    """
    _check_beta_args(x, a, b)
    lower, upp = _log_tails(x, a, b)
    return upp if upper else lower


def reg_inc_beta(x: float, a: float, b: float) -> float:
    """Regularized incomplete beta function I_x(a, b)."""
    return math.exp(log_reg_inc_beta(x, a, b))


def log_beta_mass(lower: float, upper: float, a: float, b: float) -> float:
    """log of the Beta(a, b) probability of the interval [lower, upper]."""
    if not lower < upper:
        raise DomainError("interval must satisfy lower < upper")
    lo_l, lo_u = _log_tails(lower, a, b) if lower > 0 else (-math.inf, 0.0)
    up_l, up_u = _log_tails(upper, a, b) if upper < 1 else (0.0, -math.inf)
    if lo_u == 0.0:
        return up_l
    if up_l == 0.0:
        return lo_u
    # pick the representation that avoids cancellation
    if up_l < math.log(0.5):
        return logdiffexp(up_l, lo_l) if up_l > lo_l else -math.inf
    if lo_u < math.log(0.5):
        return logdiffexp(lo_u, up_u) if lo_u > up_u else -math.inf
    return math.log1p(-(math.exp(lo_l) + math.exp(up_u)))


def _beta_logpdf(x: float, a: float, b: float) -> float:
    return (a - 1.0) * math.log(x) + (b - 1.0) * math.log1p(-x) - log_beta(a, b)


def beta_quantile(q: float, a: float, b: float, tol: float = 4e-16) -> float:
    """Inverse of the Beta(a, b) CDF by bracketed Newton iteration in log space.

    The lower tail is matched for q <= 1/2 and the upper tail otherwise, so
    extreme quantiles keep relative precision.  Stops when the Newton step is
    below ``tol`` relative to x.
    """
    if not (0.0 < q < 1.0):
        raise DomainError(f"q must lie in (0, 1), got {q}")
    if not (a > 0 and b > 0):
        raise DomainError(f"shape parameters must be positive, got a={a}, b={b}")
    upper = q > 0.5
    target = math.log1p(-q) if upper else math.log(q)
    sign = -1.0 if upper else 1.0  # h(x) below is increasing after multiplying by sign
    lo, hi = 0.0, 1.0
    mean = a / (a + b)
    sd = math.sqrt(a * b / ((a + b) ** 2 * (a + b + 1.0)))
    z = math.sqrt(2.0) * _erfinv(2.0 * q - 1.0)
    x = min(max(mean + z * sd, 1e-300), 1.0 - 1e-16)
    for _ in range(2000):
        low_tail, up_tail = _log_tails(x, a, b)
        tail = up_tail if upper else low_tail
        h = sign * (tail - target)
        if h == 0.0:
            return x
        if h > 0:
            hi = x
        else:
            lo = x
        # d/dx log I = pdf / I, d/dx log(1 - I) = -pdf / (1 - I)
        if tail > -math.inf:
            step = h * math.exp(min(tail - _beta_logpdf(x, a, b), 700.0))
        else:
            step = math.inf
        x_new = x - step
        if not (lo < x_new < hi) or not math.isfinite(x_new):
            x_new = 0.5 * (lo + hi)
        elif abs(step) <= tol * x:
            return x_new
        if hi - lo <= tol * max(x_new, 1e-300):
            return x_new
        x = x_new
    raise ConvergenceError(f"beta_quantile failed for q={q}, a={a}, b={b}")


def _erfinv(y: float) -> float:
    # Giles' single-precision approximation; only used to seed Newton.
    y = min(max(y, -1.0 + 1e-16), 1.0 - 1e-16)
    w = -math.log((1.0 - y) * (1.0 + y))
    if w < 5.0:
        w -= 2.5
        p = 2.81022636e-08
        for c in (3.43273939e-07, -3.5233877e-06, -4.39150654e-06, 0.00021858087,
                  -0.00125372503, -0.00417768164, 0.246640727, 1.50140941):
            p = c + p * w
    else:
        w = math.sqrt(w) - 3.0
        p = -0.000200214257
        for c in (0.000100950558, 0.00134934322, -0.00367342844, 0.00573950773,
                  -0.0076224613, 0.00943887047, 1.00167406, 2.83297682):
            p = c + p * w
    return p * y


@dataclass(frozen=True)
class QuadratureRule:
    nodes: np.ndarray
    weights: np.ndarray
    kind: str = "gauss-hermite"

    def __post_init__(self):
        if len(self.nodes) != len(self.weights):
            raise ValueError("nodes and weights must have equal length")

    def integrate(self, f) -> float:
        """Sum of weights * f(nodes); f must accept an array."""
        return float(np.sum(self.weights * f(self.nodes)))


def _orthonormal_hermite(x: np.ndarray, m: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Values of the orthonormal Hermite functions phi_{m-1}, phi_m and sum phi_k^2, k < m."""
    p_prev = np.zeros_like(x)
    p = np.full_like(x, math.pi ** -0.25)
    total = p * p
    for k in range(1, m + 1):
        p_next = math.sqrt(2.0 / k) * x * p - math.sqrt((k - 1.0) / k) * p_prev
        p_prev, p = p, p_next
        if k < m:
            total = total + p * p
    return p_prev, p, total


def gauss_hermite(m: int) -> QuadratureRule:
    """Gauss-Hermite rule for the weight exp(-x^2) with ``m`` nodes.

    Nodes come from the eigenvalues of the Jacobi matrix (Golub-Welsch), then
    get a few Newton polishing steps; weights use the Christoffel-function
    form 1 / sum_k phi_k(x)^2, which stays positive for every node.
    """
    if not isinstance(m, (int, np.integer)) or not (1 <= m <= 200):
        raise DomainError(f"gauss_hermite needs 1 <= m <= 200, got {m!r}")
    m = int(m)
    if m == 1:
        return QuadratureRule(np.array([0.0]), np.array([math.sqrt(math.pi)]))
    off = np.sqrt(np.arange(1, m) / 2.0)
    jacobi = np.diag(off, 1) + np.diag(off, -1)
    x = np.linalg.eigvalsh(jacobi)
    for _ in range(3):
        p_m1, p_m, _ = _orthonormal_hermite(x, m)
        x = x - p_m / (math.sqrt(2.0 * m) * p_m1)
    x = 0.5 * (x - x[::-1])  # enforce exact symmetry
    if m % 2 == 1:
        x[m // 2] = 0.0
    _, _, total = _orthonormal_hermite(x, m)
    return QuadratureRule(x, 1.0 / total)
