"""Nonhierarchical binomial tests: informed Bayes factors and exact p-values."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .numerics import (
    DomainError,
    beta_quantile,
    log_beta,
    log_beta_mass,
    log_gamma,
    logsumexp,
    reg_inc_beta,
)

__all__ = [
    "DegeneratePriorError",
    "TruncatedBetaPrior",
    "BinomialTestResult",
    "SAME_SIDE_PRIOR",
    "HEADS_TAILS_PRIOR",
    "bf_informed_binomial",
    "bf_symmetric_binomial",
    "posterior_interval_uniform",
    "exact_binomial_p",
    "exact_binomial_logp",
]

LN10 = math.log(10.0)


class DegeneratePriorError(ValueError):
    pass


@dataclass(frozen=True)
class TruncatedBetaPrior:
    """Beta(a, b) restricted to [lower, upper] and renormalized."""

    a: float
    b: float
    lower: float = 0.0
    upper: float = 1.0

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise DomainError(f"shapes must be positive, got a={self.a}, b={self.b}")
        if not (0.0 <= self.lower < self.upper <= 1.0):
            raise DomainError(f"need 0 <= lower < upper <= 1, got [{self.lower}, {self.upper}]")

    def log_mass(self, a: float | None = None, b: float | None = None) -> float:
        a = self.a if a is None else a
        b = self.b if b is None else b
        if self.lower == 0.0 and self.upper == 1.0:
            return 0.0
        return log_beta_mass(self.lower, self.upper, a, b)

    def logpdf(self, x: float) -> float:
        if not (self.lower <= x <= self.upper) or x <= 0.0 or x >= 1.0:
            return -math.inf
        return ((self.a - 1.0) * math.log(x) + (self.b - 1.0) * math.log1p(-x)
                - log_beta(self.a, self.b) - self.log_mass())

    def describe(self) -> str:
        base = f"Beta({self.a:g}, {self.b:g})"
        if self.lower == 0.0 and self.upper == 1.0:
            return base
        return f"{base}[{self.lower:g}, {self.upper:g}]"


SAME_SIDE_PRIOR = TruncatedBetaPrior(5100.0, 4900.0, 0.5, 1.0)
HEADS_TAILS_PRIOR = TruncatedBetaPrior(5000.0, 5000.0)


@dataclass(frozen=True)
class BinomialTestResult:
    test: str
    k: int
    n: int
    log_bf10: float
    posterior_mean: float
    ci_low: float
    ci_high: float
    prior: str
    p_value: Optional[float] = None

    @property
    def bf10(self) -> float:
        return math.exp(self.log_bf10) if self.log_bf10 < 709.0 else math.inf

    @property
    def log10_bf10(self) -> float:
        return self.log_bf10 / LN10

    def to_dict(self) -> dict:
        out = {
            "test": self.test,
            "k": self.k,
            "n": self.n,
            "log10_bf10": self.log10_bf10,
            "bf10": self.bf10,
            "mean": self.posterior_mean,
            "ci95": [self.ci_low, self.ci_high],
            "prior": self.prior,
        }
        if self.p_value is not None:
            out["p_value"] = self.p_value
        return out


def _check_counts(k: int, n: int) -> None:
    if not (0 <= k <= n):
        raise DomainError(f"need 0 <= k <= N, got k={k}, N={n}")


def _truncated_summary(a: float, b: float, prior: TruncatedBetaPrior) -> tuple[float, float, float]:
    """Mean and central 95% interval of Beta(a, b) truncated to the prior's support."""
    lo, hi = prior.lower, prior.upper
    log_m = prior.log_mass(a, b)
    if lo == 0.0 and hi == 1.0:
        mean = a / (a + b)
        return mean, beta_quantile(0.025, a, b), beta_quantile(0.975, a, b)
    # E[x] over the interval uses the Beta(a+1, b) mass on the same interval
    mean = math.exp(log_beta(a + 1.0, b) - log_beta(a, b) + prior.log_mass(a + 1.0, b) - log_m)
    f_lo = 0.0 if lo == 0.0 else reg_inc_beta(lo, a, b)
    mass = math.exp(log_m)

    def q(p: float) -> float:
        target = min(max(f_lo + p * mass, 1e-300), 1.0 - 1e-16)
        return min(max(beta_quantile(target, a, b), lo), hi)

    return mean, q(0.025), q(0.975)


def bf_informed_binomial(k: int, n: int, prior: TruncatedBetaPrior = SAME_SIDE_PRIOR) -> BinomialTestResult:
    """Bayes factor for a (truncated) beta alternative against a point null at 1/2.

    log BF10 = log B(a+k, b+N-k) + log mass_post - log B(a, b) - log mass_prior - N log(1/2);
    the binomial coefficient is common to both marginals and never formed.
    """
    _check_counts(k, n)
    a, b = prior.a, prior.b
    log_mass_prior = prior.log_mass()
    if not math.isfinite(log_mass_prior):
        raise DegeneratePriorError(f"prior {prior.describe()} has no mass on its interval")
    a_post, b_post = a + k, b + n - k
    log_mass_post = prior.log_mass(a_post, b_post)
    log_bf = (log_beta(a_post, b_post) + log_mass_post - log_beta(a, b) - log_mass_prior
              + n * math.log(2.0))
    mean, lo, hi = _truncated_summary(a_post, b_post, prior)
    return BinomialTestResult("informed-binomial", k, n, log_bf, mean, lo, hi, prior.describe())


def bf_symmetric_binomial(h: int, n: int, a: float = 5000.0, b: float = 5000.0) -> BinomialTestResult:
    """Heads-tails test: Beta(a, b) alternative against Pr(heads) = 1/2."""
    _check_counts(h, n)
    a_post, b_post = a + h, b + n - h
    log_bf = log_beta(a_post, b_post) - log_beta(a, b) + n * math.log(2.0)
    mean = a_post / (a_post + b_post)
    return BinomialTestResult(
        "heads-tails-binomial", h, n, log_bf, mean,
        beta_quantile(0.025, a_post, b_post), beta_quantile(0.975, a_post, b_post),
        f"Beta({a:g}, {b:g})",
    )


def posterior_interval_uniform(k: int, n: int) -> tuple[float, float, float]:
    """Posterior mean and central 95% interval of a proportion under a uniform prior."""
    _check_counts(k, n)
    a, b = k + 1.0, n - k + 1.0
    return a / (a + b), beta_quantile(0.025, a, b), beta_quantile(0.975, a, b)


def _log_binom_pmf(n: int, p0: float) -> np.ndarray:
    i = np.arange(n + 1, dtype=float)
    return (log_gamma(float(n + 1)) - log_gamma(i + 1.0) - log_gamma(n - i + 1.0)
            + i * math.log(p0) + (n - i) * math.log1p(-p0))


def exact_binomial_logp(k: int, n: int, p0: float = 0.5) -> float:
    """Natural log of the two-sided exact p-value (minimum-likelihood method).

    Sums the probabilities of every outcome no more likely than the observed
    one, with a 1e-7 relative tolerance for ties.
    """
    _check_counts(k, n)
    if not (0.0 < p0 < 1.0):
        raise DomainError(f"p0 must lie in (0, 1), got {p0}")
    logp = _log_binom_pmf(n, p0)
    cutoff = logp[k] + math.log1p(1e-7)
    return min(0.0, logsumexp(logp[logp <= cutoff]))


def exact_binomial_p(k: int, n: int, p0: float = 0.5) -> float:
    return math.exp(exact_binomial_logp(k, n, p0))
