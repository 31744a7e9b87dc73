"""Prior components and the unconstrained parameterizations used for sampling.

Location components describe a probability parameter; the sampler works on an
unconstrained ``v`` and the likelihood consumes ``logit(p)``.  Scale
components describe a logit-scale standard deviation sampled as ``log sigma``.
Every ``log_density_v`` includes the log-Jacobian, so integrating its
exponential over ``v`` gives 1 (bridge sampling relies on that).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_expit, logit

from .numerics import DomainError, log_beta, log_beta_mass, log_gamma

__all__ = [
    "BetaLocation",
    "NormalMomentLocation",
    "NormalLocation",
    "HalfNormalScale",
    "GammaScale",
    "NormalMomentScale",
    "nm_logpdf_array",
]

_LOG_SQRT_PI = 0.5 * math.log(math.pi)
_LOG_2PI = math.log(2.0 * math.pi)


def nm_logpdf_array(x, phi: float, positive_only: bool = False) -> np.ndarray:
    """log of 2x^2/(sqrt(pi)|phi|^3) exp(-x^2/phi^2), doubled on x > 0 when truncated."""
    x = np.asarray(x, dtype=float)
    phi = abs(phi)
    with np.errstate(divide="ignore"):
        out = (math.log(2.0) + 2.0 * np.log(np.abs(x)) - _LOG_SQRT_PI - 3.0 * math.log(phi)
               - (x / phi) ** 2)
    if positive_only:
        out = np.where(x > 0, out + math.log(2.0), -np.inf)
    return out


# -- location components ---------------------------------------------------

@dataclass(frozen=True)
class BetaLocation:
    """Beta(a, b) on a probability, optionally truncated to [lower, upper].

    Sampled through p = lower + (upper - lower) * expit(v).
    """

    a: float
    b: float
    lower: float = 0.0
    upper: float = 1.0

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise DomainError("beta shapes must be positive")
        if not (0.0 <= self.lower < self.upper <= 1.0):
            raise DomainError("need 0 <= lower < upper <= 1")
        object.__setattr__(self, "_log_norm", log_beta(self.a, self.b) + (
            0.0 if (self.lower, self.upper) == (0.0, 1.0)
            else log_beta_mass(self.lower, self.upper, self.a, self.b)))

    @property
    def full(self) -> bool:
        return self.lower == 0.0 and self.upper == 1.0

    def prob(self, v):
        if self.full:
            return expit(v)
        return self.lower + (self.upper - self.lower) * expit(v)

    def to_logit(self, v):
        if self.full:
            return np.asarray(v, dtype=float)
        p = self.prob(v)
        return np.log(p) - np.log1p(-p)

    def from_logit(self, y):
        if self.full:
            return np.asarray(y, dtype=float)
        p = expit(y)
        return logit((p - self.lower) / (self.upper - self.lower))

    def logpdf(self, p):
        p = np.asarray(p, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = (self.a - 1) * np.log(p) + (self.b - 1) * np.log1p(-p) - self._log_norm
        return np.where((p >= self.lower) & (p <= self.upper) & (p > 0) & (p < 1), out, -np.inf)

    def log_density_v(self, v):
        # density of v: prior at p(v) times dp/dv
        if isinstance(v, (float, np.floating)):
            v = float(v)
            lv = -math.log1p(math.exp(-v)) if v > 0 else v - math.log1p(math.exp(v))
            if self.full:
                return self.a * lv + self.b * (lv - v) - self._log_norm
            w = self.upper - self.lower
            e = math.exp(lv)
            p = self.lower + w * e
            q = 1.0 - self.lower - w * e
            if not (0.0 < p < 1.0 and q > 0.0):
                return -math.inf
            return ((self.a - 1) * math.log(p) + (self.b - 1) * math.log(q) - self._log_norm
                    + math.log(w) + lv + (lv - v))
        v = np.asarray(v, dtype=float)
        lv, lmv = log_expit(v), log_expit(-v)
        if self.full:
            return (self.a * lv + self.b * lmv) - self._log_norm
        w = self.upper - self.lower
        p = self.prob(v)
        return ((self.a - 1) * np.log(p) + (self.b - 1) * np.log1p(-p) - self._log_norm
                + math.log(w) + lv + lmv)

    def draw_v(self, rng: np.random.Generator) -> float:
        for _ in range(1000):
            p = rng.beta(self.a, self.b)
            if self.lower < p < self.upper:
                return float(self.from_logit(math.log(p) - math.log1p(-p)))
        mid = 0.5 * (self.lower + self.upper)
        return float(self.from_logit(math.log(mid) - math.log1p(-mid)))

    def scale_hint(self) -> float:
        sd_p = math.sqrt(self.a * self.b / ((self.a + self.b) ** 2 * (self.a + self.b + 1)))
        m = self.a / (self.a + self.b)
        if self.full:
            return sd_p / (m * (1 - m))
        w = self.upper - self.lower
        q = min(max((m - self.lower) / w, 1e-3), 1 - 1e-3)
        return sd_p / (w * q * (1 - q))

    def describe(self) -> str:
        base = f"Beta({self.a:g}, {self.b:g})"
        return base if self.full else f"{base}[{self.lower:g}, {self.upper:g}]"


@dataclass(frozen=True)
class NormalLocation:
    """Normal(mean, sd) directly on logit(p)."""

    mean: float = 0.0
    sd: float = 1.0

    def __post_init__(self):
        if not self.sd > 0:
            raise DomainError("sd must be positive")

    def to_logit(self, v):
        return np.asarray(v, dtype=float)

    def from_logit(self, y):
        return np.asarray(y, dtype=float)

    def prob(self, v):
        return expit(v)

    def log_density_v(self, v):
        if not isinstance(v, (float, np.floating)):
            v = np.asarray(v, dtype=float)
        return -0.5 * ((v - self.mean) / self.sd) ** 2 - math.log(self.sd) - 0.5 * _LOG_2PI

    def draw_v(self, rng) -> float:
        return float(rng.normal(self.mean, self.sd))

    def scale_hint(self) -> float:
        return self.sd

    def describe(self) -> str:
        return f"Normal({self.mean:g}, {self.sd:g}) on logit"


@dataclass(frozen=True)
class NormalMomentLocation:
    """Normal-moment prior with mode ``phi`` on x = logit(p).

    With ``positive_only`` the prior lives on x > 0 and is sampled as v = log x.
    """

    phi: float
    positive_only: bool = False

    def __post_init__(self):
        if not self.phi > 0:
            raise DomainError("phi must be positive")

    def to_logit(self, v):
        v = np.asarray(v, dtype=float)
        return np.exp(v) if self.positive_only else v

    def from_logit(self, y):
        y = np.asarray(y, dtype=float)
        return np.log(y) if self.positive_only else y

    def prob(self, v):
        return expit(self.to_logit(v))

    def log_density_v(self, v):
        v = np.asarray(v, dtype=float)
        if self.positive_only:
            return nm_logpdf_array(np.exp(v), self.phi, True) + v
        return nm_logpdf_array(v, self.phi, False)

    def draw_v(self, rng) -> float:
        # |x| has the chi(3) law scaled by phi / sqrt(2)
        x = self.phi / math.sqrt(2.0) * math.sqrt(rng.chisquare(3))
        if self.positive_only:
            return math.log(x)
        return x if rng.random() < 0.5 else -x

    def scale_hint(self) -> float:
        return 0.5 if self.positive_only else 0.5 * self.phi

    def describe(self) -> str:
        return f"NormalMoment({self.phi:g}{', x>0' if self.positive_only else ''}) on logit"


# -- scale components ------------------------------------------------------

class _ScaleBase:
    def logpdf(self, sigma):  # pragma: no cover - overridden
        raise NotImplementedError

    def log_density_v(self, u):
        if isinstance(u, (float, np.floating)):
            return self._scalar_density_v(float(u))
        u = np.asarray(u, dtype=float)
        return self.logpdf(np.exp(u)) + u

    def _scalar_density_v(self, u: float) -> float:
        return float(self.logpdf(math.exp(u))) + u

    def sigma(self, u):
        return np.exp(u)


@dataclass(frozen=True)
class HalfNormalScale(_ScaleBase):
    sd: float

    def __post_init__(self):
        if not self.sd > 0:
            raise DomainError("sd must be positive")

    def _scalar_density_v(self, u: float) -> float:
        if u > 700.0:
            return -math.inf
        z = math.exp(u) / self.sd
        return math.log(2.0) - 0.5 * _LOG_2PI - math.log(self.sd) - 0.5 * z * z + u

    def logpdf(self, sigma):
        s = np.asarray(sigma, dtype=float)
        out = math.log(2.0) - 0.5 * _LOG_2PI - math.log(self.sd) - 0.5 * (s / self.sd) ** 2
        return np.where(s >= 0, out, -np.inf)

    def draw_v(self, rng) -> float:
        return math.log(abs(rng.normal(0.0, self.sd)) + 1e-12)

    def describe(self) -> str:
        return f"HalfNormal({self.sd:g})"


@dataclass(frozen=True)
class GammaScale(_ScaleBase):
    shape: float
    rate: float

    def __post_init__(self):
        if not (self.shape > 0 and self.rate > 0):
            raise DomainError("gamma parameters must be positive")
        object.__setattr__(self, "_log_norm", self.shape * math.log(self.rate) - float(log_gamma(self.shape)))

    def _scalar_density_v(self, u: float) -> float:
        if u > 700.0:
            return -math.inf
        return self._log_norm + self.shape * u - self.rate * math.exp(u)

    def logpdf(self, sigma):
        s = np.asarray(sigma, dtype=float)
        with np.errstate(divide="ignore"):
            out = (self._log_norm
                   + (self.shape - 1) * np.log(s) - self.rate * s)
        return np.where(s > 0, out, -np.inf)

    def draw_v(self, rng) -> float:
        return math.log(rng.gamma(self.shape, 1.0 / self.rate))

    def describe(self) -> str:
        return f"Gamma({self.shape:g}, rate={self.rate:g})"


@dataclass(frozen=True)
class NormalMomentScale(_ScaleBase):
    """Positive-truncated normal-moment prior on a standard deviation."""

    phi: float

    def __post_init__(self):
        if not self.phi > 0:
            raise DomainError("phi must be positive")

    def logpdf(self, sigma):
        return nm_logpdf_array(sigma, self.phi, True)

    def draw_v(self, rng) -> float:
        return math.log(self.phi / math.sqrt(2.0) * math.sqrt(rng.chisquare(3)))

    def describe(self) -> str:
        return f"NormalMoment({self.phi:g}, x>0)"
