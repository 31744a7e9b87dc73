"""Normal-moment priors and Bayes factor functions over their mode.

A normal-moment prior with mode phi has density

    p(x | phi) = 2 x^2 / (sqrt(pi) |phi|^3) * exp(-x^2 / phi^2),

doubled on x > 0 when truncated.  It vanishes at the null value, so tracing
the Bayes factor as phi varies shows which effect sizes the data support.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence, TextIO

import numpy as np
from scipy import integrate
from scipy.optimize import minimize_scalar
from scipy.special import expit

from .bma import BridgeSettings, enumerate_models, log_inclusion_bf, posterior_model_probs, run_bma, INCLUSION_COMPONENTS
from .hier import PriorSet, _as_cells
from .mcmc import SamplerSettings
from .priors import NormalMomentLocation, NormalMomentScale, nm_logpdf_array

__all__ = [
    "NormalMomentPrior",
    "BFFGrid",
    "QuadratureError",
    "DEFAULT_PHI_GRID",
    "DEFAULT_FIXED_PHIS",
    "nm_logpdf",
    "bff_nonhier",
    "bff_hier",
    "write_bff_csv",
]

DEFAULT_PHI_GRID = np.round(np.linspace(0.005, 0.08, 16), 6)
DEFAULT_FIXED_PHIS = {"same_side": 0.04, "heads_tails": 0.04, "person_het": 0.02, "coin_het": 0.02}


class QuadratureError(RuntimeError):
    pass


@dataclass(frozen=True)
class NormalMomentPrior:
    phi: float
    positive_only: bool = False

    def __post_init__(self):
        if not self.phi > 0:
            raise ValueError("phi must be positive")


def nm_logpdf(x, prior: NormalMomentPrior):
    """Log density; ``-inf`` at 0 and, when truncated, for x <= 0."""
    out = nm_logpdf_array(x, prior.phi, prior.positive_only)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class BFFGrid:
    """Bayes factors over a strictly increasing grid of prior modes.

    ``log_bf`` is natural-log; failed grid points hold NaN with the reason in
    ``errors``.
    """

    phi: np.ndarray
    log_bf: np.ndarray
    kind: str
    errors: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.phi) != len(self.log_bf):
            raise ValueError("phi and log_bf lengths differ")
        if np.any(np.diff(self.phi) <= 0):
            raise ValueError("phi grid must be strictly increasing")

    @property
    def mode_probability(self) -> np.ndarray:
        return expit(self.phi)

    @property
    def log10_bf(self) -> np.ndarray:
        return self.log_bf / math.log(10.0)

    def argmax(self) -> int:
        return int(np.nanargmax(self.log_bf))

    @property
    def max_log10_bf(self) -> float:
        return float(self.log10_bf[self.argmax()])

    def rows(self, include_null: bool = True) -> list[tuple[float, float, float]]:
        """(phi, mode_probability, log10_bf) rows; the phi = 0 limit has BF = 1."""
        out = [(0.0, 0.5, 0.0)] if include_null else []
        out += [(float(p), float(m), float(b)) for p, m, b in zip(self.phi, self.mode_probability, self.log10_bf)]
        return out


def write_bff_csv(grid: BFFGrid, stream: TextIO) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(("phi", "mode_probability", "log10_bf"))
    for p, m, b in grid.rows():
        w.writerow((f"{p:.6g}", f"{m:.6f}", "nan" if math.isnan(b) else f"{b:.6f}"))


# -- nonhierarchical ---------------------------------------------------------

def _log_nm_bf(k: int, n: int, phi: float, positive_only: bool) -> float:
    """log of the integral of L(x)/L(0) * NM(x | phi) dx for a binomial likelihood on x = logit(p)."""

    def g(x):
        x = np.asarray(x, dtype=float)
        ll = -k * np.logaddexp(0.0, -x) - (n - k) * np.logaddexp(0.0, x) + n * math.log(2.0)
        return ll + nm_logpdf_array(x, phi, positive_only)

    p_hat = min(max(k / n, 0.5 / n), 1 - 0.5 / n)
    x_hat = math.log(p_hat) - math.log1p(-p_hat)
    sd = 1.0 / math.sqrt(n * p_hat * (1 - p_hat))
    lo = min(x_hat - 40 * sd, -6 * phi)
    hi = max(x_hat + 40 * sd, 6 * phi)
    if positive_only:
        lo = max(lo, 0.0)
        if hi <= 0:
            hi = 6 * phi
    # the prior can be far narrower than the likelihood, so scan both scales
    p_lo = 0.0 if positive_only else -6 * phi
    grid = np.unique(np.concatenate([np.linspace(lo, hi, 4001), np.linspace(p_lo, 6 * phi, 2001)]))
    vals = g(grid)
    top = float(np.max(vals))
    peaks = grid[1:-1][(vals[1:-1] >= vals[:-2]) & (vals[1:-1] >= vals[2:]) & (vals[1:-1] > top - 50)]
    if not len(peaks):
        peaks = grid[[int(np.argmax(vals))]]
    # refine the mode so the scale offset is close to the true maximum
    i = int(np.argmax(vals))
    a, b = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
    if b > a:
        r = minimize_scalar(lambda x: -float(g(x)), bounds=(a, b), method="bounded", options={"xatol": 1e-14})
        if -r.fun > top:
            top = float(-r.fun)
    # integrate only where the integrand is not negligible
    live = np.flatnonzero(vals > top - 80)
    lo = float(grid[max(live[0] - 1, 0)])
    hi = float(grid[min(live[-1] + 1, len(grid) - 1)])
    peaks = peaks[(peaks > lo) & (peaks < hi)]
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, _ = integrate.quad(lambda x: math.exp(min(float(g(x)) - top, 700.0)), lo, hi,
                                    points=list(peaks[:50]) or None, epsrel=1e-9, epsabs=0.0, limit=500)
        except integrate.IntegrationWarning as e:
            raise QuadratureError(f"quadrature failed at phi={phi}: {e}") from e
    if not val > 0:
        raise QuadratureError(f"zero integral at phi={phi}")
    return top + math.log(val)


def bff_nonhier(k: int, n: int, phi_grid: Optional[Sequence[float]] = None, kind: str = "same-side") -> BFFGrid:
    """Normal-moment Bayes factor against p = 1/2 for each prior mode in ``phi_grid``.

    ``same-side`` places the prior on logit(p) > 0 only; ``heads-tails`` is
    two-sided.
    """
    if kind not in ("same-side", "heads-tails"):
        raise ValueError("kind must be 'same-side' or 'heads-tails'")
    if not (0 <= k <= n and n > 0):
        raise ValueError("need 0 <= k <= n and n > 0")
    phis = np.asarray(DEFAULT_PHI_GRID if phi_grid is None else phi_grid, dtype=float)
    if np.any(phis <= 0):
        raise ValueError("grid modes must be positive (phi = 0 is the BF = 1 limit)")
    pos = kind == "same-side"
    return BFFGrid(phis, np.array([_log_nm_bf(k, n, float(p), pos) for p in phis]), kind)


# -- hierarchical --------------------------------------------------------------

_FIELD = {"same_side": "beta_mu", "heads_tails": "alpha_mu", "person_het": "sigma_beta", "coin_het": "sigma_alpha"}


def _nm_component(name: str, phi: float):
    if name == "same_side":
        return NormalMomentLocation(phi, positive_only=True)
    if name == "heads_tails":
        return NormalMomentLocation(phi, positive_only=False)
    return NormalMomentScale(phi)


def nm_testing_priors(fixed_phis: Optional[dict] = None) -> PriorSet:
    phis = {**DEFAULT_FIXED_PHIS, **(fixed_phis or {})}
    return PriorSet("normal-moment", **{_FIELD[k]: _nm_component(k, v) for k, v in phis.items()})


def bff_hier(phi_target: str, phi_grid: Optional[Sequence[float]] = None, fixed_phis: Optional[dict] = None,
             data=None, settings: SamplerSettings = SamplerSettings(), bridge: Optional[BridgeSettings] = None,
             *, allow_expensive: bool = False) -> BFFGrid:
    """Inclusion Bayes factor of one component as its normal-moment mode varies.

    The other components keep the fixed modes.  Models without the tested
    component do not depend on the grid, so they are fitted once; the models
    with it are refitted at every grid point.  A failed grid point is recorded
    and the rest of the grid continues.
    """
    if not allow_expensive:
        raise RuntimeError("bff_hier refits eight hierarchical models per grid point; pass allow_expensive=True")
    if phi_target not in _FIELD:
        raise ValueError(f"phi_target must be one of {sorted(_FIELD)}")
    cells = _as_cells(data)
    phis = np.asarray(DEFAULT_PHI_GRID if phi_grid is None else phi_grid, dtype=float)
    base = nm_testing_priors(fixed_phis)
    pred = INCLUSION_COMPONENTS[phi_target]
    specs = enumerate_models()
    without = [s for s in specs if not pred(s)]
    with_ = [s for s in specs if pred(s)]
    ref = run_bma(cells, base, settings, bridge, models=without)
    log_ml = {m.model.index: m.log_ml for m in ref.mls}
    out = np.full(len(phis), np.nan)
    errors = {}
    for i, phi in enumerate(phis):
        pri = base.replace(**{_FIELD[phi_target]: _nm_component(phi_target, float(phi))})
        try:
            res = run_bma(cells, pri, settings, bridge, models=with_)
            lm = dict(log_ml)
            lm.update({m.model.index: m.log_ml for m in res.mls})
            mp = posterior_model_probs([lm[s.index] for s in specs], None, specs)
            out[i] = log_inclusion_bf(mp, pred)
        except Exception as e:  # noqa: BLE001 - partial grids are allowed
            errors[float(phi)] = f"{type(e).__name__}: {e}"
    return BFFGrid(phis, out, phi_target, errors)
