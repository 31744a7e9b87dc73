"""Hierarchical logistic model for heads-tails and same-side bias.

For a flip of coin j by person k that started on side s (+1 heads, -1 tails)

    logit Pr(heads) = logit(alpha_j) + s * logit(beta_k),
    logit(alpha_j) = logit(alpha_mu) + sigma_alpha * z_alpha_j,
    logit(beta_k)  = logit(beta_mu)  + sigma_beta  * z_beta_k,

with standard-normal z.  The likelihood only needs counts per
(coin, person, start side) cell.  A ``ModelSpec`` switches each of the four
components off by pinning it (alpha_mu or beta_mu at 1/2, sigma at 0).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit

from .flipdata import AggregateCell, FlipDataset, Side
from .mcmc import GlobalBlock, Move, PosteriorDraws, SamplerSettings, UnitBlock, sample
from .priors import BetaLocation, GammaScale, HalfNormalScale

__all__ = [
    "ModelSpec",
    "FULL_MODEL",
    "PriorSet",
    "CellData",
    "HierParams",
    "HierTarget",
    "SiteContrasts",
    "log_likelihood",
    "log_prior",
    "sample_posterior",
    "prob_scale_sd",
    "summarize_probability_scale",
    "orthonormal_contrasts",
    "fit_site_contrasts",
    "fit_report",
]

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


# -- model space -----------------------------------------------------------

@dataclass(frozen=True)
class ModelSpec:
    has_same_side_bias: bool = True
    has_heads_tails_bias: bool = True
    has_person_heterogeneity: bool = True
    has_coin_heterogeneity: bool = True

    @property
    def flags(self) -> tuple[bool, bool, bool, bool]:
        return (self.has_same_side_bias, self.has_heads_tails_bias,
                self.has_person_heterogeneity, self.has_coin_heterogeneity)

    @property
    def index(self) -> int:
        """Position 1..16 in the listing that starts with everything present."""
        ss, ht, ph, ch = self.flags
        return 1 + 8 * (not ss) + 4 * (not ht) + 2 * (not ph) + (not ch)

    @classmethod
    def from_index(cls, i: int) -> "ModelSpec":
        if not 1 <= i <= 16:
            raise ValueError(f"model index must be in 1..16, got {i}")
        b = i - 1
        return cls(not b & 8, not b & 4, not b & 2, not b & 1)

    @property
    def label(self) -> str:
        return f"M{self.index}"

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "same_side_bias": self.has_same_side_bias,
            "heads_tails_bias": self.has_heads_tails_bias,
            "person_heterogeneity": self.has_person_heterogeneity,
            "coin_heterogeneity": self.has_coin_heterogeneity,
        }


FULL_MODEL = ModelSpec()


@dataclass(frozen=True)
class PriorSet:
    """Priors for the four model components; locations on probabilities, scales on logit sds."""

    kind: str
    alpha_mu: object
    beta_mu: object
    sigma_alpha: object
    sigma_beta: object

    @classmethod
    def estimation(cls, half_normal_sd: float = 0.04) -> "PriorSet":
        return cls("estimation", BetaLocation(312, 312), BetaLocation(312, 312),
                   HalfNormalScale(half_normal_sd), HalfNormalScale(half_normal_sd))

    @classmethod
    def testing(cls) -> "PriorSet":
        return cls("testing", BetaLocation(5000, 5000), BetaLocation(5100, 4900, 0.5, 1.0),
                   GammaScale(4, 200), GammaScale(4, 200))

    def replace(self, **kw) -> "PriorSet":
        return replace(self, **kw)

    def describe(self) -> dict:
        return {"kind": self.kind, **{k: getattr(self, k).describe()
                                      for k in ("alpha_mu", "beta_mu", "sigma_alpha", "sigma_beta")}}


# -- data ------------------------------------------------------------------

@dataclass(frozen=True)
class CellData:
    """Sufficient statistics per (coin, person, start side) as parallel arrays."""

    coins: tuple[str, ...]
    persons: tuple[str, ...]
    person_site: tuple[str, ...]
    coin: np.ndarray
    person: np.ndarray
    sign: np.ndarray  # +1 started heads, -1 started tails
    n: np.ndarray
    h: np.ndarray

    @classmethod
    def from_dataset(cls, d: FlipDataset) -> "CellData":
        P = len(d.persons)
        key = (d.coin.astype(np.int64) * P + d.person) * 2 + d.start_heads.astype(np.int64)
        keys, inv = np.unique(key, return_inverse=True)
        n = np.bincount(inv).astype(float)
        h = np.bincount(inv, weights=d.landed_heads.astype(float))
        return cls(d.coins, d.persons, d.person_site, keys // 2 // P, keys // 2 % P,
                   np.where(keys % 2 == 1, 1.0, -1.0), n, h)

    @classmethod
    def from_cells(cls, cells: Sequence[AggregateCell], person_site: Optional[dict] = None) -> "CellData":
        coins = tuple(dict.fromkeys(c.coin_id for c in cells))
        persons = tuple(dict.fromkeys(c.person_id for c in cells))
        ci = {c: i for i, c in enumerate(coins)}
        pi = {p: i for i, p in enumerate(persons)}
        sites = tuple((person_site or {}).get(p, "") for p in persons)
        return cls(
            coins, persons, sites,
            np.array([ci[c.coin_id] for c in cells], dtype=np.int64),
            np.array([pi[c.person_id] for c in cells], dtype=np.int64),
            np.array([1.0 if c.start is Side.HEADS else -1.0 for c in cells]),
            np.array([c.n_trials for c in cells], dtype=float),
            np.array([c.n_heads for c in cells], dtype=float),
        )

    @property
    def n_total(self) -> float:
        return float(self.n.sum())

    @property
    def same(self) -> np.ndarray:
        return np.where(self.sign > 0, self.h, self.n - self.h)

    def person_same_counts(self) -> tuple[np.ndarray, np.ndarray]:
        K = len(self.persons)
        return (np.bincount(self.person, self.same, K), np.bincount(self.person, self.n, K))

    def coin_heads_counts(self) -> tuple[np.ndarray, np.ndarray]:
        J = len(self.coins)
        return np.bincount(self.coin, self.h, J), np.bincount(self.coin, self.n, J)


def _as_cells(data) -> CellData:
    if isinstance(data, CellData):
        return data
    if isinstance(data, FlipDataset):
        return CellData.from_dataset(data)
    return CellData.from_cells(list(data))


def _cell_loglik(mu: np.ndarray, n: np.ndarray, h: np.ndarray) -> np.ndarray:
    # h log sigmoid(mu) + (n-h) log sigmoid(-mu) = h mu - n softplus(mu)
    return h * mu - n * (np.maximum(mu, 0.0) + np.log1p(np.exp(-np.abs(mu))))


# -- direct evaluation -----------------------------------------------------

@dataclass
class HierParams:
    alpha_mu: float = 0.5
    beta_mu: float = 0.5
    gamma_alpha: np.ndarray = field(default_factory=lambda: np.zeros(0))
    gamma_beta: np.ndarray = field(default_factory=lambda: np.zeros(0))
    sigma_alpha: float = 0.0
    sigma_beta: float = 0.0


def _logit(p: float) -> float:
    return math.log(p) - math.log1p(-p)


def log_likelihood(p: HierParams, data) -> float:
    """Bernoulli log likelihood of all flips, evaluated on aggregated cells."""
    c = _as_cells(data)
    ga = np.asarray(p.gamma_alpha, dtype=float)
    gb = np.asarray(p.gamma_beta, dtype=float)
    if ga.size == 0:
        ga = np.zeros(len(c.coins))
    if gb.size == 0:
        gb = np.zeros(len(c.persons))
    if ga.size != len(c.coins) or gb.size != len(c.persons):
        raise ValueError("offset vectors must have one entry per coin / person")
    mu = _logit(p.alpha_mu) + ga[c.coin] + c.sign * (_logit(p.beta_mu) + gb[c.person])
    out = float(np.sum(_cell_loglik(mu, c.n, c.h)))
    if not math.isfinite(out):
        raise FloatingPointError("non-finite log likelihood")
    return out


def _normal_offsets_logpdf(gamma: np.ndarray, sigma: float) -> float:
    if not sigma > 0:
        return -math.inf
    g = np.asarray(gamma, dtype=float)
    return float(np.sum(-0.5 * (g / sigma) ** 2 - math.log(sigma) - _HALF_LOG_2PI))


def log_prior(p: HierParams, priors: PriorSet, spec: ModelSpec = FULL_MODEL) -> float:
    """Sum of component log densities; pinned components contribute nothing."""
    out = 0.0
    if spec.has_heads_tails_bias:
        out += float(_loc_logpdf(priors.alpha_mu, p.alpha_mu))
    if spec.has_same_side_bias:
        out += float(_loc_logpdf(priors.beta_mu, p.beta_mu))
    if spec.has_coin_heterogeneity:
        if not p.sigma_alpha > 0:
            return -math.inf
        out += float(priors.sigma_alpha.logpdf(p.sigma_alpha)) + _normal_offsets_logpdf(p.gamma_alpha, p.sigma_alpha)
    if spec.has_person_heterogeneity:
        if not p.sigma_beta > 0:
            return -math.inf
        out += float(priors.sigma_beta.logpdf(p.sigma_beta)) + _normal_offsets_logpdf(p.gamma_beta, p.sigma_beta)
    return out


def _loc_logpdf(comp, prob: float) -> float:
    if hasattr(comp, "logpdf"):
        return comp.logpdf(prob)
    # priors stated on logit(p): change variables to p
    y = _logit(prob)
    v = comp.from_logit(y)
    dv = 1e-6
    jac = abs((comp.to_logit(v + dv) - comp.to_logit(v - dv)) / (2 * dv))
    return float(comp.log_density_v(v)) - math.log(jac) - math.log(prob * (1 - prob))


# -- sampling target -------------------------------------------------------

def orthonormal_contrasts(n: int) -> np.ndarray:
    """n x (n-1) matrix with orthonormal, zero-sum columns (normalized Helmert)."""
    if n < 2:
        raise ValueError("need at least two levels")
    C = np.zeros((n, n - 1))
    for j in range(1, n):
        C[:j, j - 1] = 1.0
        C[j, j - 1] = -float(j)
        C[:, j - 1] /= math.sqrt(j * (j + 1))
    return C


class HierTarget:
    """Unconstrained log posterior for one ``ModelSpec`` on cell data."""

    def __init__(self, data, spec: ModelSpec, priors: PriorSet,
                 site_index: Optional[np.ndarray] = None, site_prior_sd: float = 0.2):
        self.data = c = _as_cells(data)
        self.spec, self.priors = spec, priors
        self.J, self.K = len(c.coins), len(c.persons)
        self.site_index = None if site_index is None else np.asarray(site_index, dtype=np.int64)
        self.site_prior_sd = site_prior_sd
        layout: dict[str, np.ndarray] = {}
        n = 0

        def add(name, size=1):
            nonlocal n
            layout[name] = np.arange(n, n + size)
            n += size

        if spec.has_heads_tails_bias:
            add("v_alpha")
        if spec.has_same_side_bias:
            add("v_beta")
        if self.site_index is not None:
            self.n_sites = int(self.site_index.max()) + 1
            self.contrast = orthonormal_contrasts(self.n_sites)
            add("d_site", self.n_sites - 1)
        loc_idx = np.arange(n)
        if spec.has_coin_heterogeneity:
            add("u_alpha")
        if spec.has_person_heterogeneity:
            add("u_beta")
        if spec.has_coin_heterogeneity:
            add("z_alpha", self.J)
        if spec.has_person_heterogeneity:
            add("z_beta", self.K)
        self.layout, self.dim = layout, n

        self.blocks = []
        if len(loc_idx):
            self.blocks.append(GlobalBlock(loc_idx, "locations"))
        for key in ("u_alpha", "u_beta"):
            if key in layout:
                self.blocks.append(GlobalBlock(layout[key], key.replace("u_", "sigma_")))
        if spec.has_person_heterogeneity:
            self.blocks.append(UnitBlock(layout["z_beta"][:, None], self._person_unit_logp, "persons"))
        if spec.has_coin_heterogeneity:
            self.blocks.append(UnitBlock(layout["z_alpha"][:, None], self._coin_unit_logp, "coins"))
        self.moves = []
        for loc_key, u_key, z_key, comp, tag in (
            ("v_beta", "u_beta", "z_beta", priors.beta_mu, "beta"),
            ("v_alpha", "u_alpha", "z_alpha", priors.alpha_mu, "alpha"),
        ):
            if u_key in layout:
                self.moves.append(Move(self._scale_move(layout[u_key], layout[z_key]), f"scale_{tag}",
                                       prior_only=True))
                if loc_key in layout:
                    self.moves.append(Move(self._shift_move(layout[loc_key], layout[u_key], layout[z_key], comp),
                                           f"shift_{tag}", 0.1, prior_only=True))

        names = ["alpha_mu", "beta_mu", "sigma_alpha", "sigma_beta", "sd_alpha_prob", "sd_beta_prob"]
        names += [f"alpha[{x}]" for x in c.coins] + [f"beta[{x}]" for x in c.persons]
        if self.site_index is not None:
            names += [f"delta[{i}]" for i in range(self.n_sites)]
        self.derived_names = names

    # pieces of the state, vectorized over leading axes
    def _parts(self, th: np.ndarray):
        L = self.layout
        th = np.asarray(th, dtype=float)
        lead = th.shape[:-1]
        zero = np.zeros(lead)
        la = self.priors.alpha_mu.to_logit(th[..., L["v_alpha"][0]]) if "v_alpha" in L else zero
        lb = self.priors.beta_mu.to_logit(th[..., L["v_beta"][0]]) if "v_beta" in L else zero
        sa = np.exp(th[..., L["u_alpha"][0]]) if "u_alpha" in L else zero
        sb = np.exp(th[..., L["u_beta"][0]]) if "u_beta" in L else zero
        za = th[..., L["z_alpha"]] if "z_alpha" in L else np.zeros(lead + (self.J,))
        zb = th[..., L["z_beta"]] if "z_beta" in L else np.zeros(lead + (self.K,))
        return la, lb, sa, sb, za, zb

    def _site_shift(self, th: np.ndarray) -> np.ndarray:
        if self.site_index is None:
            return 0.0
        d = th[..., self.layout["d_site"]]
        return (d @ self.contrast.T)[..., self.site_index]

    def _cells(self, th: np.ndarray) -> np.ndarray:
        c = self.data
        la, lb, sa, sb, za, zb = self._parts(th)
        person_logit = lb + sb * zb + self._site_shift(th)
        mu = la + sa * za[c.coin] + c.sign * person_logit[c.person]
        return _cell_loglik(mu, c.n, c.h)

    def _person_unit_logp(self, th: np.ndarray) -> np.ndarray:
        zb = th[self.layout["z_beta"]]
        return np.bincount(self.data.person, self._cells(th), self.K) - 0.5 * zb * zb

    def _coin_unit_logp(self, th: np.ndarray) -> np.ndarray:
        za = th[self.layout["z_alpha"]]
        return np.bincount(self.data.coin, self._cells(th), self.J) - 0.5 * za * za

    def log_prior_v(self, th: np.ndarray) -> float:
        L, p = self.layout, self.priors
        out = 0.0
        if "v_alpha" in L:
            out += float(p.alpha_mu.log_density_v(th[L["v_alpha"][0]]))
        if "v_beta" in L:
            out += float(p.beta_mu.log_density_v(th[L["v_beta"][0]]))
        if "u_alpha" in L:
            out += float(p.sigma_alpha.log_density_v(th[L["u_alpha"][0]]))
            out -= 0.5 * float(th[L["z_alpha"]] @ th[L["z_alpha"]]) + self.J * _HALF_LOG_2PI
        if "u_beta" in L:
            out += float(p.sigma_beta.log_density_v(th[L["u_beta"][0]]))
            out -= 0.5 * float(th[L["z_beta"]] @ th[L["z_beta"]]) + self.K * _HALF_LOG_2PI
        if "d_site" in L:
            d = th[L["d_site"]] / self.site_prior_sd
            out -= 0.5 * float(d @ d) + len(d) * (_HALF_LOG_2PI + math.log(self.site_prior_sd))
        return out

    def log_density(self, th: np.ndarray) -> float:
        lp = self.log_prior_v(th)
        if not math.isfinite(lp):
            return -math.inf
        ll = float(np.sum(self._cells(th)))
        return ll + lp if math.isfinite(ll) else -math.inf

    def log_likelihood_v(self, th: np.ndarray) -> float:
        return float(np.sum(self._cells(th)))

    @staticmethod
    def _scale_move(u_idx, z_idx):
        k = len(z_idx)

        def apply(th, eps):
            out = th.copy()
            out[u_idx] += eps
            out[z_idx] *= math.exp(-eps)
            return out, -k * eps
        return apply

    @staticmethod
    def _shift_move(v_idx, u_idx, z_idx, comp):
        def apply(th, eps):
            out = th.copy()
            before = float(comp.to_logit(out[v_idx[0]]))
            out[v_idx] += eps
            after = float(comp.to_logit(out[v_idx[0]]))
            out[z_idx] -= (after - before) / math.exp(out[u_idx[0]])
            return out, 0.0
        return apply

    # initial values and proposal scales
    def initial_point(self, rng: np.random.Generator) -> np.ndarray:
        L, p, c = self.layout, self.priors, self.data
        th = np.zeros(self.dim)
        if "v_alpha" in L:
            th[L["v_alpha"]] = p.alpha_mu.draw_v(rng)
        if "v_beta" in L:
            th[L["v_beta"]] = p.beta_mu.draw_v(rng)
        if "d_site" in L:
            th[L["d_site"]] = rng.normal(0.0, 0.01, len(L["d_site"]))
        la, lb, *_ = self._parts(th)
        if "u_alpha" in L:
            th[L["u_alpha"]] = np.clip(p.sigma_alpha.draw_v(rng), math.log(0.005), math.log(0.3))
            k, n = c.coin_heads_counts()
            emp = np.log((k + 0.5) / (n - k + 0.5))
            th[L["z_alpha"]] = np.clip((emp - la) / math.exp(th[L["u_alpha"][0]]), -3, 3) + rng.normal(0, 0.1, self.J)
        if "u_beta" in L:
            th[L["u_beta"]] = np.clip(p.sigma_beta.draw_v(rng), math.log(0.005), math.log(0.3))
            k, n = c.person_same_counts()
            emp = np.log((k + 0.5) / (n - k + 0.5))
            th[L["z_beta"]] = np.clip((emp - lb) / math.exp(th[L["u_beta"][0]]), -3, 3) + rng.normal(0, 0.1, self.K)
        return th

    def initial_scales(self) -> np.ndarray:
        L, p = self.layout, self.priors
        out = np.full(self.dim, 0.3)
        sd_logit = max(2.0 / math.sqrt(max(self.data.n_total, 1.0)), 0.002)
        for key, comp in (("v_alpha", p.alpha_mu), ("v_beta", p.beta_mu)):
            if key in L:
                v0 = comp.draw_v(np.random.default_rng(0))
                h = 1e-4
                slope = abs(float(comp.to_logit(v0 + h) - comp.to_logit(v0 - h))) / (2 * h)
                out[L[key]] = min(sd_logit / max(slope, 1e-12), 10.0)
        if "d_site" in L:
            out[L["d_site"]] = 0.01
        return out

    def derive(self, thetas: np.ndarray) -> np.ndarray:
        thetas = np.atleast_2d(thetas)
        la, lb, sa, sb, za, zb = self._parts(thetas)
        am, bm = expit(la), expit(lb)
        cols = [am, bm, sa, sb, prob_scale_sd(sa, am), prob_scale_sd(sb, bm)]
        coin = expit(la[:, None] + sa[:, None] * za)
        shift = self._site_shift(thetas) if self.site_index is not None else 0.0
        person = expit(lb[:, None] + sb[:, None] * zb + shift)
        out = [np.column_stack(cols), coin, person]
        if self.site_index is not None:
            site_logit = thetas[:, self.layout["d_site"]] @ self.contrast.T
            out.append(expit(lb[:, None] + site_logit) - bm[:, None])
        return np.concatenate(out, axis=1)


def sample_posterior(spec: ModelSpec, priors: PriorSet, cells, settings: SamplerSettings = SamplerSettings(),
                     site_index: Optional[np.ndarray] = None) -> PosteriorDraws:
    """MCMC draws for one model; the sampling target is kept on ``draws.target``."""
    target = HierTarget(cells, spec, priors, site_index=site_index)
    draws = sample(target, settings)
    draws.target = target
    return draws


# -- probability-scale summaries -------------------------------------------

def prob_scale_sd(sigma, p):
    """First-order spread on the probability scale: sigma * p * (1 - p)."""
    return np.asarray(sigma) * np.asarray(p) * (1.0 - np.asarray(p))


def _interval(x: np.ndarray) -> dict:
    lo, hi = np.quantile(x, [0.025, 0.975])
    return {"mean": float(np.mean(x)), "ci95": [float(lo), float(hi)]}


def summarize_probability_scale(draws: PosteriorDraws, method: str = "delta",
                                rng: Optional[np.random.Generator] = None, n_sim: int = 2000) -> dict:
    """Posterior summaries of Pr(heads), Pr(same side) and their between-unit spreads.

    ``method="delta"`` uses sigma * p * (1-p) at the draw's mean probability;
    ``method="simulate"`` draws ``n_sim`` new units per posterior draw and
    takes the standard deviation of their probabilities.
    """
    if method not in ("delta", "simulate"):
        raise ValueError("method must be 'delta' or 'simulate'")
    out = {}
    for tag, mean_key, sd_key in (("heads", "alpha_mu", "sigma_alpha"), ("same_side", "beta_mu", "sigma_beta")):
        p = draws.flat(mean_key)
        s = draws.flat(sd_key)
        if method == "delta":
            spread = prob_scale_sd(s, p)
        else:
            rng = rng or np.random.default_rng(0)
            z = rng.standard_normal((len(p), n_sim))
            lp = np.log(p) - np.log1p(-p)
            spread = expit(lp[:, None] + s[:, None] * z).std(axis=1)
        out[f"pr_{tag}"] = _interval(p)
        out[f"sd_{tag}"] = _interval(spread)
    return out


# -- site contrasts --------------------------------------------------------

@dataclass
class SiteContrasts:
    sites: list[str]
    contrast: np.ndarray
    delta: np.ndarray  # (draws, sites) probability-scale site effects
    persons_per_site: dict
    flagged: list[str]
    draws: PosteriorDraws

    def summary(self) -> dict:
        return {s: _interval(self.delta[:, i]) for i, s in enumerate(self.sites)}


def fit_site_contrasts(cells, site_map: Optional[dict] = None, priors: Optional[PriorSet] = None,
                       settings: SamplerSettings = SamplerSettings(), prior_sd: float = 0.2) -> SiteContrasts:
    """Full estimation model with an orthonormal sum-to-zero site effect on same-side bias."""
    c = _as_cells(cells)
    priors = priors or PriorSet.estimation()
    sites_of = [(site_map or {}).get(p, c.person_site[i]) for i, p in enumerate(c.persons)]
    sites = sorted(set(sites_of))
    if len(sites) < 2:
        raise ValueError("site contrasts need at least two sites")
    idx = np.array([sites.index(s) for s in sites_of])
    target = HierTarget(c, FULL_MODEL, priors, site_index=idx, site_prior_sd=prior_sd)
    draws = sample(target, settings)
    draws.target = target
    delta = np.column_stack([draws.flat(f"delta[{i}]") for i in range(len(sites))])
    counts = {s: int(np.sum(idx == i)) for i, s in enumerate(sites)}
    return SiteContrasts(sites, target.contrast, delta, counts,
                         [s for s, k in counts.items() if k == 1], draws)


def fit_report(draws: PosteriorDraws, spec: ModelSpec, priors: PriorSet, include_units: bool = False) -> dict:
    names = [n for n in draws.names if include_units or "[" not in n]
    return {
        "model_spec": spec.to_dict(),
        "priors": priors.describe(),
        "estimates": {n: _interval(draws.flat(n)) for n in names},
        "diagnostics": {"max_rhat": draws.max_rhat, "min_ess": draws.min_ess,
                        "warnings": list(draws.warnings)},
        "seed": draws.seed,
        "settings": draws.settings.to_dict(),
    }
