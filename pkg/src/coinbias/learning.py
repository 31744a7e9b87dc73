"""Power-law learning extension of the hierarchical model.

The same-side term for person k at scaled time t becomes

    logit(theta_k) + logit(lambda_k) * t ** rho_k,

so logit Pr(heads) = logit(alpha_j) +/- that term depending on the start side.
Flips are grouped into batches of about 100 consecutive flips of one
person-coin run, each carrying its mean flip index divided by 1000 as ``t``.
Person offsets for theta, lambda and rho and coin offsets for alpha are
normal with their own scales and are sampled non-centered.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, TextIO

import numpy as np
from scipy.special import expit

from .flipdata import FlipDataset
from .hier import _cell_loglik, prob_scale_sd
from .mcmc import GlobalBlock, Move, PosteriorDraws, SamplerSettings, UnitBlock, sample
from .priors import BetaLocation, HalfNormalScale, NormalLocation

__all__ = [
    "Batch",
    "BatchData",
    "LearningParams",
    "LearningPriors",
    "LearningTarget",
    "T_FLOOR",
    "make_batches",
    "log_likelihood_learning",
    "fit_learning",
    "learning_summary",
    "learning_curve",
    "write_curve_csv",
]

T_FLOOR = 1e-6
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class Batch:
    person_id: str
    coin_id: str
    t: float
    n_H: int
    h_H: int
    n_T: int
    h_T: int

    @property
    def size(self) -> int:
        return self.n_H + self.n_T


@dataclass(frozen=True)
class BatchData:
    persons: tuple[str, ...]
    coins: tuple[str, ...]
    person: np.ndarray
    coin: np.ndarray
    t: np.ndarray
    n_H: np.ndarray
    h_H: np.ndarray
    n_T: np.ndarray
    h_T: np.ndarray

    @classmethod
    def from_batches(cls, batches: Sequence[Batch]) -> "BatchData":
        persons = tuple(dict.fromkeys(b.person_id for b in batches))
        coins = tuple(dict.fromkeys(b.coin_id for b in batches))
        pi = {p: i for i, p in enumerate(persons)}
        ci = {c: i for i, c in enumerate(coins)}
        col = lambda f: np.array([getattr(b, f) for b in batches], dtype=float)  # noqa: E731
        return cls(persons, coins, np.array([pi[b.person_id] for b in batches], dtype=np.int64),
                   np.array([ci[b.coin_id] for b in batches], dtype=np.int64),
                   col("t"), col("n_H"), col("h_H"), col("n_T"), col("h_T"))

    def __len__(self) -> int:
        return len(self.t)

    @property
    def log_t(self) -> np.ndarray:
        lt = self.__dict__.get("_log_t")
        if lt is None:
            lt = np.log(np.maximum(self.t, T_FLOOR))
            object.__setattr__(self, "_log_t", lt)
        return lt

    @property
    def n_total(self) -> float:
        return float(self.n_H.sum() + self.n_T.sum())

    def batches(self) -> list[Batch]:
        return [Batch(self.persons[p], self.coins[c], float(t), int(a), int(b), int(x), int(y))
                for p, c, t, a, b, x, y in zip(self.person, self.coin, self.t, self.n_H, self.h_H,
                                               self.n_T, self.h_T)]


def make_batches(d: FlipDataset, target_size: int = 100) -> list[Batch]:
    """Chunk every person-coin run into consecutive batches of ``target_size`` flips.

    A run is a maximal stretch of one person's flips (in flip-index order)
    made with the same coin; the last chunk of a run may be shorter.
    """
    if target_size < 1:
        raise ValueError("target_size must be positive")
    n = len(d)
    if n == 0:
        return []
    new_run = np.ones(n, dtype=bool)
    new_run[1:] = (d.person[1:] != d.person[:-1]) | (d.coin[1:] != d.coin[:-1])
    run_id = np.cumsum(new_run) - 1
    run_start = np.flatnonzero(new_run)
    pos = np.arange(n) - run_start[run_id]
    chunk = pos // target_size
    new_batch = new_run.copy()
    new_batch[1:] |= chunk[1:] != chunk[:-1]
    bid = np.cumsum(new_batch) - 1
    first = np.flatnonzero(new_batch)
    nb = len(first)
    sh = d.start_heads
    size = np.bincount(bid, minlength=nb)
    idx_sum = np.bincount(bid, weights=d.flip_index.astype(float), minlength=nb)
    n_h = np.bincount(bid, weights=sh, minlength=nb).astype(np.int64)
    h_h = np.bincount(bid, weights=sh & d.landed_heads, minlength=nb).astype(np.int64)
    h_t = np.bincount(bid, weights=~sh & d.landed_heads, minlength=nb).astype(np.int64)
    t = np.maximum(idx_sum / size / 1000.0, T_FLOOR)
    return [
        Batch(d.persons[d.person[i]], d.coins[d.coin[i]], float(t[b]), int(n_h[b]), int(h_h[b]),
              int(size[b] - n_h[b]), int(h_t[b]))
        for b, i in enumerate(first)
    ]


def _as_batches(batches) -> BatchData:
    if isinstance(batches, BatchData):
        return batches
    if isinstance(batches, FlipDataset):
        return BatchData.from_batches(make_batches(batches))
    return BatchData.from_batches(list(batches))


# -- direct evaluation -----------------------------------------------------

@dataclass
class LearningParams:
    alpha_mu: float = 0.5
    theta_mu: float = 0.5
    lambda_mu: float = 0.5
    rho_mu: float = 0.0
    gamma_alpha: np.ndarray = field(default_factory=lambda: np.zeros(0))
    gamma_theta: np.ndarray = field(default_factory=lambda: np.zeros(0))
    gamma_lambda: np.ndarray = field(default_factory=lambda: np.zeros(0))
    gamma_rho: np.ndarray = field(default_factory=lambda: np.zeros(0))
    sigma_alpha: float = 0.0
    sigma_theta: float = 0.0
    sigma_lambda: float = 0.0
    sigma_rho: float = 0.0


def _logit(p):
    p = np.asarray(p, dtype=float)
    return np.log(p) - np.log1p(-p)


def _batch_loglik(la, lt, ll, rho, b: BatchData) -> np.ndarray:
    """Per-batch log likelihood; arguments are per-coin / per-person arrays."""
    with np.errstate(over="ignore", invalid="ignore"):
        same = lt[b.person] + ll[b.person] * np.exp(rho[b.person] * b.log_t)
        a = la[b.coin]
        return _cell_loglik(a + same, b.n_H, b.h_H) + _cell_loglik(a - same, b.n_T, b.h_T)


def log_likelihood_learning(p: LearningParams, batches) -> float:
    b = _as_batches(batches)
    K, J = len(b.persons), len(b.coins)

    def vec(g, size):
        g = np.asarray(g, dtype=float)
        if g.size == 0:
            return np.zeros(size)
        if g.size != size:
            raise ValueError("offset vectors must have one entry per unit")
        return g

    la = _logit(p.alpha_mu) + vec(p.gamma_alpha, J)
    lt = _logit(p.theta_mu) + vec(p.gamma_theta, K)
    ll = _logit(p.lambda_mu) + vec(p.gamma_lambda, K)
    rho = p.rho_mu + vec(p.gamma_rho, K)
    out = float(np.sum(_batch_loglik(la, lt, ll, rho, b)))
    if not math.isfinite(out):
        raise FloatingPointError("non-finite learning-model log likelihood")
    return out


# -- priors and sampling target --------------------------------------------

@dataclass(frozen=True)
class LearningPriors:
    alpha_mu: object = BetaLocation(312, 312)
    theta_mu: object = BetaLocation(312, 312)
    lambda_mu: object = BetaLocation(312, 312)
    rho_mu: object = NormalLocation(0.0, 10.0)
    sigma_alpha: object = HalfNormalScale(0.04)
    sigma_theta: object = HalfNormalScale(0.04)
    sigma_lambda: object = HalfNormalScale(0.04)
    sigma_rho: object = HalfNormalScale(1.0)

    def describe(self) -> dict:
        return {k: getattr(self, k).describe() for k in self.__dataclass_fields__}


_LOCS = ("alpha", "theta", "lambda", "rho")


class LearningTarget:
    """Non-centered unconstrained posterior of the learning model."""

    def __init__(self, batches, priors: LearningPriors = LearningPriors()):
        self.data = b = _as_batches(batches)
        self.priors = priors
        self.K, self.J = len(b.persons), len(b.coins)
        self.dim = 8 + self.J + 3 * self.K
        # layout: v_alpha v_theta v_lambda rho_mu | u_alpha u_theta u_lambda u_rho | z_alpha (J) | z_person (K, 3)
        self.z_alpha = np.arange(8, 8 + self.J)
        self.z_person = (8 + self.J + np.arange(3 * self.K)).reshape(self.K, 3)
        self.blocks = [
            GlobalBlock(np.arange(4), "locations"),
            *(GlobalBlock(np.array([4 + i]), f"sigma_{name}") for i, name in enumerate(_LOCS)),
            UnitBlock(self.z_person, self._person_unit_logp, "persons"),
            UnitBlock(self.z_alpha[:, None], self._coin_unit_logp, "coins"),
        ]
        comps = [priors.alpha_mu, priors.theta_mu, priors.lambda_mu, priors.rho_mu]
        zs = [self.z_alpha, self.z_person[:, 0], self.z_person[:, 1], self.z_person[:, 2]]
        self.moves = []
        for i, name in enumerate(_LOCS):
            self.moves.append(Move(_scale_move(4 + i, zs[i]), f"scale_{name}", prior_only=True))
            self.moves.append(Move(_shift_move(i, 4 + i, zs[i], comps[i]), f"shift_{name}", 0.1, prior_only=True))
        self.derived_names = (
            ["alpha_mu", "theta_mu", "lambda_mu", "rho_mu", "sigma_alpha", "sigma_theta", "sigma_lambda",
             "sigma_rho", "initial_mu", "sd_alpha_prob", "sd_theta_prob", "sd_lambda_prob"]
            + [f"theta[{p}]" for p in b.persons] + [f"lambda[{p}]" for p in b.persons]
            + [f"rho[{p}]" for p in b.persons]
        )

    def _unit_arrays(self, th):
        p = self.priors
        la0 = p.alpha_mu.to_logit(th[..., 0])
        lt0 = p.theta_mu.to_logit(th[..., 1])
        ll0 = p.lambda_mu.to_logit(th[..., 2])
        r0 = th[..., 3]
        s = np.exp(th[..., 4:8])
        za = th[..., self.z_alpha]
        zp = th[..., self.z_person]
        la = la0[..., None] + s[..., 0:1] * za
        lt = lt0[..., None] + s[..., 1:2] * zp[..., 0]
        ll = ll0[..., None] + s[..., 2:3] * zp[..., 1]
        rho = r0[..., None] + s[..., 3:4] * zp[..., 2]
        return la, lt, ll, rho

    def _batches_ll(self, th) -> np.ndarray:
        out = _batch_loglik(*self._unit_arrays(th), self.data)
        return np.where(np.isfinite(out), out, -np.inf)

    def _person_unit_logp(self, th):
        zp = th[self.z_person]
        return np.bincount(self.data.person, self._batches_ll(th), self.K) - 0.5 * np.sum(zp * zp, axis=1)

    def _coin_unit_logp(self, th):
        za = th[self.z_alpha]
        return np.bincount(self.data.coin, self._batches_ll(th), self.J) - 0.5 * za * za

    def log_prior_v(self, th) -> float:
        p = self.priors
        comps = [p.alpha_mu, p.theta_mu, p.lambda_mu, p.rho_mu, p.sigma_alpha, p.sigma_theta,
                 p.sigma_lambda, p.sigma_rho]
        out = sum(float(c.log_density_v(th[i])) for i, c in enumerate(comps))
        z = th[8:]
        return out - 0.5 * float(z @ z) - len(z) * _HALF_LOG_2PI

    def log_density(self, th) -> float:
        lp = self.log_prior_v(th)
        if not math.isfinite(lp):
            return -math.inf
        ll = float(np.sum(self._batches_ll(th)))
        return lp + ll if math.isfinite(ll) else -math.inf

    def initial_point(self, rng) -> np.ndarray:
        p = self.priors
        th = np.zeros(self.dim)
        th[0] = p.alpha_mu.draw_v(rng)
        th[1] = p.theta_mu.draw_v(rng)
        th[2] = p.lambda_mu.draw_v(rng)
        th[3] = rng.normal(-1.0, 0.3)
        th[4:7] = np.log(rng.uniform(0.01, 0.05, 3))
        th[7] = math.log(rng.uniform(0.2, 0.8))
        th[8:] = rng.normal(0.0, 0.3, self.dim - 8)
        return th

    def initial_scales(self) -> np.ndarray:
        out = np.full(self.dim, 0.3)
        sd_logit = max(2.0 / math.sqrt(max(self.data.n_total, 1.0)), 0.002)
        out[:3] = sd_logit  # full-interval Beta locations: v is the logit
        out[3] = 0.2
        return out

    def derive(self, thetas: np.ndarray) -> np.ndarray:
        thetas = np.atleast_2d(thetas)
        p = self.priors
        la0 = p.alpha_mu.to_logit(thetas[:, 0])
        lt0 = p.theta_mu.to_logit(thetas[:, 1])
        ll0 = p.lambda_mu.to_logit(thetas[:, 2])
        s = np.exp(thetas[:, 4:8])
        am, tm, lm = expit(la0), expit(lt0), expit(ll0)
        _, lt, ll, rho = self._unit_arrays(thetas)
        cols = np.column_stack([am, tm, lm, thetas[:, 3], s, expit(lt0 + ll0),
                                prob_scale_sd(s[:, 0], am), prob_scale_sd(s[:, 1], tm),
                                prob_scale_sd(s[:, 2], lm)])
        return np.concatenate([cols, expit(lt), expit(ll), rho], axis=1)


def _scale_move(u_idx, z_idx):
    k = len(z_idx)

    def apply(th, eps):
        out = th.copy()
        out[u_idx] += eps
        out[z_idx] *= math.exp(-eps)
        return out, -k * eps
    return apply


def _shift_move(v_idx, u_idx, z_idx, comp):
    def apply(th, eps):
        out = th.copy()
        before = float(comp.to_logit(out[v_idx]))
        out[v_idx] += eps
        after = float(comp.to_logit(out[v_idx]))
        out[z_idx] -= (after - before) / math.exp(out[u_idx])
        return out, 0.0
    return apply


def fit_learning(batches, priors: LearningPriors = LearningPriors(),
                 settings: SamplerSettings = SamplerSettings()) -> PosteriorDraws:
    """Posterior draws of the learning model; ``initial_mu`` = expit(logit theta_mu + logit lambda_mu) per draw."""
    target = LearningTarget(batches, priors)
    draws = sample(target, settings)
    draws.target = target
    return draws


def learning_summary(draws: PosteriorDraws) -> dict:
    keys = {
        "pr_heads": "alpha_mu", "sd_coins_heads": "sd_alpha_prob",
        "pr_baseline": "theta_mu", "sd_people_baseline": "sd_theta_prob",
        "pr_toss_order": "lambda_mu", "sd_people_toss_order": "sd_lambda_prob",
        "rho": "rho_mu", "sigma_rho": "sigma_rho", "pr_initial": "initial_mu",
    }
    out = {}
    for label, name in keys.items():
        m, lo, hi = draws.summary(name)
        out[label] = {"mean": m, "ci95": [lo, hi]}
    return out


def learning_curve(draws: PosteriorDraws, t_grid: Optional[np.ndarray] = None) -> np.ndarray:
    """Rows (t, mean, ci_low, ci_high) of the population-level Pr(same side) over scaled time."""
    if t_grid is None:
        t_grid = np.linspace(0.05, 15.0, 300)
    t_grid = np.maximum(np.asarray(t_grid, dtype=float), T_FLOOR)
    lt = _logit(draws.flat("theta_mu"))
    ll = _logit(draws.flat("lambda_mu"))
    rho = draws.flat("rho_mu")
    with np.errstate(over="ignore"):
        pr = expit(lt[:, None] + ll[:, None] * np.power(t_grid[None, :], rho[:, None]))
    lo, hi = np.quantile(pr, [0.025, 0.975], axis=0)
    return np.column_stack([t_grid, pr.mean(axis=0), lo, hi])


def write_curve_csv(curve: np.ndarray, stream: TextIO) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(("t", "pr_same_side", "ci_low", "ci_high"))
    for row in curve:
        w.writerow(tuple(f"{v:.6g}" for v in row))
