"""Blocked adaptive random-walk Metropolis.

A target exposes an unconstrained parameter vector split into blocks:

* ``GlobalBlock``: a few jointly updated parameters with a Gaussian proposal
  whose covariance is learned in warmup windows and whose overall scale is
  tuned by dual averaging;
* ``UnitBlock``: K exchangeable units with d parameters each that are
  conditionally independent given everything outside the block, so all K
  Metropolis decisions are made at once from a per-unit log density, each
  unit with its own adapted proposal covariance;
* ``Move``: a deterministic one-parameter transformation (with log-Jacobian)
  driven by a scalar random step, used for interweaving scale/location moves
  that leave the likelihood unchanged.

Chains get independent generators spawned from one master seed, so the
output is a pure function of (target, settings).
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol, Sequence

import numpy as np

from .diagnostics import ess_bulk, split_rhat

__all__ = [
    "GlobalBlock",
    "UnitBlock",
    "Move",
    "Target",
    "SamplerSettings",
    "PosteriorDraws",
    "ConvergenceWarning",
    "sample",
    "RHAT_THRESHOLD",
]

RHAT_THRESHOLD = 1.01


class ConvergenceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class GlobalBlock:
    idx: np.ndarray
    name: str = "global"


@dataclass(frozen=True)
class UnitBlock:
    idx: np.ndarray  # (K, d) positions in the parameter vector
    unit_logp: Callable[[np.ndarray], np.ndarray]  # theta -> (K,) log density terms
    name: str = "units"


@dataclass(frozen=True)
class Move:
    apply: Callable[[np.ndarray, float], tuple[np.ndarray, float]]  # (theta, eps) -> (theta', log|J|)
    name: str = "move"
    init_scale: float = 0.3
    prior_only: bool = False  # likelihood unchanged: only ``target.log_prior_v`` is re-evaluated


class Target(Protocol):
    dim: int
    blocks: Sequence
    moves: Sequence[Move]
    derived_names: Sequence[str]

    def log_density(self, theta: np.ndarray) -> float: ...
    def initial_point(self, rng: np.random.Generator) -> np.ndarray: ...
    def initial_scales(self) -> np.ndarray: ...
    def derive(self, thetas: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class SamplerSettings:
    chains: int = 4
    warmup: int = 2000
    iters: int = 2000
    seed: int = 0
    threads: int = 1
    thin: int = 1

    def __post_init__(self):
        for name in ("chains", "warmup", "iters", "thin", "threads"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    def to_dict(self) -> dict:
        return {"chains": self.chains, "warmup": self.warmup, "iters": self.iters,
                "seed": self.seed, "thin": self.thin}


@dataclass
class PosteriorDraws:
    names: list[str]
    draws: np.ndarray  # (chains, iters, P) reported quantities
    unconstrained: np.ndarray  # (chains, iters, D)
    log_density: np.ndarray  # (chains, iters)
    settings: SamplerSettings
    acceptance: dict = field(default_factory=dict)
    rhat: dict = field(default_factory=dict)
    ess: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    def __post_init__(self):
        self._pos = {n: i for i, n in enumerate(self.names)}

    @property
    def seed(self) -> int:
        return self.settings.seed

    def __contains__(self, name: str) -> bool:
        return name in self._pos

    def __getitem__(self, name: str) -> np.ndarray:
        return self.draws[:, :, self._pos[name]]

    def flat(self, name: str) -> np.ndarray:
        return self[name].reshape(-1)

    def summary(self, name: str) -> tuple[float, float, float]:
        x = self.flat(name)
        lo, hi = np.quantile(x, [0.025, 0.975])
        return float(x.mean()), float(lo), float(hi)

    @property
    def max_rhat(self) -> float:
        vals = [v for v in self.rhat.values() if np.isfinite(v)]
        return max(vals) if vals else 1.0

    @property
    def min_ess(self) -> float:
        vals = [v for v in self.ess.values() if np.isfinite(v)]
        return min(vals) if vals else float("nan")

    @property
    def converged(self) -> bool:
        return self.max_rhat < RHAT_THRESHOLD

    def diagnostics(self) -> dict:
        return {"max_rhat": self.max_rhat, "min_ess": self.min_ess,
                "acceptance": dict(self.acceptance), "warnings": list(self.warnings)}


class _DualAveraging:
    """Step-size adaptation on the log scale (Nesterov dual averaging)."""

    def __init__(self, step: float, target: float, gamma=0.05, t0=10.0, kappa=0.75):
        self.target, self.gamma, self.t0, self.kappa = target, gamma, t0, kappa
        self.restart(step)

    def restart(self, step: float) -> None:
        self.mu = math.log(10.0 * step)
        self.h_bar = 0.0
        self.log_step = math.log(step)
        self.log_step_bar = math.log(step)
        self.t = 0

    def update(self, accept_prob: float) -> float:
        self.t += 1
        w = 1.0 / (self.t + self.t0)
        self.h_bar = (1.0 - w) * self.h_bar + w * (self.target - accept_prob)
        self.log_step = self.mu - math.sqrt(self.t) / self.gamma * self.h_bar
        eta = self.t ** (-self.kappa)
        self.log_step_bar = eta * self.log_step + (1.0 - eta) * self.log_step_bar
        return math.exp(self.log_step)

    @property
    def final(self) -> float:
        return math.exp(self.log_step_bar)


def _windows(warmup: int) -> list[tuple[int, int]]:
    """Covariance-learning windows; the first 15% and the last 10% of warmup only tune step sizes."""
    a = int(0.15 * warmup)
    b = int(0.90 * warmup)
    if b - a < 20:
        return []
    cuts = [a, a + (b - a) // 7, a + 3 * (b - a) // 7, b]
    return [(cuts[i], cuts[i + 1]) for i in range(3)]


def _target_accept(d: int) -> float:
    return 0.44 if d == 1 else 0.30 if d <= 4 else 0.234


class _ChainRunner:
    def __init__(self, target: Target, settings: SamplerSettings, seed_seq: np.random.SeedSequence):
        self.t = target
        self.s = settings
        self.rng = np.random.default_rng(seed_seq)

    def _initial(self) -> tuple[np.ndarray, float]:
        for _ in range(100):
            theta = np.asarray(self.t.initial_point(self.rng), dtype=float)
            lp = self.t.log_density(theta)
            if np.isfinite(lp):
                return theta, lp
        raise RuntimeError("could not find an initial point with finite log density")

    def run(self):
        t, s, rng = self.t, self.s, self.rng
        theta, lp = self._initial()
        scales0 = np.asarray(t.initial_scales(), dtype=float)
        windows = _windows(s.warmup)
        total = s.warmup + s.iters * s.thin

        g_state = []
        for blk in (b for b in t.blocks if isinstance(b, GlobalBlock)):
            d = len(blk.idx)
            cov = np.diag(scales0[blk.idx] ** 2)
            step0 = 2.38 / math.sqrt(d)
            g_state.append({
                "blk": blk, "chol": np.linalg.cholesky(cov), "step": step0,
                "da": _DualAveraging(step0, _target_accept(d)), "buf": [], "acc": 0,
            })
        u_state = []
        for blk in (b for b in t.blocks if isinstance(b, UnitBlock)):
            K, d = blk.idx.shape
            chol = np.zeros((K, d, d))
            chol[:, np.arange(d), np.arange(d)] = scales0[blk.idx]
            u_state.append({
                "blk": blk, "chol": chol, "log_step": np.full(K, math.log(2.38 / math.sqrt(d))),
                "target": _target_accept(d), "buf": [], "acc": np.zeros(K),
            })
        m_state = [{"mv": mv, "log_scale": math.log(mv.init_scale), "acc": 0} for mv in t.moves]

        keep = np.empty((s.iters, t.dim))
        keep_lp = np.empty(s.iters)
        n_kept = 0
        for it in range(total):
            warm = it < s.warmup
            rm_rate = (it + 1) ** -0.6

            for g in g_state:
                idx = g["blk"].idx
                prop = theta.copy()
                prop[idx] += g["step"] * (g["chol"] @ rng.standard_normal(len(idx)))
                lp_new = t.log_density(prop)
                a = math.exp(min(0.0, lp_new - lp)) if np.isfinite(lp_new) else 0.0
                if rng.random() < a:
                    theta, lp = prop, lp_new
                    if not warm:
                        g["acc"] += 1
                if warm:
                    g["step"] = g["da"].update(a)

            for u in u_state:
                blk = u["blk"]
                cur = blk.unit_logp(theta)
                prop = theta.copy()
                z = rng.standard_normal(blk.idx.shape)
                prop[blk.idx] += np.exp(u["log_step"])[:, None] * np.einsum("kij,kj->ki", u["chol"], z)
                new = blk.unit_logp(prop)
                with np.errstate(invalid="ignore", over="ignore"):
                    log_a = np.where(np.isfinite(new), np.minimum(0.0, new - cur), -np.inf)
                a = np.exp(log_a)
                accept = rng.random(len(a)) < a
                theta[blk.idx[accept]] = prop[blk.idx[accept]]
                if warm:
                    u["log_step"] += rm_rate * (a - u["target"])
                else:
                    u["acc"] += accept
            if u_state:
                lp = t.log_density(theta)

            for m in m_state:
                eps = math.exp(m["log_scale"]) * rng.standard_normal()
                prop, log_j = m["mv"].apply(theta, eps)
                if m["mv"].prior_only:
                    lp_new = lp + t.log_prior_v(prop) - t.log_prior_v(theta)
                else:
                    lp_new = t.log_density(prop)
                a = math.exp(min(0.0, lp_new - lp + log_j)) if np.isfinite(lp_new) else 0.0
                if rng.random() < a:
                    theta, lp = prop, lp_new
                    if not warm:
                        m["acc"] += 1
                if warm:
                    m["log_scale"] += rm_rate * (a - 0.44)

            if warm:
                for w_lo, w_hi in windows:
                    if w_lo <= it < w_hi:
                        for g in g_state:
                            g["buf"].append(theta[g["blk"].idx].copy())
                        for u in u_state:
                            u["buf"].append(theta[u["blk"].idx].copy())
                    if it == w_hi - 1:
                        self._close_window(g_state, u_state)
                if it == s.warmup - 1:
                    for g in g_state:
                        g["step"] = g["da"].final
            elif (it - s.warmup) % s.thin == 0:
                keep[n_kept] = theta
                keep_lp[n_kept] = lp
                n_kept += 1

        acc = {}
        n_post = s.iters * s.thin
        for g in g_state:
            acc[g["blk"].name] = g["acc"] / n_post
        for u in u_state:
            acc[u["blk"].name] = float(u["acc"].mean() / n_post)
        for m in m_state:
            acc[m["mv"].name] = m["acc"] / n_post
        return keep, keep_lp, acc

    @staticmethod
    def _close_window(g_state, u_state) -> None:
        for g in g_state:
            x = np.array(g["buf"])
            g["buf"] = []
            if len(x) < 10:
                continue
            d = x.shape[1]
            n = len(x)
            cov = np.atleast_2d(np.cov(x, rowvar=False))
            diag = np.diag(cov).copy()
            floor = 1e-8 * max(diag.max(), 1e-300)
            cov = (n / (n + 5.0)) * cov + (5.0 / (n + 5.0)) * np.diag(np.maximum(diag, floor))
            cov += floor * np.eye(d)
            try:
                g["chol"] = np.linalg.cholesky(cov)
            except np.linalg.LinAlgError:
                g["chol"] = np.diag(np.sqrt(np.maximum(diag, floor)))
            g["step"] = 2.38 / math.sqrt(d)
            g["da"].restart(g["step"])
        for u in u_state:
            x = np.array(u["buf"])
            u["buf"] = []
            if len(x) < 10:
                continue
            # x: (n, K, d) -> one regularized covariance per unit
            n, _, d = x.shape
            xc = x - x.mean(axis=0)
            cov = np.einsum("nki,nkj->kij", xc, xc) / (n - 1)
            diag = np.diagonal(cov, axis1=1, axis2=2)
            prev = np.diagonal(u["chol"], axis1=1, axis2=2) ** 2
            diag = np.where(diag > 0, diag, prev)
            cov = (n / (n + 5.0)) * cov
            cov[:, np.arange(d), np.arange(d)] += (5.0 / (n + 5.0)) * diag + 1e-10 * diag.max(axis=1, keepdims=True)
            try:
                u["chol"] = np.linalg.cholesky(cov)
            except np.linalg.LinAlgError:
                u["chol"] = np.zeros_like(cov)
                u["chol"][:, np.arange(d), np.arange(d)] = np.sqrt(diag)
            u["log_step"][:] = math.log(2.38 / math.sqrt(d))


def sample(target: Target, settings: SamplerSettings, extra_warnings: Optional[list] = None) -> PosteriorDraws:
    """Run ``settings.chains`` chains and attach R-hat / ESS for every derived quantity."""
    seqs = np.random.SeedSequence(settings.seed).spawn(settings.chains)
    runners = [_ChainRunner(target, settings, sq) for sq in seqs]
    if settings.threads > 1 and settings.chains > 1:
        with ThreadPoolExecutor(max_workers=min(settings.threads, settings.chains)) as pool:
            results = list(pool.map(lambda r: r.run(), runners))
    else:
        results = [r.run() for r in runners]

    unc = np.stack([r[0] for r in results])
    lps = np.stack([r[1] for r in results])
    n_draws = settings.chains * settings.iters
    derived = target.derive(unc.reshape(n_draws, target.dim)).reshape(settings.chains, settings.iters, -1)
    names = list(target.derived_names)
    acceptance = {}
    for r in results:
        for k, v in r[2].items():
            acceptance[k] = acceptance.get(k, 0.0) + v / settings.chains

    rhat, ess = {}, {}
    for i, n in enumerate(names):
        x = derived[:, :, i]
        if np.ptp(x) == 0.0:
            continue
        rhat[n] = split_rhat(x) if settings.chains > 1 or settings.iters >= 4 else float("nan")
        ess[n] = ess_bulk(x)
    out = PosteriorDraws(names, derived, unc, lps, settings, acceptance, rhat, ess, list(extra_warnings or []))
    bad = sorted(n for n, v in rhat.items() if not v < RHAT_THRESHOLD)
    if bad:
        msg = f"R-hat >= {RHAT_THRESHOLD} for {len(bad)} quantities (max {out.max_rhat:.4f}): {', '.join(bad[:6])}"
        out.warnings.append(msg)
        warnings.warn(msg, ConvergenceWarning, stacklevel=2)
    return out
