"""Marginal likelihoods by bridge sampling, the 16-model space, and inclusion Bayes factors."""
from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .diagnostics import ess_basic
from .hier import CellData, HierTarget, ModelSpec, PriorSet, _as_cells
from .mcmc import PosteriorDraws, SamplerSettings, sample
from .numerics import logsumexp

__all__ = [
    "BridgeError",
    "BridgeSettings",
    "MarginalLikelihood",
    "ModelPosterior",
    "BMAResult",
    "bridge_log_ml",
    "enumerate_models",
    "posterior_model_probs",
    "inclusion_bf",
    "INCLUSION_COMPONENTS",
    "run_bma",
]

INCLUSION_COMPONENTS = {
    "same_side": lambda s: s.has_same_side_bias,
    "heads_tails": lambda s: s.has_heads_tails_bias,
    "person_het": lambda s: s.has_person_heterogeneity,
    "coin_het": lambda s: s.has_coin_heterogeneity,
}


class BridgeError(RuntimeError):
    pass


@dataclass(frozen=True)
class BridgeSettings:
    tol: float = 1e-10
    max_iter: int = 1000
    seed: int = 0


@dataclass(frozen=True)
class MarginalLikelihood:
    model: Optional[ModelSpec]
    log_ml: float
    relative_mc_error: float
    iterations_used: int

    def to_dict(self) -> dict:
        return {"spec": None if self.model is None else self.model.to_dict(),
                "log_ml": self.log_ml, "mc_error": self.relative_mc_error,
                "iterations": self.iterations_used}


def _fit_proposal(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = x.mean(axis=0)
    cov = np.atleast_2d(np.cov(x, rowvar=False))
    scale = max(float(np.trace(cov)) / cov.shape[0], 1e-300)
    for jitter in (0.0, 1e-10, 1e-8, 1e-6):
        try:
            return mean, np.linalg.cholesky(cov + jitter * scale * np.eye(cov.shape[0]))
        except np.linalg.LinAlgError:
            continue
    raise BridgeError("proposal covariance is not positive definite even after jitter")


def _mvn_logpdf(x: np.ndarray, mean: np.ndarray, chol: np.ndarray) -> np.ndarray:
    from scipy.linalg import solve_triangular

    z = solve_triangular(chol, (x - mean).T, lower=True)
    d = mean.shape[0]
    return -0.5 * np.sum(z * z, axis=0) - np.sum(np.log(np.diag(chol))) - 0.5 * d * math.log(2 * math.pi)


def _logmeanexp(x: np.ndarray) -> float:
    return logsumexp(x) - math.log(len(x))


def bridge_log_ml(draws, log_density: Callable[[np.ndarray], float],
                  settings: BridgeSettings = BridgeSettings(), model: Optional[ModelSpec] = None) -> MarginalLikelihood:
    """Iterative bridge sampling with a moment-matched normal proposal.

    ``draws`` is either a ``PosteriorDraws`` (its unconstrained samples are
    used) or an array shaped (chains, iterations, dim).  ``log_density`` is the
    unnormalized log posterior on that same unconstrained scale, Jacobian
    included.  The first half of every chain fits the proposal; the second
    half enters the fixed-point iteration.  The reported error is the relative
    mean-squared error of the estimate (its square root), which approximates
    the Monte Carlo standard error of ``log_ml``.
    """
    x = draws.unconstrained if isinstance(draws, PosteriorDraws) else np.asarray(draws, dtype=float)
    if x.ndim == 2:
        x = x[None]
    chains, n_iter, dim = x.shape
    if dim == 0:
        return MarginalLikelihood(model, float(log_density(np.zeros(0))), 0.0, 0)
    half = n_iter // 2
    if half < 2:
        raise BridgeError("need at least 4 draws per chain")
    fit = x[:, :half].reshape(-1, dim)
    post = x[:, n_iter - half:]
    n1 = chains * half
    mean, chol = _fit_proposal(fit)
    rng = np.random.default_rng(settings.seed)
    prop = mean + rng.standard_normal((n1, dim)) @ chol.T
    n2 = n1

    flat_post = post.reshape(-1, dim)
    q11 = np.array([log_density(t) for t in flat_post])
    q12 = _mvn_logpdf(flat_post, mean, chol)
    q21 = np.array([log_density(t) for t in prop])
    q22 = _mvn_logpdf(prop, mean, chol)
    if not np.all(np.isfinite(q11)):
        raise BridgeError("non-finite log density at a posterior draw")
    q21 = np.where(np.isfinite(q21), q21, -np.inf)

    l1 = q11 - q12
    l2 = q21 - q22
    ess1 = ess_basic(l1.reshape(chains, half))
    n1_eff = min(max(ess1, 1.0), n1)
    log_s1 = math.log(n1_eff / (n1_eff + n2))
    log_s2 = math.log(n2 / (n1_eff + n2))
    lstar = float(np.median(l1))
    a1 = l1 - lstar
    a2 = l2 - lstar

    log_r = 0.0
    for it in range(1, settings.max_iter + 1):
        num = a2 - np.logaddexp(log_s1 + a2, log_s2 + log_r)
        den = -np.logaddexp(log_s1 + a1, log_s2 + log_r)
        new = _logmeanexp(num) - _logmeanexp(den)
        if not math.isfinite(new):
            raise BridgeError("bridge iteration produced a non-finite value")
        done = abs(math.expm1(new - log_r)) < settings.tol
        log_r = new
        if done:
            break
    else:
        raise BridgeError(f"bridge fixed point did not converge in {settings.max_iter} iterations")
    log_ml = log_r + lstar

    # relative mean-squared error
    lp_post = q11 - log_ml  # log normalized posterior at posterior draws
    lp_prop = q21 - log_ml
    s1, s2 = math.exp(log_s1), math.exp(log_s2)
    with np.errstate(over="ignore", invalid="ignore"):
        f1 = 1.0 / (s1 + s2 * np.exp(q22 - lp_prop))
        f2 = 1.0 / (s1 * np.exp(lp_post - q12) + s2)
    f1 = np.nan_to_num(f1, nan=0.0)
    f2 = np.nan_to_num(f2, nan=0.0)
    term1 = f1.var(ddof=1) / (n2 * f1.mean() ** 2) if f1.mean() > 0 else math.inf
    ess2 = ess_basic(f2.reshape(chains, half)) if np.ptp(f2) > 0 else n1
    term2 = f2.var(ddof=1) / (ess2 * f2.mean() ** 2) if f2.mean() > 0 else math.inf
    re = math.sqrt(term1 + term2)
    return MarginalLikelihood(model, float(log_ml), float(re), it)


def enumerate_models() -> list[ModelSpec]:
    """M1 (all components present) through M16 (none)."""
    return [ModelSpec.from_index(i) for i in range(1, 17)]


@dataclass(frozen=True)
class ModelPosterior:
    log_mls: np.ndarray
    prior_probs: np.ndarray
    log_posterior: np.ndarray  # normalized log posterior model probabilities
    specs: tuple = ()

    @property
    def posterior_probs(self) -> np.ndarray:
        return np.exp(self.log_posterior)


def posterior_model_probs(log_mls: Sequence[float], prior_probs: Optional[Sequence[float]] = None,
                          specs: Sequence[ModelSpec] = ()) -> ModelPosterior:
    lm = np.asarray(log_mls, dtype=float)
    pp = np.full(len(lm), 1.0 / len(lm)) if prior_probs is None else np.asarray(prior_probs, dtype=float)
    if pp.shape != lm.shape:
        raise ValueError("log_mls and prior_probs must have equal length")
    bad = np.flatnonzero(~np.isfinite(lm))
    if len(bad):
        names = [specs[i].label if specs else f"model {i + 1}" for i in bad]
        raise ValueError(f"non-finite log marginal likelihood for {', '.join(names)}")
    pp = pp / pp.sum()
    with np.errstate(divide="ignore"):
        w = lm + np.log(pp)
    log_post = w - logsumexp(w)
    return ModelPosterior(lm, pp, log_post, tuple(specs))


def _mask(mp: ModelPosterior, members) -> np.ndarray:
    m = len(mp.log_mls)
    if callable(members):
        if not mp.specs:
            raise ValueError("predicate membership needs model specs")
        mask = np.array([bool(members(s)) for s in mp.specs])
    else:
        members = list(members)
        if len(members) == m and all(isinstance(v, (bool, np.bool_)) for v in members):
            mask = np.array(members, dtype=bool)
        else:
            mask = np.zeros(m, dtype=bool)
            for i in members:
                if not 1 <= int(i) <= m:
                    raise ValueError(f"model number {i} out of range 1..{m}")
                mask[int(i) - 1] = True
    if mask.all() or not mask.any():
        raise ValueError("inclusion set must be a non-empty proper subset")
    return mask


def inclusion_bf(mp: ModelPosterior, members) -> float:
    """Change from prior to posterior odds for the models in ``members`` (set A) vs the rest.

    ``members`` may be 1-based model numbers, a boolean mask, or a predicate on
    ``ModelSpec``.  Zero posterior mass outside A gives ``inf``.
    """
    v = log_inclusion_bf(mp, members)
    return math.exp(v) if v < 709 else math.inf


def log_inclusion_bf(mp: ModelPosterior, members) -> float:
    mask = _mask(mp, members)
    with np.errstate(divide="ignore"):
        lpp = np.log(mp.prior_probs)
    post_a, post_b = logsumexp(mp.log_posterior[mask]), logsumexp(mp.log_posterior[~mask])
    prior_a, prior_b = logsumexp(lpp[mask]), logsumexp(lpp[~mask])
    if post_b == -math.inf:
        return math.inf
    return (post_a - post_b) - (prior_a - prior_b)


@dataclass
class BMAResult:
    mls: list[MarginalLikelihood]
    posterior: ModelPosterior
    log_inclusion: dict
    diagnostics: list[dict] = field(default_factory=list)
    settings: Optional[SamplerSettings] = None

    @property
    def inclusion_bfs(self) -> dict:
        return {k: (math.exp(v) if v < 709 else math.inf) for k, v in self.log_inclusion.items()}

    def to_dict(self) -> dict:
        probs = self.posterior.posterior_probs
        return {
            "models": [
                {"spec": ml.model.to_dict(), "log_ml": ml.log_ml, "mc_error": ml.relative_mc_error,
                 "post_prob": float(p), "diagnostics": diag}
                for ml, p, diag in zip(self.mls, probs, self.diagnostics)
            ],
            "inclusion_bfs": {k: v for k, v in self.inclusion_bfs.items()},
            "log10_inclusion_bfs": {k: v / math.log(10) for k, v in self.log_inclusion.items()},
        }


def _fit_one(spec: ModelSpec, cells: CellData, priors: PriorSet, settings: SamplerSettings,
             bridge: BridgeSettings) -> tuple[MarginalLikelihood, dict]:
    target = HierTarget(cells, spec, priors)
    if target.dim == 0:
        ml = MarginalLikelihood(spec, target.log_density(np.zeros(0)), 0.0, 0)
        return ml, {"max_rhat": 1.0, "min_ess": None, "seconds": 0.0, "warnings": []}
    t0 = time.perf_counter()
    draws = sample(target, settings)
    ml = bridge_log_ml(draws, target.log_density, bridge, model=spec)
    return ml, {"max_rhat": draws.max_rhat, "min_ess": draws.min_ess,
                "seconds": time.perf_counter() - t0, "warnings": list(draws.warnings)}


def run_bma(cells, priors: Optional[PriorSet] = None, settings: SamplerSettings = SamplerSettings(),
            bridge: Optional[BridgeSettings] = None, models: Optional[Iterable[ModelSpec]] = None,
            prior_probs: Optional[Sequence[float]] = None) -> BMAResult:
    """Fit every model, bridge-sample its marginal likelihood, and average.

    Model i uses sampler seed ``settings.seed + i`` and bridge seed
    ``bridge.seed + i`` so each fit is reproducible on its own.
    """
    c = _as_cells(cells)
    priors = priors or PriorSet.testing()
    specs = list(models) if models is not None else enumerate_models()
    bridge = bridge or BridgeSettings(seed=settings.seed)

    def job(spec):
        s = SamplerSettings(settings.chains, settings.warmup, settings.iters, settings.seed + spec.index,
                            1, settings.thin)
        b = BridgeSettings(bridge.tol, bridge.max_iter, bridge.seed + spec.index)
        return _fit_one(spec, c, priors, s, b)

    if settings.threads > 1:
        with ThreadPoolExecutor(max_workers=settings.threads) as pool:
            out = list(pool.map(job, specs))
    else:
        out = [job(s) for s in specs]
    mls = [o[0] for o in out]
    mp = posterior_model_probs([m.log_ml for m in mls], prior_probs, specs)
    log_inc = {}
    for name, pred in INCLUSION_COMPONENTS.items():
        flags = [pred(s) for s in specs]
        if any(flags) and not all(flags):
            log_inc[name] = log_inclusion_bf(mp, pred)
    return BMAResult(mls, mp, log_inc, [o[1] for o in out], settings)
