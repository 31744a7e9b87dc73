"""Maximum-likelihood logistic mixed model for the same-side indicator.

    logit Pr(same side) = b_mu + b_start * x + u_k,   u_k ~ Normal(0, tau^2),

with x = +1/2 for heads starts and -1/2 for tails starts, so b_mu is the
average of the two start-side logits.  Each person's random intercept is
integrated out with adaptive Gauss-Hermite quadrature centred on that
person's conditional mode.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, stats

from .hier import _as_cells
from .numerics import gauss_hermite

__all__ = ["GLMMConvergenceError", "GLMMResult", "ml_fit_random_intercept", "person_start_counts"]


class GLMMConvergenceError(RuntimeError):
    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class GLMMResult:
    b_mu: float
    se: float
    z: float
    p: float
    tau: float
    lr_chi2: float
    lr_p: float
    b_start: float
    se_start: float
    p_start: float
    loglik: float
    loglik_null: float
    n_nodes: int

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def person_start_counts(cells) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(K, 2) arrays of trials and same-side counts by start side (column 0 heads), plus x codes."""
    c = _as_cells(cells)
    K = len(c.persons)
    col = np.where(c.sign > 0, 0, 1)
    n = np.zeros((K, 2))
    y = np.zeros((K, 2))
    np.add.at(n, (c.person, col), c.n)
    np.add.at(y, (c.person, col), c.same)
    return n, y, np.array([0.5, -0.5])


def _person_loglik(eta: np.ndarray, n: np.ndarray, y: np.ndarray) -> np.ndarray:
    # eta (..., K, 2) -> sum over the start sides of the Bernoulli log likelihood
    return np.sum(y * eta - n * np.logaddexp(0.0, eta), axis=-1)


def _marginal_loglik(params: np.ndarray, n: np.ndarray, y: np.ndarray, x: np.ndarray, rule) -> float:
    b, bs, log_tau = params
    tau = math.exp(log_tau)
    fixed = b + bs * x  # (2,)
    # conditional modes by Newton on h(u) = loglik(u) - u^2 / (2 tau^2)
    u = np.zeros(n.shape[0])
    for _ in range(50):
        p = 1.0 / (1.0 + np.exp(-(fixed[None, :] + u[:, None])))
        g = np.sum(y - n * p, axis=1) - u / tau ** 2
        hneg = np.sum(n * p * (1 - p), axis=1) + 1.0 / tau ** 2
        step = g / hneg
        u += step
        if np.max(np.abs(step)) < 1e-12:
            break
    p = 1.0 / (1.0 + np.exp(-(fixed[None, :] + u[:, None])))
    s = 1.0 / np.sqrt(np.sum(n * p * (1 - p), axis=1) + 1.0 / tau ** 2)
    nodes = u[:, None] + math.sqrt(2.0) * s[:, None] * rule.nodes[None, :]  # (K, m)
    eta = fixed[None, None, :] + nodes[:, :, None]  # (K, m, 2)
    ll = _person_loglik(eta, n[:, None, :], y[:, None, :])
    h = ll - nodes ** 2 / (2 * tau ** 2) + rule.nodes[None, :] ** 2
    top = h.max(axis=1, keepdims=True)
    integral = top[:, 0] + np.log(np.sum(rule.weights[None, :] * np.exp(h - top), axis=1))
    return float(np.sum(integral + np.log(math.sqrt(2.0) * s) - 0.5 * math.log(2 * math.pi) - log_tau))


def _fixed_loglik(params: np.ndarray, n: np.ndarray, y: np.ndarray, x: np.ndarray) -> float:
    b, bs = params
    eta = np.broadcast_to(b + bs * x, n.shape)
    return float(np.sum(_person_loglik(eta, n, y)))


def _hessian(f, x0: np.ndarray, rel: float = 1e-4) -> np.ndarray:
    x0 = np.asarray(x0, dtype=float)
    d = len(x0)
    h = rel * np.maximum(np.abs(x0), 1e-2)
    H = np.empty((d, d))
    f0 = f(x0)
    for i in range(d):
        for j in range(i, d):
            if i == j:
                e = np.zeros(d)
                e[i] = h[i]
                H[i, i] = (f(x0 + e) - 2 * f0 + f(x0 - e)) / h[i] ** 2
            else:
                ei = np.zeros(d)
                ej = np.zeros(d)
                ei[i], ej[j] = h[i], h[j]
                H[i, j] = H[j, i] = (f(x0 + ei + ej) - f(x0 + ei - ej) - f(x0 - ei + ej)
                                     + f(x0 - ei - ej)) / (4 * h[i] * h[j])
    return H


def ml_fit_random_intercept(cells, n_nodes: int = 25) -> GLMMResult:
    """ML fit of the random-intercept model plus the LR test of tau = 0.

    Standard errors come from the observed information (numerical Hessian of
    the marginal log likelihood).  The LR statistic is referred to chi^2(1).
    """
    if n_nodes < 20:
        raise ValueError("use at least 20 quadrature nodes")
    n, y, x = person_start_counts(cells)
    keep = n.sum(axis=1) > 0
    n, y = n[keep], y[keep]
    if n.shape[0] < 2:
        raise ValueError("need at least two persons")
    rule = gauss_hermite(n_nodes)

    # logistic fit without random intercept
    null = optimize.minimize(lambda p: -_fixed_loglik(p, n, y, x), np.zeros(2), method="BFGS",
                             options={"gtol": 1e-8})
    if not null.success and null.status != 2:
        raise GLMMConvergenceError(f"fixed-effects fit failed: {null.message}", null)
    ll0 = -float(null.fun)

    obj = lambda p: -_marginal_loglik(p, n, y, x, rule)  # noqa: E731
    best = None
    for log_tau0 in (math.log(0.05), math.log(0.2), math.log(0.01)):
        res = optimize.minimize(obj, np.array([null.x[0], null.x[1], log_tau0]), method="Nelder-Mead",
                                options={"xatol": 1e-9, "fatol": 1e-10, "maxiter": 20000, "maxfev": 40000})
        res = optimize.minimize(obj, res.x, method="BFGS", options={"gtol": 1e-7})
        if best is None or res.fun < best.fun:
            best = res
    if not np.all(np.isfinite(best.x)):
        raise GLMMConvergenceError(f"mixed-model fit failed: {best.message}", best)
    ll1 = -float(best.fun)
    tau = math.exp(best.x[2])
    if ll1 < ll0:  # boundary: tau collapses to zero
        ll1, tau = ll0, 0.0
        b, bs = null.x
        H = _hessian(lambda p: -_fixed_loglik(p, n, y, x), null.x)
        cov = np.linalg.inv(H)
    else:
        b, bs = best.x[:2]
        H = _hessian(obj, best.x)
        try:
            cov = np.linalg.inv(H)
        except np.linalg.LinAlgError as e:
            raise GLMMConvergenceError("singular observed information", best) from e
    se, se_s = math.sqrt(max(cov[0, 0], 0.0)), math.sqrt(max(cov[1, 1], 0.0))
    lr = max(2.0 * (ll1 - ll0), 0.0)
    z = b / se if se > 0 else math.inf
    z_s = bs / se_s if se_s > 0 else math.inf
    return GLMMResult(
        b_mu=float(b), se=se, z=float(z), p=float(2 * stats.norm.sf(abs(z))),
        tau=tau, lr_chi2=lr, lr_p=float(stats.chi2.sf(lr, 1)),
        b_start=float(bs), se_start=se_s, p_start=float(2 * stats.norm.sf(abs(z_s))),
        loglik=ll1, loglik_null=ll0, n_nodes=n_nodes,
    )
