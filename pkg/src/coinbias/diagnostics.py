"""Convergence diagnostics for multi-chain draws: rank-normalized split-R-hat and bulk ESS."""
from __future__ import annotations

import numpy as np
from scipy.special import ndtri
from scipy.stats import rankdata

__all__ = ["split_rhat", "ess_bulk", "ess_basic", "autocorrelation"]


def _split(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    n = x.shape[1] // 2
    return np.concatenate([x[:, :n], x[:, x.shape[1] - n:]], axis=0)


def _rank_normalize(x: np.ndarray) -> np.ndarray:
    r = rankdata(x, method="average").reshape(x.shape)
    return ndtri((r - 0.375) / (x.size + 0.25))


def _rhat_basic(x: np.ndarray) -> float:
    m, n = x.shape
    if n < 2:
        return np.nan
    w = x.var(axis=1, ddof=1).mean()
    b = n * x.mean(axis=1).var(ddof=1)
    if w <= 0.0:
        return 1.0 if b <= 0.0 else np.inf
    return float(np.sqrt(((n - 1) / n * w + b / n) / w))


def split_rhat(x: np.ndarray) -> float:
    """Rank-normalized split-R-hat; the max of the bulk and folded (tail) versions.

    ``x`` has shape (chains, iterations).  A constant input returns 1.
    """
    s = _split(x)
    if np.ptp(s) == 0.0:
        return 1.0
    bulk = _rhat_basic(_rank_normalize(s))
    folded = np.abs(s - np.median(s))
    tail = _rhat_basic(_rank_normalize(folded)) if np.ptp(folded) > 0 else 1.0
    return float(max(bulk, tail))


def autocorrelation(x: np.ndarray) -> np.ndarray:
    """Autocorrelation of a 1-D series via FFT (biased estimator, lag 0 = 1)."""
    x = np.asarray(x, dtype=float) - np.mean(x)
    n = x.size
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n] / n
    return acov / acov[0] if acov[0] > 0 else np.zeros(n)


def ess_basic(x: np.ndarray) -> float:
    """Multi-chain ESS with Geyer's initial monotone positive sequence."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    m, n = x.shape
    if n < 4:
        return float(m * n)
    acov = np.stack([autocorrelation(c) * c.var() for c in x])
    mean_var = acov[:, 0].mean() * n / (n - 1)
    var_plus = mean_var * (n - 1) / n
    if m > 1:
        var_plus += x.mean(axis=1).var(ddof=1)
    if var_plus <= 0:
        return float(m * n)
    rho = 1.0 - (mean_var - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    # sum of adjacent pairs, truncated at the first negative pair, made monotone
    t = 0
    pair_sums = []
    while t + 1 < n:
        p = rho[t] + rho[t + 1]
        if p < 0:
            break
        pair_sums.append(p)
        t += 2
    if not pair_sums:
        return float(m * n)
    pairs = np.minimum.accumulate(np.array(pair_sums))
    tau = -1.0 + 2.0 * pairs.sum()
    tau = max(tau, 1.0 / np.log10(m * n))
    return float(m * n / tau)


def ess_bulk(x: np.ndarray) -> float:
    """Bulk effective sample size: basic ESS of rank-normalized split chains."""
    s = _split(x)
    if np.ptp(s) == 0.0:
        return float(s.size)
    return ess_basic(_rank_normalize(s))
