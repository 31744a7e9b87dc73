import math

import numpy as np
import pytest
from scipy import integrate, stats
from scipy.special import expit

from coinbias.glmm import ml_fit_random_intercept, person_start_counts
from coinbias.hier import CellData
from coinbias.simulator import simulate, uniform_config


def _cells(persons, flips, theta=0.5, sigma=0.0, seed=0):
    return CellData.from_dataset(simulate(uniform_config(persons, 1, flips, theta=theta, sigma_theta=sigma,
                                                         seed=seed)))


def test_identical_fair_persons():
    r = ml_fit_random_intercept(_cells(20, 2000, seed=1))
    assert r.tau < 0.03
    assert r.lr_chi2 == pytest.approx(0.0, abs=2.0)
    assert r.lr_p > 0.05 or r.lr_chi2 < 4


def test_recovers_tau():
    r = ml_fit_random_intercept(_cells(50, 5000, theta=0.5, sigma=0.1, seed=2))
    assert 0.05 <= r.tau <= 0.15
    assert r.lr_p < 0.001
    assert abs(r.b_start) < 4 * r.se_start


def test_marginal_likelihood_against_direct_integration():
    """The adaptive Gauss-Hermite marginal equals brute-force integration over the intercept."""
    c = _cells(5, 400, theta=0.52, sigma=0.2, seed=3)
    r = ml_fit_random_intercept(c, n_nodes=30)
    if r.tau == 0.0:
        pytest.skip("boundary fit")
    n, y, x = person_start_counts(c)
    eta0 = r.b_mu + r.b_start * x
    total = 0.0
    for k in range(n.shape[0]):
        def f(u, k=k):
            eta = eta0 + u
            ll = np.sum(y[k] * np.log(expit(eta)) + (n[k] - y[k]) * np.log(expit(-eta)))
            return math.exp(ll) * stats.norm.pdf(u, 0, r.tau)
        val, _ = integrate.quad(f, -10 * r.tau, 10 * r.tau, epsabs=0, epsrel=1e-11, limit=200)
        total += math.log(val)
    assert r.loglik == pytest.approx(total, abs=1e-6)


def test_report_fields():
    r = ml_fit_random_intercept(_cells(10, 1000, seed=4))
    d = r.to_dict()
    for key in ("b_mu", "se", "z", "p", "tau", "lr_chi2", "lr_p", "b_start", "se_start", "p_start"):
        assert key in d and math.isfinite(d[key])
    assert d["z"] == pytest.approx(d["b_mu"] / d["se"])


def test_requires_two_persons():
    with pytest.raises(ValueError):
        ml_fit_random_intercept(_cells(1, 1000))
