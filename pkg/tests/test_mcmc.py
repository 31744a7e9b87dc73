import numpy as np
import pytest
from scipy import stats

from coinbias.diagnostics import autocorrelation, ess_basic, ess_bulk, split_rhat
from coinbias.mcmc import GlobalBlock, SamplerSettings, sample


class Gaussian:
    """Correlated 2-D normal target."""

    def __init__(self, mean=(1.0, -2.0), cov=((1.0, 0.8), (0.8, 2.0))):
        self.mean = np.asarray(mean)
        self.prec = np.linalg.inv(np.asarray(cov))
        self.dim = 2
        self.blocks = [GlobalBlock(np.arange(2), "all")]
        self.moves = []
        self.derived_names = ["x", "y"]

    def log_density(self, th):
        d = th - self.mean
        return -0.5 * float(d @ self.prec @ d)

    def initial_point(self, rng):
        return rng.normal(size=2)

    def initial_scales(self):
        return np.ones(2)

    def derive(self, th):
        return np.atleast_2d(th)


def test_rhat_of_iid_chains_near_one():
    x = np.random.default_rng(0).normal(size=(4, 2000))
    assert split_rhat(x) < 1.01


def test_rhat_flags_disjoint_chains():
    x = np.random.default_rng(1).normal(size=(4, 1000))
    x[0] += 3.0
    assert split_rhat(x) > 1.1


def test_rhat_flags_trend_within_chain():
    x = np.random.default_rng(2).normal(size=(4, 1000)) + np.linspace(0, 3, 1000)
    assert split_rhat(x) > 1.1


def test_constant_chains():
    assert split_rhat(np.ones((3, 50))) == 1.0
    assert ess_bulk(np.ones((3, 50))) == 150


def test_ess_iid_and_ar1():
    rng = np.random.default_rng(3)
    iid = rng.normal(size=(4, 5000))
    assert 0.8 * iid.size < ess_basic(iid) < 1.2 * iid.size
    phi = 0.9
    ar = np.zeros((4, 5000))
    for t in range(1, 5000):
        ar[:, t] = phi * ar[:, t - 1] + rng.normal(size=4)
    expected = ar.size * (1 - phi) / (1 + phi)
    assert 0.7 * expected < ess_basic(ar) < 1.3 * expected


def test_autocorrelation_lag_zero():
    acf = autocorrelation(np.random.default_rng(4).normal(size=500))
    assert acf[0] == pytest.approx(1.0)
    assert abs(acf[1]) < 0.15


def test_sampler_recovers_gaussian_moments():
    t = Gaussian()
    d = sample(t, SamplerSettings(chains=4, warmup=1000, iters=3000, seed=5))
    assert d.max_rhat < 1.01
    x = d.unconstrained.reshape(-1, 2)
    assert np.allclose(x.mean(axis=0), t.mean, atol=0.1)
    assert np.allclose(np.cov(x, rowvar=False), [[1.0, 0.8], [0.8, 2.0]], atol=0.2)
    assert stats.kstest(d.flat("x"), stats.norm(1.0, 1.0).cdf).statistic < 0.05


def test_sampler_determinism():
    s = SamplerSettings(chains=2, warmup=200, iters=200, seed=9)
    a, b = sample(Gaussian(), s), sample(Gaussian(), s)
    assert np.array_equal(a.draws, b.draws)
    c = sample(Gaussian(), SamplerSettings(chains=2, warmup=200, iters=200, seed=10))
    assert not np.array_equal(a.draws, c.draws)


def test_threads_do_not_change_draws():
    a = sample(Gaussian(), SamplerSettings(chains=3, warmup=100, iters=100, seed=2, threads=1))
    b = sample(Gaussian(), SamplerSettings(chains=3, warmup=100, iters=100, seed=2, threads=3))
    assert np.array_equal(a.draws, b.draws)


def test_settings_validation():
    with pytest.raises(ValueError):
        SamplerSettings(chains=0)


def test_draws_summary_interface():
    d = sample(Gaussian(), SamplerSettings(chains=2, warmup=200, iters=300, seed=1))
    m, lo, hi = d.summary("x")
    assert lo < m < hi
    assert "x" in d and d["x"].shape == (2, 300)
    diag = d.diagnostics()
    assert diag["max_rhat"] == d.max_rhat and diag["min_ess"] == d.min_ess
