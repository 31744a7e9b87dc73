import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from coinbias.binomial import (
    SAME_SIDE_PRIOR, DegeneratePriorError, TruncatedBetaPrior, bf_informed_binomial, bf_symmetric_binomial,
    exact_binomial_p, posterior_interval_uniform,
)
from coinbias.numerics import DomainError


def _quad_log_bf(k, n, a, b, lo, hi):
    """Oracle: integrate Binomial(k; n, p) x truncated Beta over [lo, hi] against p = 1/2."""

    def g(p):
        return stats.beta.logpdf(p, a, b) + k * np.log(p) + (n - k) * np.log1p(-p)

    grid = np.linspace(lo + 1e-12, hi - 1e-12, 20001)
    vals = g(grid)
    top = float(np.max(vals))
    peak = float(grid[np.argmax(vals)])
    sd = 1.0 / math.sqrt(a + b + n)
    lo_i, hi_i = max(lo, peak - 40 * sd), min(hi, peak + 40 * sd)
    pts = [peak] if lo_i < peak < hi_i else None
    val, _ = integrate.quad(lambda p: math.exp(g(p) - top), lo_i, hi_i, points=pts,
                            epsabs=0, epsrel=1e-12, limit=500)
    mass = stats.beta.cdf(hi, a, b) - stats.beta.cdf(lo, a, b)
    return math.log(val) + top - math.log(mass) + n * math.log(2.0)


def test_small_example_against_quadrature():
    r = bf_informed_binomial(5, 10)
    # the oracle gives 0.99745; the quoted 0.998 is a loose rounding of it
    assert r.bf10 == pytest.approx(0.998, abs=1e-3)
    assert r.log_bf10 == pytest.approx(_quad_log_bf(5, 10, 5100, 4900, 0.5, 1.0), abs=1e-8)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 10_000).flatmap(lambda n: st.tuples(st.integers(0, n), st.just(n))))
def test_quadrature_equivalence(kn):
    k, n = kn
    got = bf_informed_binomial(k, n).log_bf10
    assert got == pytest.approx(_quad_log_bf(k, n, 5100, 4900, 0.5, 1.0), abs=1e-8)


def test_monotone_in_k_above_half():
    n = 2000
    vals = [bf_informed_binomial(k, n).log_bf10 for k in range(n // 2, n + 1, 7)]
    assert np.all(np.diff(vals) >= 0)


def test_symmetric_bf_is_symmetric():
    for h, n in ((3, 10), (175421, 350757), (0, 50)):
        assert bf_symmetric_binomial(h, n).log_bf10 == bf_symmetric_binomial(n - h, n).log_bf10


def test_symmetric_bf_identity():
    # B(a+1,b+1)/B(a,b) * 2^2 = 4ab/((a+b)(a+b+1))
    r = bf_symmetric_binomial(1, 2)
    # log-beta differences at shape 5000 carry ~1e-11 absolute error
    assert r.bf10 == pytest.approx(4 * 5000 * 5000 / (10000 * 10001), rel=1e-9)


def test_symmetric_bf_published_values():
    assert bf_symmetric_binomial(175421, 350757).bf10 == pytest.approx(0.168, abs=0.005)
    assert bf_symmetric_binomial(169635, 338985).bf10 == pytest.approx(0.190, abs=0.005)


def test_posterior_interval_uniform():
    m, lo, hi = posterior_interval_uniform(178079, 350757)
    assert (round(m, 4), round(lo, 4), round(hi, 4)) == (0.5077, 0.5060, 0.5094)
    m, lo, hi = posterior_interval_uniform(175421, 350757)
    assert (round(m, 4), round(lo, 4), round(hi, 4)) == (0.5001, 0.4985, 0.5018)
    m, lo, hi = posterior_interval_uniform(0, 0)
    assert (m, lo, hi) == pytest.approx((0.5, 0.025, 0.975), abs=1e-12)


def test_truncated_posterior_summary_inside_support():
    r = bf_informed_binomial(178079, 350757)
    assert 0.5 <= r.ci_low < r.posterior_mean < r.ci_high <= 1.0


def test_tiny_prior_mass_stays_finite():
    # mass 0.1^1e6 underflows linearly but is exact in log space
    pri = TruncatedBetaPrior(1e6, 1.0, 0.0, 0.1)
    assert pri.log_mass() == pytest.approx(1e6 * math.log(0.1), rel=1e-9)
    assert math.isfinite(bf_informed_binomial(5, 10, pri).log_bf10)


def test_empty_interval_rejected():
    with pytest.raises(DomainError):
        TruncatedBetaPrior(2.0, 2.0, 0.5, 0.5)
    assert issubclass(DegeneratePriorError, ValueError)


def test_count_domain():
    with pytest.raises(DomainError):
        bf_informed_binomial(11, 10)


def test_exact_p_values():
    assert exact_binomial_p(5, 10) == pytest.approx(1.0)
    assert exact_binomial_p(175421, 350757) == pytest.approx(0.887, abs=0.01)
    assert exact_binomial_p(178079, 350757) < 0.001
    with pytest.raises(DomainError):
        exact_binomial_p(1, 2, 1.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 300).flatmap(lambda n: st.tuples(st.integers(0, n), st.just(n))), st.floats(0.05, 0.95))
def test_exact_p_matches_scipy(kn, p0):
    k, n = kn
    assert exact_binomial_p(k, n, p0) == pytest.approx(stats.binomtest(k, n, p0).pvalue, rel=1e-6, abs=1e-12)


def test_exact_p_calibration():
    rng = np.random.default_rng(11)
    n, reps = 200, 2000
    ks = rng.binomial(n, 0.5, size=reps)
    rate = np.mean([exact_binomial_p(int(k), n) < 0.05 for k in ks])
    assert rate <= 0.05 + 3 * math.sqrt(0.05 * 0.95 / reps)


def test_report_dict():
    d = bf_informed_binomial(178079, 350757).to_dict()
    assert set(d) >= {"test", "k", "n", "log10_bf10", "bf10", "mean", "ci95"}
    assert SAME_SIDE_PRIOR.describe() in d["prior"]
