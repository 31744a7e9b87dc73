import io
import math

import numpy as np
import pytest
from scipy import integrate, stats
from scipy.special import expit, log_expit

from coinbias.binomial import bf_informed_binomial
from coinbias.mcmc import SamplerSettings
from coinbias.sensitivity import (
    DEFAULT_PHI_GRID, BFFGrid, NormalMomentPrior, bff_hier, bff_nonhier, nm_logpdf, nm_testing_priors, write_bff_csv,
)
from coinbias.simulator import simulate, uniform_config


def test_density_vanishes_at_null():
    assert nm_logpdf(0.0, NormalMomentPrior(0.04)) == -math.inf
    assert nm_logpdf(-0.01, NormalMomentPrior(0.04, positive_only=True)) == -math.inf


def test_density_at_mode():
    phi = 0.04
    assert math.exp(nm_logpdf(phi, NormalMomentPrior(phi))) == pytest.approx(2 / (math.sqrt(math.pi) * phi * math.e),
                                                                             rel=1e-13)
    assert nm_logpdf(phi, NormalMomentPrior(phi, True)) == pytest.approx(nm_logpdf(phi, NormalMomentPrior(phi)) + math.log(2))


@pytest.mark.parametrize("phi", [0.01, 0.04, 0.08])
@pytest.mark.parametrize("positive", [False, True])
def test_density_integrates_to_one(phi, positive):
    pri = NormalMomentPrior(phi, positive)
    lo = 0.0 if positive else -12 * phi
    val, _ = integrate.quad(lambda x: math.exp(nm_logpdf(x, pri)), lo, 12 * phi, points=[phi] if positive else [-phi, phi])
    assert val == pytest.approx(1.0, abs=1e-10)


def test_symmetry_and_mode():
    pri = NormalMomentPrior(0.03)
    x = np.linspace(0.001, 0.2, 50)
    assert np.allclose(nm_logpdf(x, pri), nm_logpdf(-x, pri))
    h = 1e-6
    for m in (0.03, -0.03):
        left, right = nm_logpdf(m - h, pri), nm_logpdf(m + h, pri)
        grad_l = nm_logpdf(m - h, pri) - nm_logpdf(m - 2 * h, pri)
        grad_r = nm_logpdf(m + 2 * h, pri) - right
        assert grad_l > 0 > grad_r or grad_l < 0 < grad_r
        assert left < nm_logpdf(m, pri) + 1e-12 and right < nm_logpdf(m, pri) + 1e-12


def test_invalid_phi():
    with pytest.raises(ValueError):
        NormalMomentPrior(0.0)


def _oracle_log_bf(k, n, phi, positive):
    pri = NormalMomentPrior(phi, positive)

    def f(x):
        return math.exp(k * log_expit(x) + (n - k) * log_expit(-x) + n * math.log(2) + nm_logpdf(x, pri))

    lo = 0.0 if positive else -15 * phi
    val, _ = integrate.quad(f, lo, 15 * phi, points=[phi] if positive else [-phi, phi], epsabs=0, epsrel=1e-11,
                            limit=400)
    return math.log(val)


@pytest.mark.parametrize("kind", ["same-side", "heads-tails"])
def test_nonhier_against_direct_quadrature(kind):
    grid = [0.01, 0.04, 0.08]
    g = bff_nonhier(560, 1000, grid, kind)
    for phi, lb in zip(grid, g.log_bf):
        assert lb == pytest.approx(_oracle_log_bf(560, 1000, phi, kind == "same-side"), rel=1e-8, abs=1e-9)


@pytest.mark.parametrize("n", [10, 100, 1000])
def test_data_at_null_never_favors_alternative(n):
    for kind in ("same-side", "heads-tails"):
        g = bff_nonhier(n // 2, n, None, kind)
        assert np.all(g.log_bf <= 1e-12)


def test_small_phi_limit_tends_to_one():
    g = bff_nonhier(520, 1000, [1e-5, 1e-4], "same-side")
    # first order: log BF ~ (k - n/2) * E[x] with E[x] = 2 phi / sqrt(pi) under the one-sided prior
    assert g.log_bf == pytest.approx(20 * 2 / math.sqrt(math.pi) * np.array([1e-5, 1e-4]), rel=0.01)
    h = bff_nonhier(520, 1000, [1e-5, 1e-4], "heads-tails")
    assert np.all(np.abs(h.log_bf) < 1e-5)


def test_curve_is_smooth():
    grid = np.round(np.arange(0.005, 0.0801, 0.005), 6)
    g = bff_nonhier(5150, 10_000, grid, "same-side")
    assert np.all(np.abs(np.diff(g.log10_bf)) < 1.0)
    # on the full counts the curve is steep below phi = 0.015: a narrow prior puts almost no mass
    # near the observed logit 0.031 (values checked against a 40-digit mpmath integral)
    full = bff_nonhier(178079, 350757, grid, "same-side")
    assert full.log10_bf[0] == pytest.approx(10.9108, abs=1e-3)
    assert full.log10_bf[1] == pytest.approx(15.7470, abs=1e-3)
    assert np.all(np.abs(np.diff(full.log10_bf[2:])) < 1.0)


def test_cross_module_sanity_band():
    # mode near 0.51 on the probability scale
    g = bff_nonhier(178079, 350757, [math.log(0.51 / 0.49)], "same-side")
    assert abs(g.log10_bf[0] - bf_informed_binomial(178079, 350757).log10_bf10) < 1.0


def test_grid_validation_and_export():
    with pytest.raises(ValueError):
        BFFGrid(np.array([0.02, 0.01]), np.zeros(2), "x")
    with pytest.raises(ValueError):
        bff_nonhier(5, 10, [0.0, 0.01])
    with pytest.raises(ValueError):
        bff_nonhier(5, 10, kind="both")
    g = bff_nonhier(60, 100, [0.01, 0.02])
    assert g.mode_probability == pytest.approx(expit(np.array([0.01, 0.02])))
    buf = io.StringIO()
    write_bff_csv(g, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "phi,mode_probability,log10_bf" and lines[1] == "0,0.500000,0.000000"
    assert len(lines) == 4
    assert len(DEFAULT_PHI_GRID) == 16 and DEFAULT_PHI_GRID[0] == 0.005 and DEFAULT_PHI_GRID[-1] == 0.08


def test_hier_requires_flag():
    with pytest.raises(RuntimeError):
        bff_hier("same_side", [0.01], data=simulate(uniform_config(2, 1, 200, seed=0)))


def test_testing_priors_mapping():
    p = nm_testing_priors({"person_het": 0.03})
    assert p.beta_mu.positive_only and not p.alpha_mu.positive_only
    assert p.sigma_beta.phi == 0.03 and p.sigma_alpha.phi == 0.02


def test_hier_grid_runs_on_small_data():
    data = simulate(uniform_config(4, 2, 1000, theta=0.6, seed=1))
    g = bff_hier("same_side", [0.02, 0.2], data=data, settings=SamplerSettings(chains=2, warmup=300, iters=300, seed=0),
                 allow_expensive=True)
    assert g.kind == "same_side" and not g.errors
    # 4000 flips at 0.6: evidence for the component, stronger when the prior mode is near logit 0.6
    assert np.all(g.log10_bf > 1) and g.log10_bf[1] > g.log10_bf[0]
