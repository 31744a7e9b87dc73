import io
import math

import numpy as np
import pytest
from scipy import stats

from coinbias.flipdata import ingest_csv, sequence_lengths, to_csv_string
from coinbias.learning import make_batches
from coinbias.simulator import (
    CoinSpec, GenerativeConfig, PersonSpec, RecoveryRow, config_from_ini, coverage_table, recovery_report, simulate,
    uniform_config,
)


def test_seed_determinism():
    cfg = uniform_config(3, 2, 500, theta=0.52, sigma_theta=0.1, seed=9)
    assert to_csv_string(simulate(cfg)) == to_csv_string(simulate(uniform_config(3, 2, 500, theta=0.52,
                                                                                 sigma_theta=0.1, seed=9)))
    assert to_csv_string(simulate(cfg)) != to_csv_string(simulate(uniform_config(3, 2, 500, theta=0.52,
                                                                                 sigma_theta=0.1, seed=10)))


def test_strict_ingest_accepts_output():
    d = simulate(uniform_config(4, 3, 700, theta=0.55, lambda_=0.53, rho=-1.0, sigma_alpha=0.2, seed=2))
    again = ingest_csv(io.StringIO(to_csv_string(d)), strict=True)
    assert again == d and d.violations == ()
    assert set(sequence_lengths(d).values()) == {100}


def test_fair_long_run():
    d = simulate(uniform_config(10, 2, 10_000, seed=3))
    se = math.sqrt(0.25 / len(d))
    assert abs(d.n_same / len(d) - 0.5) < 3 * se
    assert abs(d.n_heads / len(d) - 0.5) < 3 * se


def test_degenerate_same_side():
    cfg = GenerativeConfig((PersonSpec("p", theta=1 - 1e-15),), (CoinSpec("c"),), {"p": [("c", 5)]}, seed=1)
    d = simulate(cfg)
    assert np.all(d.start_heads == d.landed_heads)
    for s in set(d.sequence):
        m = np.array([x == s for x in d.sequence])
        assert len(set(d.start_heads[m])) == 1


def test_alternating_first_start():
    cfg = uniform_config(1, 1, 400, seed=0, first_start="alternate")
    d = simulate(cfg)
    firsts = [bool(d.start_heads[i]) for i in range(0, 400, 100)]
    assert firsts == [True, False, True, False]


def test_decaying_bias_config():
    # the pooled rate depends on flips per person: ~0.52 at 10,000, ~0.53 at about 7,300
    d = simulate(uniform_config(48, 4, 10_000, theta=0.5014, lambda_=0.525, rho=-1.6, seed=4))
    assert 0.50 <= d.n_same / len(d) <= 0.52
    bs = make_batches(d)
    early = [b for b in bs if b.t < 0.3]
    late = [b for b in bs if b.t > 1.5]
    rate = lambda bb: sum(x.h_H + x.n_T - x.h_T for x in bb) / sum(x.size for x in bb)  # noqa: E731
    assert rate(early) > rate(late)


def test_batch_time_mode_changes_only_the_time_grid():
    a = simulate(uniform_config(2, 1, 300, seed=5, time_mode="flip"))
    b = simulate(uniform_config(2, 1, 300, seed=5, time_mode="batch"))
    # with rho = 0 and lambda = 0.5 time does not matter
    assert a == b


def test_config_validation():
    with pytest.raises(ValueError):
        GenerativeConfig((PersonSpec("p", theta=1.0),), (CoinSpec("c"),), {"p": [("c", 1)]})
    with pytest.raises(ValueError):
        GenerativeConfig((PersonSpec("p"),), (CoinSpec("c"),), {"p": [("d", 1)]})
    with pytest.raises(ValueError):
        GenerativeConfig((PersonSpec("p"),), (CoinSpec("c"),), {"p": [("c", 1)]}, time_mode="x")
    with pytest.raises(ValueError):
        uniform_config(2, 1, 150)


def test_ini_config():
    text = "[simulate]\npersons = 3\ncoins = 2\nflips_per_person = 400\ntheta = 0.52\nlambda = 0.51\n"
    cfg = config_from_ini(text, seed=4)
    assert len(cfg.persons) == 3 and cfg.seed == 4 and cfg.n_flips == 1200
    assert all(p.lambda_ == 0.51 for p in cfg.persons)
    with pytest.raises(ValueError):
        config_from_ini(text + "bogus = 1\n")
    with pytest.raises(ValueError):
        config_from_ini(text + "[extra]\nx = 1\n")


def test_recovery_report_and_coverage():
    rows = recovery_report({"a": 1.0, "b": 2.0}, {"a": (1.1, 0.9, 1.3), "b": (2.5, 2.2, 2.8), "c": (0, 0, 0)})
    assert [r.covered for r in rows] == [True, False]
    with pytest.raises(KeyError):
        recovery_report({"z": 1.0}, {"a": (1, 0, 2)})
    tab = coverage_table([rows, [RecoveryRow("a", 1.0, 1.0, 0.5, 1.5), RecoveryRow("b", 2.0, 2.0, 1.9, 2.1)]])
    assert tab["a"]["coverage"] == 1.0 and tab["b"]["coverage"] == 0.5 and tab["b"]["replicates"] == 2


def test_marginal_binomial_small():
    """Quick version of the calibration check: same-side counts are Binomial(n, theta)."""
    counts = [simulate(uniform_config(1, 1, 1000, theta=0.55, seed=s)).n_same for s in range(60)]
    assert stats.kstest(counts, stats.binom(1000, 0.55).cdf).pvalue > 0.001
