import io

import numpy as np
from scipy.special import expit, log_expit

from coinbias.flipdata import ingest_csv
from coinbias.mcmc import GlobalBlock
from coinbias.numerics import log_beta, log_gamma
from coinbias.priors import BetaLocation

HEADER = "person_id,coin_id,site,sequence_id,flip_index,start,landed\n"


def toy_csv(rows):
    """rows: (person, coin, seq, index, start, landed) tuples; site fixed."""
    return HEADER + "".join(f"{p},{c},Lab,{s},{i},{a},{b}\n" for p, c, s, i, a, b in rows)


def chain_rows(person, coin, seq, first_start, landings, start_index=0):
    rows, cur = [], first_start
    for i, land in enumerate(landings):
        rows.append((person, coin, seq, start_index + i, cur, land))
        cur = land
    return rows


def ingest_rows(rows, strict=True):
    return ingest_csv(io.StringIO(toy_csv(rows)), strict=strict)


class BetaBinomial:
    """Binomial likelihood with a Beta prior, sampled on logit(p)."""

    def __init__(self, k, n, a=2.0, b=2.0):
        self.k, self.n = k, n
        self.prior = BetaLocation(a, b)
        self.dim = 1
        self.blocks = [GlobalBlock(np.array([0]), "p")]
        self.moves = []
        self.derived_names = ["p"]
        self.log_choose = float(log_gamma(n + 1.0) - log_gamma(k + 1.0) - log_gamma(n - k + 1.0))
        self.exact = self.log_choose + log_beta(a + k, b + n - k) - log_beta(a, b)

    def log_density(self, th):
        v = th[0]
        return (self.log_choose + self.k * log_expit(v) + (self.n - self.k) * log_expit(-v)
                + float(self.prior.log_density_v(v)))

    def initial_point(self, rng):
        return np.array([rng.normal()])

    def initial_scales(self):
        return np.array([0.5])

    def derive(self, th):
        return expit(np.atleast_2d(th))
