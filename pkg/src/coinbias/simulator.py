"""Generative model of flip campaigns, used as the oracle for the estimators.

Each person flips whole sequences of consecutive tosses with an assigned coin.
The first start side of a sequence is fair-random (or alternating), and every
later flip starts on the side the previous one landed on.  For the flip with
person-level index i the same-side logit is

    S = logit(theta) + logit(lambda) * t ** rho,   t = max(i / 1000, 1e-6),

and the flip lands heads with probability expit(logit(alpha) + S) when it
started heads and expit(logit(alpha) - S) when it started tails, which is the
exact inverse of the likelihood used by the estimators.
"""
from __future__ import annotations

import configparser
import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .flipdata import FlipDataset, dataset_from_columns
from .learning import T_FLOOR

__all__ = [
    "PersonSpec",
    "CoinSpec",
    "GenerativeConfig",
    "simulate",
    "uniform_config",
    "config_from_ini",
    "sim_params_from_ini",
    "RecoveryRow",
    "recovery_report",
    "coverage_table",
]


@dataclass(frozen=True)
class PersonSpec:
    person_id: str
    theta: float = 0.5
    lambda_: float = 0.5
    rho: float = 0.0
    site: str = "sim"


@dataclass(frozen=True)
class CoinSpec:
    coin_id: str
    alpha: float = 0.5


@dataclass(frozen=True)
class GenerativeConfig:
    """Persons, coins and who flips what.

    ``assignment`` maps a person id to a list of ``(coin_id, n_sequences)``
    pairs, flipped in that order.  ``time_mode="batch"`` holds t constant at
    the batch mean within each chunk of ``batch_size`` flips of a person-coin
    run, which matches the batched likelihood exactly; ``"flip"`` uses the
    per-flip index.
    """

    persons: tuple[PersonSpec, ...]
    coins: tuple[CoinSpec, ...]
    assignment: Mapping[str, Sequence[tuple[str, int]]]
    seed: int = 0
    flips_per_sequence: int = 100
    time_mode: str = "flip"
    first_start: str = "random"
    batch_size: int = 100

    def __post_init__(self):
        if not self.persons or not self.coins:
            raise ValueError("need at least one person and one coin")
        for p in self.persons:
            for name in ("theta", "lambda_"):
                v = getattr(p, name)
                if not 0.0 < v < 1.0:
                    raise ValueError(f"{p.person_id}: {name.rstrip('_')} must lie in (0, 1), got {v}")
            if not math.isfinite(p.rho):
                raise ValueError(f"{p.person_id}: rho must be finite")
        for c in self.coins:
            if not 0.0 < c.alpha < 1.0:
                raise ValueError(f"{c.coin_id}: alpha must lie in (0, 1), got {c.alpha}")
        ids = {c.coin_id for c in self.coins}
        pids = {p.person_id for p in self.persons}
        for pid, plan in self.assignment.items():
            if pid not in pids:
                raise ValueError(f"assignment names unknown person {pid!r}")
            for cid, nseq in plan:
                if cid not in ids:
                    raise ValueError(f"assignment names unknown coin {cid!r}")
                if nseq < 0:
                    raise ValueError("sequence counts must be non-negative")
        if self.time_mode not in ("flip", "batch"):
            raise ValueError("time_mode must be 'flip' or 'batch'")
        if self.first_start not in ("random", "alternate"):
            raise ValueError("first_start must be 'random' or 'alternate'")
        if self.flips_per_sequence < 1 or self.batch_size < 1:
            raise ValueError("flips_per_sequence and batch_size must be positive")

    @property
    def n_flips(self) -> int:
        return self.flips_per_sequence * sum(n for plan in self.assignment.values() for _, n in plan)


def _logit(p: float) -> float:
    return math.log(p) - math.log1p(-p)


def _times(coin_codes: np.ndarray, mode: str, batch_size: int) -> np.ndarray:
    idx = np.arange(len(coin_codes), dtype=float)
    if mode == "flip":
        return np.maximum(idx / 1000.0, T_FLOOR)
    new_run = np.ones(len(coin_codes), dtype=bool)
    new_run[1:] = coin_codes[1:] != coin_codes[:-1]
    run_id = np.cumsum(new_run) - 1
    pos = np.arange(len(coin_codes)) - np.flatnonzero(new_run)[run_id]
    new_batch = new_run.copy()
    chunk = pos // batch_size
    new_batch[1:] |= chunk[1:] != chunk[:-1]
    bid = np.cumsum(new_batch) - 1
    mean_idx = np.bincount(bid, idx) / np.bincount(bid)
    return np.maximum(mean_idx[bid] / 1000.0, T_FLOOR)


def simulate(config: GenerativeConfig) -> FlipDataset:
    """Draw a protocol-valid dataset; identical configs give identical datasets."""
    coin_alpha = {c.coin_id: _logit(c.alpha) for c in config.coins}
    coin_code = {c.coin_id: i for i, c in enumerate(config.coins)}
    m = config.flips_per_sequence
    streams = np.random.SeedSequence(config.seed).spawn(len(config.persons))
    cols: dict[str, list] = {k: [] for k in ("person", "coin", "site", "seq", "idx", "start", "landed")}
    for person, ss in zip(config.persons, streams):
        rng = np.random.default_rng(ss)
        plan = [(cid, s) for cid, n in config.assignment.get(person.person_id, ()) for s in range(n)]
        if not plan:
            continue
        n = len(plan) * m
        coins = np.repeat([coin_code[cid] for cid, _ in plan], m)
        la = np.repeat([coin_alpha[cid] for cid, _ in plan], m)
        t = _times(coins, config.time_mode, config.batch_size)
        with np.errstate(over="ignore"):
            same_logit = _logit(person.theta) + _logit(person.lambda_) * np.power(t, person.rho)
        u = rng.random(n)
        if config.first_start == "random":
            firsts = rng.random(len(plan)) < 0.5
        else:
            firsts = np.arange(len(plan)) % 2 == 0
        start = np.empty(n, dtype=bool)
        landed = np.empty(n, dtype=bool)
        for s in range(len(plan)):
            cur = bool(firsts[s])
            for i in range(s * m, (s + 1) * m):
                eta = la[i] + same_logit[i] if cur else la[i] - same_logit[i]
                p_heads = 1.0 / (1.0 + math.exp(-eta)) if eta > -700 else 0.0
                start[i] = cur
                cur = bool(u[i] < p_heads)
                landed[i] = cur
        seq_ids = [f"{person.person_id}:{cid}:{k}" for cid, k in plan]
        cols["person"] += [person.person_id] * n
        cols["coin"] += [config.coins[c].coin_id for c in coins]
        cols["site"] += [person.site] * n
        cols["seq"] += [sid for sid in seq_ids for _ in range(m)]
        cols["idx"] += range(n)
        cols["start"].append(start)
        cols["landed"].append(landed)
    if not cols["person"]:
        raise ValueError("assignment produces no flips")
    return dataset_from_columns(
        cols["person"], cols["coin"], cols["site"], cols["seq"], cols["idx"],
        np.concatenate(cols["start"]), np.concatenate(cols["landed"]), strict=True,
    )


def uniform_config(n_persons: int, n_coins: int, flips_per_person: int, *, theta=0.5, lambda_=0.5,
                   rho=0.0, alpha=0.5, sigma_theta: float = 0.0, sigma_alpha: float = 0.0,
                   sigma_lambda: float = 0.0, sigma_rho: float = 0.0, seed: int = 0,
                   time_mode: str = "flip", flips_per_sequence: int = 100,
                   first_start: str = "random") -> GenerativeConfig:
    """Homogeneous campaign, optionally with normal person/coin offsets on the logit scale.

    Offsets are drawn from ``seed`` and the flips use the same seed, so the
    whole dataset is a function of the arguments.  Each person's flips are split
    evenly over the coins in round-robin order.
    """
    if flips_per_person % flips_per_sequence:
        raise ValueError("flips_per_person must be a multiple of flips_per_sequence")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    expit = lambda x: 1.0 / (1.0 + math.exp(-x))  # noqa: E731
    persons = tuple(
        PersonSpec(f"P{k + 1:02d}", expit(_logit(theta) + sigma_theta * rng.standard_normal()),
                   expit(_logit(lambda_) + sigma_lambda * rng.standard_normal()),
                   rho + sigma_rho * rng.standard_normal())
        for k in range(n_persons)
    )
    coins = tuple(CoinSpec(f"C{j + 1:02d}", expit(_logit(alpha) + sigma_alpha * rng.standard_normal()))
                  for j in range(n_coins))
    nseq = flips_per_person // flips_per_sequence
    assignment = {}
    for k, p in enumerate(persons):
        counts = [nseq // n_coins + (1 if j < nseq % n_coins else 0) for j in range(n_coins)]
        order = [(k + j) % n_coins for j in range(n_coins)]
        assignment[p.person_id] = [(coins[j].coin_id, counts[i]) for i, j in enumerate(order) if counts[i]]
    return GenerativeConfig(persons, coins, assignment, seed=seed, flips_per_sequence=flips_per_sequence,
                            time_mode=time_mode, first_start=first_start)


_CFG_KEYS = {
    "persons": int, "coins": int, "flips_per_person": int, "theta": float, "lambda": float,
    "rho": float, "alpha": float, "sigma_theta": float, "sigma_alpha": float, "sigma_lambda": float,
    "sigma_rho": float, "seed": int, "time_mode": str, "flips_per_sequence": int, "first_start": str,
}


def sim_params_from_ini(text: str, seed: Optional[int] = None) -> dict:
    """Keyword arguments for ``uniform_config`` from a ``[simulate]`` section of flat keys."""
    cp = configparser.ConfigParser()
    cp.read_string(text)
    if not cp.has_section("simulate"):
        raise ValueError("config needs a [simulate] section")
    extra = [s for s in cp.sections() if s != "simulate"]
    if extra:
        raise ValueError(f"unknown config sections: {extra}")
    sec = cp["simulate"]
    unknown = set(sec) - set(_CFG_KEYS)
    if unknown:
        raise ValueError(f"unknown simulate keys: {sorted(unknown)}")
    vals = {k: _CFG_KEYS[k](v) for k, v in sec.items()}
    if seed is not None:
        vals["seed"] = seed
    out = {"n_persons": vals.pop("persons", 10), "n_coins": vals.pop("coins", 1),
           "flips_per_person": vals.pop("flips_per_person", 1000)}
    out.update({("lambda_" if k == "lambda" else k): v for k, v in vals.items()})
    return out


def config_from_ini(text: str, seed: Optional[int] = None) -> GenerativeConfig:
    return uniform_config(**sim_params_from_ini(text, seed))


# -- recovery ---------------------------------------------------------------

@dataclass(frozen=True)
class RecoveryRow:
    parameter: str
    truth: float
    mean: float
    ci_low: float
    ci_high: float

    @property
    def covered(self) -> bool:
        return self.ci_low <= self.truth <= self.ci_high


def recovery_report(truth: Mapping[str, float], fit_summary: Mapping[str, tuple[float, float, float]]
                    ) -> list[RecoveryRow]:
    """One row per true parameter; ``fit_summary`` maps names to (mean, lo, hi)."""
    missing = set(truth) - set(fit_summary)
    if missing:
        raise KeyError(f"fit summary lacks parameters: {sorted(missing)}")
    return [RecoveryRow(name, float(v), *map(float, fit_summary[name])) for name, v in truth.items()]


def coverage_table(reports: Sequence[Sequence[RecoveryRow]]) -> dict[str, dict]:
    """Coverage tallies per parameter across replicate reports."""
    out: dict[str, dict] = {}
    for rows in reports:
        for r in rows:
            e = out.setdefault(r.parameter, {"covered": 0, "replicates": 0})
            e["covered"] += int(r.covered)
            e["replicates"] += 1
    for e in out.values():
        e["coverage"] = e["covered"] / e["replicates"]
    return out
