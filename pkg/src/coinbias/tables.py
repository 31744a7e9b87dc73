"""Published by-person and by-coin counts, and a flip-level dataset rebuilt from them.

The real flip-level export is not shipped with the package.  The two published
summary tables (same-side counts per person, heads counts per coin) together
with a person x coin flip-count table that satisfies both sets of margins
(``data/person_coin_flips.csv``, produced by ``tools/build_reconstruction.py``)
are enough to rebuild a protocol-valid flip ledger whose per-person same-side
counts and per-coin heads counts match the tables exactly.

What the rebuilt data cannot carry: the true split of each person's flips
across coins, the start-side composition, and the temporal order of
outcomes.  Analyses whose sufficient statistics are the per-person or
per-coin totals reproduce; learning-curve analyses do not.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import numpy as np

from .flipdata import FlipDataset, dataset_from_columns

__all__ = [
    "PublishedRow",
    "person_table",
    "coin_table",
    "pair_table",
    "reconstruct_dataset",
    "PUBLISHED_TOTALS",
]

# Totals reported alongside the tables (full data, and after dropping the
# four persons above 53% same-side).
PUBLISHED_TOTALS = {
    "n": 350_757,
    "same": 178_079,
    "heads": 175_421,
    "n_excluded": 338_985,
    "same_excluded": 171_517,
    "heads_excluded": 169_635,
}

SEQUENCE_LENGTH = 100


@dataclass(frozen=True)
class PublishedRow:
    unit_id: str
    k: int
    n: int
    n_groups: int
    proportion: float
    ci_low: float
    ci_high: float
    site: str = ""


def _read(name: str) -> list[dict]:
    with resources.files("coinbias.data").joinpath(name).open(newline="") as fh:
        return list(csv.DictReader(fh))


@lru_cache(maxsize=None)
def person_table() -> tuple[PublishedRow, ...]:
    """By-person rows: same-side count, flips, coins used, printed proportion and CI."""
    return tuple(
        PublishedRow(r["person"], int(r["same_side"]), int(r["flips"]), int(r["coins"]),
                     float(r["proportion"]), float(r["ci_low"]), float(r["ci_high"]), r["site"])
        for r in _read("table_persons.csv")
    )


@lru_cache(maxsize=None)
def coin_table() -> tuple[PublishedRow, ...]:
    """By-coin rows: heads count, flips, people, printed proportion and CI."""
    return tuple(
        PublishedRow(r["coin"], int(r["heads"]), int(r["flips"]), int(r["people"]),
                     float(r["proportion"]), float(r["ci_low"]), float(r["ci_high"]))
        for r in _read("table_coins.csv")
    )


@lru_cache(maxsize=None)
def pair_table() -> tuple[tuple[str, str, int], ...]:
    return tuple((r["person"], r["coin"], int(r["flips"])) for r in _read("person_coin_flips.csv"))


def _largest_remainder(total: int, weights: np.ndarray) -> np.ndarray:
    """Integer split of ``total`` proportional to ``weights``."""
    w = np.asarray(weights, dtype=float)
    raw = total * w / w.sum()
    out = np.floor(raw).astype(np.int64)
    short = total - int(out.sum())
    if short:
        order = np.argsort(-(raw - out), kind="stable")
        out[order[:short]] += 1
    return out


def _allocate_heads(flips: np.ndarray, heads: np.ndarray, flagged: np.ndarray, target: int | None) -> np.ndarray:
    """Per-cell heads, column sums fixed; flagged rows' total pinned to ``target``."""
    P, C = flips.shape

    def alloc(tilt: float) -> np.ndarray:
        w = flips * np.where(flagged[:, None], 1.0 + tilt, 1.0)
        out = np.zeros_like(flips)
        for c in range(C):
            used = flips[:, c] > 0
            out[used, c] = _largest_remainder(int(heads[c]), w[used, c])
        return np.minimum(out, flips)

    h = alloc(0.0)
    if target is None:
        return h
    lo, hi = -0.5, 0.5
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if alloc(mid)[flagged].sum() < target:
            lo = mid
        else:
            hi = mid
    h = alloc(lo)
    gap = target - int(h[flagged].sum())
    # unit moves inside columns that contain both kinds of row
    c = 0
    while gap != 0 and c < C:
        src = (~flagged if gap > 0 else flagged) & (flips[:, c] > 0)
        dst = (flagged if gap > 0 else ~flagged) & (flips[:, c] > 0)
        s_rows = np.flatnonzero(src & (h[:, c] > 0))
        d_rows = np.flatnonzero(dst & (h[:, c] < flips[:, c]))
        if len(s_rows) and len(d_rows):
            h[s_rows[0], c] -= 1
            h[d_rows[0], c] += 1
            gap += -1 if gap > 0 else 1
        else:
            c += 1
    if gap:
        raise RuntimeError("could not pin heads of flagged persons")
    return h


def _chain(n: int, same: int, heads: int) -> tuple[np.ndarray, np.ndarray]:
    """Start/landing arrays of one autocorrelated run with given totals.

    The run is an Euler path on the two-node graph {H, T}: a same-side flip is
    a self-loop, a side change is an edge to the other node.  Starting at
    node X, crossings alternate X->Y, Y->X, ...; self-loops are spread evenly
    over the visits to each node.
    """
    changes = n - same
    for start_heads in (True, False):
        d_h = (changes + 1) // 2 if start_heads else changes // 2
        d_t = changes - d_h
        s_h = heads - d_t  # heads landings = H self-loops + T->H crossings
        s_t = same - s_h
        if not (0 <= s_h <= same):
            continue
        if changes == 0 and (s_t if start_heads else s_h):
            continue
        break
    else:
        raise ValueError(f"no autocorrelated run with n={n}, same={same}, heads={heads}")
    visits_first = changes // 2 + 1
    visits_second = (changes + 1) // 2
    loops = {
        start_heads: _largest_remainder(s_h if start_heads else s_t, np.ones(visits_first)),
        not start_heads: (
            _largest_remainder(s_t if start_heads else s_h, np.ones(visits_second))
            if visits_second else np.zeros(0, dtype=np.int64)
        ),
    }
    start = np.empty(n, dtype=bool)
    landed = np.empty(n, dtype=bool)
    i = 0
    side = start_heads
    for v in range(changes + 1):
        k = int(loops[side][v // 2])
        start[i:i + k] = side
        landed[i:i + k] = side
        i += k
        if v < changes:
            start[i] = side
            landed[i] = not side
            side = not side
            i += 1
    assert i == n
    return start, landed


def reconstruct_dataset(pin_excluded_heads: bool = True) -> FlipDataset:
    """Flip-level dataset consistent with the published by-person and by-coin tables.

    Per-person same-side counts, per-coin heads counts, coins per person,
    people per coin and the recruitment site all match the tables; the
    outlier-excluded heads total is matched too when ``pin_excluded_heads``.
    """
    persons = person_table()
    coins = coin_table()
    p_index = {r.unit_id: i for i, r in enumerate(persons)}
    c_index = {r.unit_id: j for j, r in enumerate(coins)}
    flips = np.zeros((len(persons), len(coins)), dtype=np.int64)
    order: dict[int, list[int]] = {i: [] for i in range(len(persons))}
    for person, coin, n in pair_table():
        i, j = p_index[person], c_index[coin]
        flips[i, j] = n
        order[i].append(j)
    k_same = np.array([r.k for r in persons])
    heads = np.array([r.k for r in coins])
    flagged = k_same > 0.53 * np.array([r.n for r in persons])
    target = None
    if pin_excluded_heads:
        target = PUBLISHED_TOTALS["heads"] - PUBLISHED_TOTALS["heads_excluded"]
    same = np.zeros_like(flips)
    for i in range(len(persons)):
        used = flips[i] > 0
        same[i, used] = _largest_remainder(int(k_same[i]), flips[i, used])
    h = _allocate_heads(flips, heads, flagged, target)

    cols: dict[str, list] = {k: [] for k in ("p", "c", "site", "seq", "idx")}
    starts, landeds = [], []
    for i, prow in enumerate(persons):
        pos = 0
        for j in order[i]:
            n = int(flips[i, j])
            s, l = _chain(n, int(same[i, j]), int(h[i, j]))
            starts.append(s)
            landeds.append(l)
            cols["p"] += [prow.unit_id] * n
            cols["c"] += [coins[j].unit_id] * n
            cols["site"] += [prow.site] * n
            cols["seq"] += [f"{coins[j].unit_id}-{q // SEQUENCE_LENGTH:03d}" for q in range(n)]
            cols["idx"] += list(range(pos, pos + n))
            pos += n
    return dataset_from_columns(
        cols["p"], cols["c"], cols["site"], cols["seq"], cols["idx"],
        np.concatenate(starts), np.concatenate(landeds), strict=True,
    )
