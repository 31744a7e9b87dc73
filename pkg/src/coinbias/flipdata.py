"""Flip records: ingestion, validation, aggregation and descriptive summaries.

A dataset is stored column-wise (integer codes into person/coin indices) and
is read-only once built.  ``FlipRecord`` objects are materialized on demand.
"""
from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence, TextIO

import numpy as np

from .numerics import beta_quantile

__all__ = [
    "Side",
    "FlipRecord",
    "FlipDataset",
    "ProtocolViolation",
    "AggregateCell",
    "SummaryRow",
    "ParseError",
    "IntegrityError",
    "ProtocolError",
    "CSV_COLUMNS",
    "DEFAULT_SITES",
    "ingest_csv",
    "read_csv",
    "write_csv",
    "dataset_from_columns",
    "aggregate",
    "summarize_by",
    "summarize_counts",
    "combined_row",
    "write_summary_csv",
    "exclude_outliers",
    "betting_edge",
    "sequence_lengths",
    "to_csv_string",
]

CSV_COLUMNS = ("person_id", "coin_id", "site", "sequence_id", "flip_index", "start", "landed")

DEFAULT_SITES = (
    "Bc Thesis",
    "Internet",
    "Marathon",
    "Marathon-Manheim",
    "Marathon-MSc",
    "Marathon-PhD",
)


class ParseError(ValueError):
    def __init__(self, row: int, message: str):
        super().__init__(f"row {row}: {message}")
        self.row = row


class IntegrityError(ValueError):
    pass


class ProtocolError(ValueError):
    def __init__(self, violations: Sequence["ProtocolViolation"]):
        first = violations[0]
        super().__init__(
            f"{len(violations)} protocol violation(s); first at row {first.row} "
            f"(person {first.person_id}, sequence {first.sequence_id}): start "
            f"{first.got} but previous flip landed {first.expected}"
        )
        self.violations = list(violations)


class Side(str, enum.Enum):
    HEADS = "H"
    TAILS = "T"

    @classmethod
    def parse(cls, token: str) -> "Side":
        try:
            return cls(token.strip().upper())
        except ValueError:
            raise ValueError(f"side must be 'H' or 'T', got {token!r}") from None

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class FlipRecord:
    person_id: str
    coin_id: str
    site: str
    sequence_id: str
    flip_index: int
    start: Side
    landed: Side

    @property
    def same_side(self) -> bool:
        return self.start == self.landed


@dataclass(frozen=True)
class ProtocolViolation:
    row: int
    person_id: str
    sequence_id: str
    flip_index: int
    expected: Side
    got: Side


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class FlipDataset:
    """Immutable column store of flips, sorted by person then flip index.

    ``person`` and ``coin`` hold integer codes into ``persons``/``coins``;
    ``start_heads``/``landed_heads`` are booleans.
    """

    persons: tuple[str, ...]
    coins: tuple[str, ...]
    person_site: tuple[str, ...]
    person: np.ndarray
    coin: np.ndarray
    sequence: tuple[str, ...]
    flip_index: np.ndarray
    start_heads: np.ndarray
    landed_heads: np.ndarray
    violations: tuple[ProtocolViolation, ...] = field(default=())

    def __len__(self) -> int:
        return int(self.person.shape[0])

    @property
    def same(self) -> np.ndarray:
        return self.start_heads == self.landed_heads

    @property
    def n_same(self) -> int:
        return int(np.sum(self.same))

    @property
    def n_heads(self) -> int:
        return int(np.sum(self.landed_heads))

    def record(self, i: int) -> FlipRecord:
        p = int(self.person[i])
        return FlipRecord(
            person_id=self.persons[p],
            coin_id=self.coins[int(self.coin[i])],
            site=self.person_site[p],
            sequence_id=self.sequence[i],
            flip_index=int(self.flip_index[i]),
            start=Side.HEADS if self.start_heads[i] else Side.TAILS,
            landed=Side.HEADS if self.landed_heads[i] else Side.TAILS,
        )

    @property
    def records(self) -> Iterator[FlipRecord]:
        return (self.record(i) for i in range(len(self)))

    def subset(self, mask: np.ndarray) -> "FlipDataset":
        """New dataset restricted to ``mask``; unused persons/coins are dropped."""
        mask = np.asarray(mask, dtype=bool)
        keep_p = np.unique(self.person[mask])
        keep_c = np.unique(self.coin[mask])
        remap_p = np.full(len(self.persons), -1)
        remap_p[keep_p] = np.arange(len(keep_p))
        remap_c = np.full(len(self.coins), -1)
        remap_c[keep_c] = np.arange(len(keep_c))
        idx = np.flatnonzero(mask)
        kept_people = {self.persons[p] for p in keep_p}
        return FlipDataset(
            persons=tuple(self.persons[p] for p in keep_p),
            coins=tuple(self.coins[c] for c in keep_c),
            person_site=tuple(self.person_site[p] for p in keep_p),
            person=_readonly(remap_p[self.person[idx]]),
            coin=_readonly(remap_c[self.coin[idx]]),
            sequence=tuple(self.sequence[i] for i in idx),
            flip_index=_readonly(self.flip_index[idx]),
            start_heads=_readonly(self.start_heads[idx]),
            landed_heads=_readonly(self.landed_heads[idx]),
            violations=tuple(v for v in self.violations if v.person_id in kept_people),
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, FlipDataset):
            return NotImplemented
        return (
            self.persons == other.persons
            and self.coins == other.coins
            and self.person_site == other.person_site
            and self.sequence == other.sequence
            and all(
                np.array_equal(getattr(self, f), getattr(other, f))
                for f in ("person", "coin", "flip_index", "start_heads", "landed_heads")
            )
        )


def _find_violations(
    person: np.ndarray, sequence: Sequence[str], start: np.ndarray, landed: np.ndarray,
    persons: Sequence[str], flip_index: np.ndarray, rows: np.ndarray,
) -> list[ProtocolViolation]:
    out = []
    last: dict[tuple[int, str], bool] = {}
    for i in range(len(person)):
        key = (int(person[i]), sequence[i])
        prev = last.get(key)
        if prev is not None and bool(start[i]) != prev:
            out.append(
                ProtocolViolation(
                    row=int(rows[i]),
                    person_id=persons[key[0]],
                    sequence_id=sequence[i],
                    flip_index=int(flip_index[i]),
                    expected=Side.HEADS if prev else Side.TAILS,
                    got=Side.HEADS if start[i] else Side.TAILS,
                )
            )
        last[key] = bool(landed[i])
    return out


def dataset_from_columns(
    person_ids: Sequence[str],
    coin_ids: Sequence[str],
    sites: Sequence[str],
    sequence_ids: Sequence[str],
    flip_index: Sequence[int],
    start_heads: Sequence[bool],
    landed_heads: Sequence[bool],
    strict: bool = True,
    rows: Sequence[int] | None = None,
) -> FlipDataset:
    """Build and validate a dataset from parallel columns.

    Persons and coins are indexed in order of first appearance; records are
    stably sorted by (person, flip_index).
    """
    n = len(person_ids)
    if not all(len(c) == n for c in (coin_ids, sites, sequence_ids, flip_index, start_heads, landed_heads)):
        raise ValueError("all columns must have equal length")
    persons: dict[str, int] = {}
    coins: dict[str, int] = {}
    site_of: dict[str, str] = {}
    p_codes = np.empty(n, dtype=np.int64)
    c_codes = np.empty(n, dtype=np.int64)
    for i in range(n):
        pid = person_ids[i]
        p_codes[i] = persons.setdefault(pid, len(persons))
        c_codes[i] = coins.setdefault(coin_ids[i], len(coins))
        site = site_of.setdefault(pid, sites[i])
        if site != sites[i]:
            raise IntegrityError(f"person {pid!r} recorded under two sites: {site!r}, {sites[i]!r}")
    fidx = np.asarray(flip_index, dtype=np.int64)
    start = np.asarray(start_heads, dtype=bool)
    landed = np.asarray(landed_heads, dtype=bool)
    row_numbers = np.arange(2, n + 2) if rows is None else np.asarray(rows)
    order = np.lexsort((fidx, p_codes))
    p_codes, c_codes, fidx = p_codes[order], c_codes[order], fidx[order]
    start, landed, row_numbers = start[order], landed[order], row_numbers[order]
    seq = tuple(sequence_ids[i] for i in order)
    dup = (np.diff(p_codes) == 0) & (np.diff(fidx) == 0)
    if np.any(dup):
        j = int(np.flatnonzero(dup)[0]) + 1
        raise IntegrityError(
            f"duplicate flip_index {fidx[j]} for person {list(persons)[p_codes[j]]!r} (row {row_numbers[j]})"
        )
    person_names = tuple(persons)
    violations = _find_violations(p_codes, seq, start, landed, person_names, fidx, row_numbers)
    if strict and violations:
        raise ProtocolError(violations)
    return FlipDataset(
        persons=person_names,
        coins=tuple(coins),
        person_site=tuple(site_of[p] for p in person_names),
        person=_readonly(p_codes),
        coin=_readonly(c_codes),
        sequence=seq,
        flip_index=_readonly(fidx),
        start_heads=_readonly(start),
        landed_heads=_readonly(landed),
        violations=tuple(violations),
    )


def ingest_csv(
    stream: TextIO, strict: bool = True, allowed_sites: Iterable[str] | None = None
) -> FlipDataset:
    """Parse and validate a flip CSV.

    Parameters
    ----------
    stream : text stream with a header naming the columns in ``CSV_COLUMNS``
    strict : abort on the first protocol violation (a start side that differs
        from the previous landing in the same sequence). When False the
        violations are collected on ``dataset.violations`` instead.
    allowed_sites : optional allow-list for the ``site`` column.

    Raises
    ------
    ParseError for malformed rows, IntegrityError for duplicate
    (person, flip_index) pairs, ProtocolError in strict mode.
    """
    reader = csv.reader(stream)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise ParseError(1, "missing header row") from None
    missing = [c for c in CSV_COLUMNS if c not in header]
    if missing:
        raise ParseError(1, f"header lacks columns {missing}")
    col = {name: header.index(name) for name in CSV_COLUMNS}
    allowed = None if allowed_sites is None else set(allowed_sites)
    cols: dict[str, list] = {name: [] for name in CSV_COLUMNS}
    rows = []
    for rownum, raw in enumerate(reader, start=2):
        if not raw or all(not x.strip() for x in raw):
            continue
        if len(raw) < len(header):
            raise ParseError(rownum, f"expected {len(header)} fields, got {len(raw)}")
        vals = {name: raw[i].strip() for name, i in col.items()}
        try:
            fi = int(vals["flip_index"])
        except ValueError:
            raise ParseError(rownum, f"flip_index {vals['flip_index']!r} is not an integer") from None
        if fi < 0:
            raise ParseError(rownum, f"flip_index must be non-negative, got {fi}")
        try:
            start = Side.parse(vals["start"])
            landed = Side.parse(vals["landed"])
        except ValueError as exc:
            raise ParseError(rownum, str(exc)) from None
        if not vals["person_id"] or not vals["coin_id"]:
            raise ParseError(rownum, "empty person_id or coin_id")
        if allowed is not None and vals["site"] not in allowed:
            raise ParseError(rownum, f"site {vals['site']!r} not in the allow-list")
        for name in ("person_id", "coin_id", "site", "sequence_id"):
            cols[name].append(vals[name])
        cols["flip_index"].append(fi)
        cols["start"].append(start is Side.HEADS)
        cols["landed"].append(landed is Side.HEADS)
        rows.append(rownum)
    return dataset_from_columns(
        cols["person_id"], cols["coin_id"], cols["site"], cols["sequence_id"],
        cols["flip_index"], cols["start"], cols["landed"], strict=strict, rows=rows,
    )


def read_csv(path, strict: bool = True, allowed_sites=None) -> FlipDataset:
    with open(path, newline="", encoding="utf-8") as fh:
        return ingest_csv(fh, strict=strict, allowed_sites=allowed_sites)


def write_csv(d: FlipDataset, stream: TextIO) -> None:
    """Serialize in the ingest schema; ``ingest_csv`` reproduces ``d`` exactly."""
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    hs = np.where(d.start_heads, "H", "T")
    hl = np.where(d.landed_heads, "H", "T")
    for i in range(len(d)):
        p = d.person[i]
        w.writerow((d.persons[p], d.coins[d.coin[i]], d.person_site[p], d.sequence[i],
                    int(d.flip_index[i]), hs[i], hl[i]))


@dataclass(frozen=True)
class AggregateCell:
    coin_id: str
    person_id: str
    start: Side
    n_trials: int
    n_heads: int

    @property
    def n_same(self) -> int:
        return self.n_heads if self.start is Side.HEADS else self.n_trials - self.n_heads


def aggregate(d: FlipDataset) -> list[AggregateCell]:
    """One cell per observed (coin, person, start side), in sorted code order."""
    if len(d) == 0:
        return []
    key = (d.coin * len(d.persons) + d.person) * 2 + d.start_heads.astype(np.int64)
    keys, inv = np.unique(key, return_inverse=True)
    n = np.bincount(inv)
    h = np.bincount(inv, weights=d.landed_heads).astype(np.int64)
    out = []
    for k, nk, hk in zip(keys, n, h):
        start_heads = bool(k % 2)
        pc = k // 2
        out.append(
            AggregateCell(
                coin_id=d.coins[pc // len(d.persons)],
                person_id=d.persons[pc % len(d.persons)],
                start=Side.HEADS if start_heads else Side.TAILS,
                n_trials=int(nk),
                n_heads=int(hk),
            )
        )
    return out


@dataclass(frozen=True)
class SummaryRow:
    unit_id: str
    k: int
    n: int
    proportion: float
    ci_low: float
    ci_high: float
    n_groups: int = 0
    label: str = ""


INTERVALS = ("uniform", "exact")


def _uniform_prior_interval(k: int, n: int) -> tuple[float, float]:
    return beta_quantile(0.025, k + 1, n - k + 1), beta_quantile(0.975, k + 1, n - k + 1)


def _exact_interval(k: int, n: int) -> tuple[float, float]:
    # Clopper-Pearson
    lo = 0.0 if k == 0 else beta_quantile(0.025, k, n - k + 1)
    hi = 1.0 if k == n else beta_quantile(0.975, k + 1, n - k)
    return lo, hi


def summarize_counts(unit_ids, k, n, n_groups=None, labels=None, interval: str = "uniform") -> list[SummaryRow]:
    """Summary rows from raw counts, sorted by proportion (stable).

    ``interval="exact"`` swaps the uniform-prior credible interval for the
    Clopper-Pearson interval; the printed by-coin table was built that way.
    """
    if interval not in INTERVALS:
        raise ValueError(f"interval must be one of {INTERVALS}")
    make = _uniform_prior_interval if interval == "uniform" else _exact_interval
    rows = []
    for i, uid in enumerate(unit_ids):
        ki, ni = int(k[i]), int(n[i])
        if ni <= 0:
            raise ValueError(f"unit {uid!r} has no trials")
        lo, hi = make(ki, ni)
        rows.append(
            SummaryRow(
                unit_id=uid, k=ki, n=ni, proportion=ki / ni, ci_low=lo, ci_high=hi,
                n_groups=0 if n_groups is None else int(n_groups[i]),
                label="" if labels is None else labels[i],
            )
        )
    rows.sort(key=lambda r: r.proportion)
    return rows


def summarize_by(d: FlipDataset, unit: str, interval: str = "uniform") -> list[SummaryRow]:
    """By-person same-side summary or by-coin heads summary.

    Intervals are central 95% quantiles of Beta(k+1, n-k+1) unless
    ``interval="exact"``. ``n_groups`` is
    the number of coins a person used (or people who used a coin).
    """
    if unit == "person":
        codes, names, success, other = d.person, d.persons, d.same, d.coin
        labels = list(d.person_site)
    elif unit == "coin":
        codes, names, success, other = d.coin, d.coins, d.landed_heads, d.person
        labels = None
    else:
        raise ValueError(f"unit must be 'person' or 'coin', got {unit!r}")
    m = len(names)
    k = np.bincount(codes, weights=success, minlength=m).astype(np.int64)
    n = np.bincount(codes, minlength=m)
    pairs = np.unique(np.stack([codes, other], axis=1), axis=0)
    groups = np.bincount(pairs[:, 0], minlength=m)
    return summarize_counts(list(names), k, n, groups, labels, interval)


def combined_row(d: FlipDataset, unit: str, interval: str = "uniform") -> SummaryRow:
    if unit == "person":
        k, groups = d.n_same, len(d.coins)
    elif unit == "coin":
        k, groups = d.n_heads, len(d.persons)
    else:
        raise ValueError(f"unit must be 'person' or 'coin', got {unit!r}")
    return summarize_counts(["Combined"], [k], [len(d)], [groups], interval=interval)[0]


def write_summary_csv(rows: Sequence[SummaryRow], stream: TextIO, unit: str = "person") -> None:
    """Table-style export: unit, successes, flips, groups, proportion, CI, label."""
    w = csv.writer(stream, lineterminator="\n")
    if unit == "person":
        w.writerow(("person", "same_side", "flips", "coins", "proportion", "ci_low", "ci_high", "site"))
    else:
        w.writerow(("coin", "heads", "flips", "people", "proportion", "ci_low", "ci_high", "site"))
    for r in rows:
        w.writerow((r.unit_id, r.k, r.n, r.n_groups, f"{r.proportion:.6f}",
                    f"{r.ci_low:.6f}", f"{r.ci_high:.6f}", r.label))


def exclude_outliers(d: FlipDataset, threshold: float = 0.53) -> tuple[FlipDataset, list[str]]:
    """Drop every record of persons whose same-side proportion exceeds ``threshold``."""
    if not (0.5 < threshold < 1.0):
        raise ValueError(f"threshold must lie in (0.5, 1), got {threshold}")
    m = len(d.persons)
    k = np.bincount(d.person, weights=d.same, minlength=m)
    n = np.bincount(d.person, minlength=m)
    bad = k > threshold * n
    excluded = [d.persons[i] for i in np.flatnonzero(bad)]
    if not excluded:
        return d, []
    return d.subset(~bad[d.person]), excluded


def betting_edge(p_same: float, n_bets: int, stake: float = 1.0) -> float:
    """Expected profit from betting on the start side at even odds."""
    if not (0.0 <= p_same <= 1.0):
        raise ValueError(f"p_same must lie in [0, 1], got {p_same}")
    return n_bets * stake * (2.0 * p_same - 1.0)


def sequence_lengths(d: FlipDataset) -> dict[tuple[str, str], int]:
    """Number of flips in each (person, sequence) pair."""
    out: dict[tuple[str, str], int] = {}
    for p, s in zip(d.person, d.sequence):
        key = (d.persons[p], s)
        out[key] = out.get(key, 0) + 1
    return out


def to_csv_string(d: FlipDataset) -> str:
    buf = io.StringIO()
    write_csv(d, buf)
    return buf.getvalue()
