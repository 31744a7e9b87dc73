import io
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from coinbias.flipdata import (
    IntegrityError, ParseError, ProtocolError, Side, aggregate, betting_edge, combined_row, dataset_from_columns,
    exclude_outliers, ingest_csv, sequence_lengths, summarize_by, summarize_counts, to_csv_string,
)
from helpers import HEADER, chain_rows, ingest_rows, toy_csv


def test_six_row_toy_file():
    d = ingest_rows(chain_rows("ann", "c1", "s1", "H", "HHTTHT"))
    assert len(d) == 6 and d.persons == ("ann",) and d.coins == ("c1",)
    assert d.record(0).start is Side.HEADS and d.record(5).landed is Side.TAILS


def test_bad_side_token_names_row():
    rows = chain_rows("ann", "c1", "s1", "H", "HHT")
    rows.append(("ann", "c1", "s1", 3, "T", "X"))
    with pytest.raises(ParseError) as e:
        ingest_rows(rows)
    assert e.value.row == 5 and "row 5" in str(e.value)


def test_negative_index_rejected():
    with pytest.raises(ParseError):
        ingest_rows([("ann", "c1", "s1", -1, "H", "H")])


def test_missing_column_rejected():
    with pytest.raises(ParseError):
        ingest_csv(io.StringIO("person_id,coin_id\nann,c1\n"))


def test_duplicate_index_is_integrity_error():
    rows = [("ann", "c1", "s1", 0, "H", "H"), ("ann", "c1", "s2", 0, "T", "T")]
    with pytest.raises(IntegrityError):
        ingest_rows(rows)


def test_protocol_violation_strict_and_lenient():
    rows = [("ann", "c1", "s1", 0, "H", "T"), ("ann", "c1", "s1", 1, "H", "H")]
    with pytest.raises(ProtocolError) as e:
        ingest_rows(rows)
    v = e.value.violations[0]
    assert (v.row, v.expected, v.got) == (3, Side.TAILS, Side.HEADS)
    d = ingest_rows(rows, strict=False)
    assert len(d) == 2 and len(d.violations) == 1


def test_new_sequence_may_start_anywhere():
    rows = chain_rows("ann", "c1", "s1", "H", "TT") + chain_rows("ann", "c1", "s2", "H", "H", start_index=2)
    assert len(ingest_rows(rows)) == 3


def test_site_allow_list():
    csv_text = toy_csv([("ann", "c1", "s1", 0, "H", "H")])
    with pytest.raises(ParseError):
        ingest_csv(io.StringIO(csv_text), allowed_sites=["Internet"])
    assert len(ingest_csv(io.StringIO(csv_text), allowed_sites=["Lab"])) == 1


def _toy_ten():
    return (chain_rows("ann", "c1", "s1", "H", "HHTHH")
            + chain_rows("bob", "c1", "s1", "T", "THH")
            + chain_rows("bob", "c2", "s2", "H", "TT", start_index=3))


def test_aggregate_matches_hand_tally():
    rows = _toy_ten()
    tally = Counter()
    heads = Counter()
    for p, c, _, _, start, land in rows:
        tally[(c, p, start)] += 1
        heads[(c, p, start)] += land == "H"
    cells = aggregate(ingest_rows(rows))
    got = {(c.coin_id, c.person_id, c.start.value): (c.n_trials, c.n_heads) for c in cells}
    assert got == {k: (tally[k], heads[k]) for k in tally}


def test_aggregate_empty():
    d = dataset_from_columns([], [], [], [], [], [], [])
    assert aggregate(d) == []


side = st.sampled_from("HT")


@st.composite
def datasets(draw):
    rows = []
    n_persons = draw(st.integers(1, 4))
    for p in range(n_persons):
        idx = 0
        for s in range(draw(st.integers(1, 3))):
            landings = draw(st.text(alphabet="HT", min_size=1, max_size=12))
            coin = f"c{draw(st.integers(0, 2))}"
            rows += chain_rows(f"p{p}", coin, f"s{s}", draw(side), landings, start_index=idx)
            idx += len(landings)
    return ingest_rows(rows)


@settings(max_examples=50, deadline=None)
@given(datasets())
def test_aggregation_conservation(d):
    cells = aggregate(d)
    assert sum(c.n_trials for c in cells) == len(d)
    assert sum(c.n_same for c in cells) == d.n_same
    assert sum(c.n_heads for c in cells) == d.n_heads


@settings(max_examples=50, deadline=None)
@given(datasets())
def test_csv_round_trip(d):
    again = ingest_csv(io.StringIO(to_csv_string(d)))
    assert again == d


@settings(max_examples=30, deadline=None)
@given(datasets(), st.floats(0.51, 0.95))
def test_exclude_outliers_idempotent(d, thr):
    once, _ = exclude_outliers(d, thr)
    if len(once) == 0:
        return
    twice, dropped = exclude_outliers(once, thr)
    assert twice == once and dropped == []


def test_exclude_removes_high_person():
    rows = (chain_rows("hi", "c1", "s1", "H", "HHHHHHTTTT")  # 6/10 same
            + chain_rows("ok", "c1", "s1", "H", "HTHTHTHTHT"))
    d, dropped = exclude_outliers(ingest_rows(rows), 0.53)
    assert dropped == ["hi"] and d.persons == ("ok",)


def test_exclude_identity_at_half():
    rows = chain_rows("a", "c1", "s1", "H", "HTHT") + chain_rows("b", "c1", "s1", "T", "THTH")
    d0 = ingest_rows(rows)
    d, dropped = exclude_outliers(d0)
    assert dropped == [] and d == d0


def test_summary_rows_against_published_rows():
    r = summarize_counts(["TianqiP"], [1682], [2800])[0]
    assert (round(r.proportion, 3), round(r.ci_low, 3), round(r.ci_high, 3)) == (0.601, 0.582, 0.619)
    r = summarize_counts(["XiaoyiL"], [780], [1600])[0]
    assert (round(r.proportion, 3), round(r.ci_low, 3), round(r.ci_high, 3)) == (0.487, 0.463, 0.512)


def test_summary_row_k0_n1():
    r = summarize_counts(["x"], [0], [1])[0]
    # Beta(1,2): F(x) = 1 - (1-x)^2
    assert r.proportion == 0
    assert r.ci_low == pytest.approx(1 - 0.975 ** 0.5, abs=1e-10)
    assert r.ci_high == pytest.approx(1 - 0.025 ** 0.5, abs=1e-10)


def test_interval_shrinks_with_n():
    widths = [(lambda r: r.ci_high - r.ci_low)(summarize_counts(["x"], [n // 2], [n])[0]) for n in (10, 100, 1000)]
    assert widths[0] > widths[1] > widths[2]


def test_summarize_by_sorted_and_counts():
    d = ingest_rows(_toy_ten())
    rows = summarize_by(d, "person")
    assert [r.proportion for r in rows] == sorted(r.proportion for r in rows)
    bob = next(r for r in rows if r.unit_id == "bob")
    assert (bob.k, bob.n, bob.n_groups) == (3, 5, 2)
    coins = summarize_by(d, "coin")
    assert sum(r.k for r in coins) == d.n_heads
    comb = combined_row(d, "person")
    assert (comb.k, comb.n) == (d.n_same, len(d))
    with pytest.raises(ValueError):
        summarize_by(d, "site")


def test_betting_edge():
    assert betting_edge(0.5, 1000) == 0
    assert betting_edge(0.5095, 1000) == pytest.approx(19.0)
    assert betting_edge(0.5077, 1000) == pytest.approx(15.4)
    with pytest.raises(ValueError):
        betting_edge(1.2, 10)


def test_sequence_lengths():
    d = ingest_rows(_toy_ten())
    assert sequence_lengths(d) == {("ann", "s1"): 5, ("bob", "s1"): 3, ("bob", "s2"): 2}


def test_dataset_is_read_only():
    d = ingest_rows(_toy_ten())
    with pytest.raises(ValueError):
        d.landed_heads[0] = True


def test_header_only_file():
    d = ingest_csv(io.StringIO(HEADER))
    assert len(d) == 0 and np.asarray(d.same).size == 0


@pytest.mark.parametrize("k,n", [(0, 5), (48, 100), (158, 300), (3821, 7514), (10, 10)])
def test_exact_interval_matches_clopper_pearson(k, n):
    from scipy.stats import binomtest

    r = summarize_counts(["x"], [k], [n], interval="exact")[0]
    ci = binomtest(k, n).proportion_ci(0.95, method="exact")
    assert r.ci_low == pytest.approx(ci.low, abs=1e-10) and r.ci_high == pytest.approx(ci.high, abs=1e-10)


def test_coin_row_printed_with_exact_interval():
    r = summarize_counts(["0.25CAD"], [48], [100], interval="exact")[0]
    assert (round(r.ci_low, 3), round(r.ci_high, 3)) == (0.379, 0.582)
    with pytest.raises(ValueError):
        summarize_counts(["x"], [1], [2], interval="wald")
