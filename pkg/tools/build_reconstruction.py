"""Solve for a person x coin flip-count table consistent with both published margins.

Constraints: every person uses exactly the listed number of coins, every coin
is used by exactly the listed number of people, row sums equal each person's
flips, column sums equal each coin's flips, and every used pair has at least
100 flips (one full sequence) whenever the margins allow it.

Writes src/coinbias/data/person_coin_flips.csv.  Run once; the output is
committed so that the package itself never needs an integer-programming solver.
"""
from pathlib import Path
import csv

import numpy as np
from scipy.optimize import Bounds, LinearConstraint, milp
from scipy.sparse import lil_matrix

DATA = Path(__file__).resolve().parents[1] / "src" / "coinbias" / "data"
MIN_RUN = 100


def load(name):
    with open(DATA / name, newline="") as fh:
        return list(csv.DictReader(fh))


def main():
    persons = load("table_persons.csv")
    coins = load("table_coins.csv")
    P, C = len(persons), len(coins)
    n_p = np.array([int(r["flips"]) for r in persons])
    d_p = np.array([int(r["coins"]) for r in persons])
    n_c = np.array([int(r["flips"]) for r in coins])
    d_c = np.array([int(r["people"]) for r in coins])
    cap = np.minimum.outer(n_p, n_c)

    nv = 2 * P * C  # y (edge used) then x (flips)
    A = lil_matrix((2 * P + 2 * C + 2 * P * C, nv))
    lo, hi = [], []
    r = 0
    for p in range(P):
        for c in range(C):
            A[r, p * C + c] = 1
            A[r + 1, P * C + p * C + c] = 1
        lo += [d_p[p], n_p[p]]
        hi += [d_p[p], n_p[p]]
        r += 2
    for c in range(C):
        for p in range(P):
            A[r, p * C + c] = 1
            A[r + 1, P * C + p * C + c] = 1
        lo += [d_c[c], n_c[c]]
        hi += [d_c[c], n_c[c]]
        r += 2
    for p in range(P):
        for c in range(C):
            y, x = p * C + c, P * C + p * C + c
            A[r, x], A[r, y] = 1, -min(MIN_RUN, cap[p, c])
            lo.append(0), hi.append(np.inf)
            A[r + 1, x], A[r + 1, y] = 1, -cap[p, c]
            lo.append(-np.inf), hi.append(0)
            r += 2
    ub = np.concatenate([np.ones(P * C), cap.ravel()])
    res = milp(
        np.zeros(nv),
        constraints=LinearConstraint(A.tocsr(), lo, hi),
        integrality=np.ones(nv),
        bounds=Bounds(0, ub),
        options={"time_limit": 600},
    )
    if res.status != 0:
        raise SystemExit(f"no feasible table: {res.message}")
    x = np.rint(res.x[P * C:]).astype(int).reshape(P, C)
    assert (x.sum(1) == n_p).all() and (x.sum(0) == n_c).all()
    assert ((x > 0).sum(1) == d_p).all() and ((x > 0).sum(0) == d_c).all()
    with open(DATA / "person_coin_flips.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["person", "coin", "flips"])
        for p in range(P):
            for c in range(C):
                if x[p, c] > 0:
                    w.writerow([persons[p]["person"], coins[c]["coin"], x[p, c]])
    print(f"wrote {(x > 0).sum()} person-coin pairs")


if __name__ == "__main__":
    main()
