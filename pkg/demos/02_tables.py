"""Per-person and per-coin tables rebuilt from the bundled flip-level reconstruction.

The reconstruction matches every published count; only within-cell flip
order and start sides are synthetic.
"""
from coinbias.flipdata import combined_row, exclude_outliers, summarize_by
from coinbias.tables import reconstruct_dataset

d = reconstruct_dataset()
print(f"{len(d)} flips, {len(d.persons)} people, {len(d.coins)} coins")

print("\nfive most same-side-prone people")
for r in summarize_by(d, "person")[-5:]:
    print(f"  {r.unit_id:<12} {r.k:>6}/{r.n:<6} {r.proportion:.3f} [{r.ci_low:.3f}, {r.ci_high:.3f}]  {r.label}")
c = combined_row(d, "person")
print(f"  {'combined':<12} {c.k:>6}/{c.n:<6} {c.proportion:.4f} [{c.ci_low:.4f}, {c.ci_high:.4f}]")

print("\nsmallest coins, uniform-prior vs Clopper-Pearson interval")
uni = {r.unit_id: r for r in summarize_by(d, "coin")}
for r in sorted(summarize_by(d, "coin", interval="exact"), key=lambda r: r.n)[:4]:
    u = uni[r.unit_id]
    print(f"  {r.unit_id:<14} n={r.n:<5} uniform [{u.ci_low:.3f}, {u.ci_high:.3f}]  "
          f"exact [{r.ci_low:.3f}, {r.ci_high:.3f}]")

kept, dropped = exclude_outliers(d)
print(f"\noutlier exclusion drops {dropped}; {kept.n_same}/{len(kept)} same-side remain")
