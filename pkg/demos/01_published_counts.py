"""Bayes factors, exact tests and the Bayes factor function from the pooled counts alone.

Run: python3 demos/01_published_counts.py   (a few seconds)
"""
from coinbias.binomial import bf_informed_binomial, bf_symmetric_binomial, exact_binomial_p
from coinbias.flipdata import betting_edge
from coinbias.sensitivity import bff_nonhier
from coinbias.tables import PUBLISHED_TOTALS as T

same = bf_informed_binomial(T["same"], T["n"])
print(f"same-side: {T['same']}/{T['n']}  log10 BF10 = {same.log10_bf10:.3f}  "
      f"posterior mean {same.posterior_mean:.4f}")
excl = bf_informed_binomial(T["same_excluded"], T["n_excluded"])
print(f"  after dropping the four >53% flippers: log10 BF10 = {excl.log10_bf10:.3f}")

ht = bf_symmetric_binomial(T["heads"], T["n"])
print(f"heads-tails: BF10 = {10 ** ht.log10_bf10:.3f} (evidence for no bias: {10 ** -ht.log10_bf10:.1f} to 1)")

print(f"exact two-sided p: heads {exact_binomial_p(T['heads'], T['n']):.3f}, "
      f"same side {exact_binomial_p(T['same'], T['n']):.1e}")

g = bff_nonhier(T["same"], T["n"])
print("\nnormal-moment Bayes factor function (same side):")
for phi, prob, lb in g.rows():
    print(f"  mode {prob:.4f}  log10 BF {lb:7.3f}")
print(f"peak at mode probability {g.mode_probability[g.argmax()]:.4f}")

print(f"\n1000 one-dollar bets at Pr = 0.508 return {betting_edge(0.508, 1000):.0f} dollars on average")
