"""Simulate a campaign whose same-side bias fades with practice, then fit the learning model.

Time is scaled as flip index / 1000, so with rho < 0 the toss-order term
shrinks as people keep flipping.
"""
import numpy as np

from coinbias.learning import fit_learning, learning_curve, learning_summary, make_batches
from coinbias.mcmc import SamplerSettings
from coinbias.simulator import simulate, uniform_config

truth = dict(theta=0.505, lambda_=0.53, rho=-1.0)
data = simulate(uniform_config(20, 2, 6000, seed=11, time_mode="batch", **truth))
print(f"simulated {len(data)} flips, pooled same-side {data.n_same / len(data):.4f}")

draws = fit_learning(make_batches(data), settings=SamplerSettings(chains=4, warmup=1000, iters=1000, seed=11))
s = learning_summary(draws)
for key, true in (("pr_baseline", truth["theta"]), ("pr_toss_order", truth["lambda_"]), ("rho", truth["rho"])):
    m, (lo, hi) = s[key]["mean"], s[key]["ci95"]
    print(f"{key:<14} truth {true:+.3f}  posterior {m:+.4f} [{lo:+.4f}, {hi:+.4f}]")

print("\npopulation Pr(same side) by scaled time")
for t, m, lo, hi in learning_curve(draws, np.array([0.05, 0.5, 1.0, 3.0, 6.0])):
    print(f"  t={t:4.2f}  {m:.4f} [{lo:.4f}, {hi:.4f}]")
