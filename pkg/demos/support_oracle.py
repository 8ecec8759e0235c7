"""Categorical vs. mean decoding of the exact posterior over a finite support.

For each noise level: every argmax decode lands on the support, while the
posterior mean (the MSE-optimal answer) falls between bins whenever the
posterior is uncertain.
"""

from quantdiff.oracle import CategoricalPrior, run_support_experiment
from quantdiff.rng import derive

taus = [0.2, 0.4, 0.5, 0.6, 0.8]
for prior in (CategoricalPrior.uniform([-1.0, 1.0]), CategoricalPrior.codec_bins(16),
              CategoricalPrior.random(16, derive(0, "prior"))):
    rep = run_support_experiment(prior, taus, alpha=0.1, trials=2000, entropy_floor=0.1, seed=0)
    print(rep.summary_table())
    print()
