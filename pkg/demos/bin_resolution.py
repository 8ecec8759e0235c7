"""Precision placement needs fine bins: success vs. K on precision_slot.

Every arm uses the same demonstrations, chunk layout and training budget;
only the number of bins changes. Budget is about 30-100 s per arm.
"""

import sys

from quantdiff.experiments import PRECISION, evaluate, run_recipe

bins = [int(b) for b in sys.argv[1:]] or [8, 32, 256]
for K in bins:
    trained = run_recipe(PRECISION.with_bins(K))
    rep, _ = evaluate(trained)
    width = 2.0 / K * (trained.codec.q_hi - trained.codec.q_lo)[0] / 2.0
    print(f"K={K:>4}  bin width {width:.4f} (slot {trained.env.slot_width:.3f})  success {rep.success_rate:.3f}")
