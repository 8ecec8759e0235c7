"""Two goals, one start: discrete denoiser vs. the continuous MSE baseline.

Trains both policies on the same demonstrations and budget, then reports
success, where the first actions land, and what the baseline does when it
only gets a single denoising step. Takes about a minute on one core.
"""

import numpy as np

from quantdiff.experiments import REACH, evaluate, run_recipe

disc = run_recipe(REACH, "discrete")
base = run_recipe(REACH, "mse_baseline")
modes = disc.env.mode_first_actions()
midpoint = modes.mean(axis=0)
print("expert first actions:", modes.tolist(), "midpoint:", midpoint.tolist())

for name, trained, steps in [("discrete N=10", disc, 10), ("baseline N=10", base, 10), ("baseline N=1", base, 1)]:
    rep, rec = evaluate(trained, steps=steps)
    first = np.asarray(rec.first_actions)
    left = float(np.mean(first[:, 0] < 0))
    print(f"{name:>14}: success {rep.success_rate:.3f}  mean first action {first.mean(axis=0).round(4).tolist()}"
          f"  left-goal share {left:.2f}  |first x| mean {np.abs(first[:, 0]).mean():.4f}")

# The iterative baseline averages over episodes (mean first action near the
# midpoint) but each episode commits to one goal once the sampler's noise
# breaks the tie. With one step it returns the conditional mean itself and
# heads straight between the goals.
