"""How many actions of a 20-step chunk to execute before replanning.

Trains one long-chunk reach policy, sweeps execute_h, and then looks inside
the start-state chunks: decoding is per position, so a single chunk can
point some steps at one goal and other steps at the other.
"""

import numpy as np

from quantdiff.experiments import EXECUTE_SWEEP, REACH_LONG, evaluate, run_recipe
from quantdiff.rng import derive

trained = run_recipe(REACH_LONG)
for h in EXECUTE_SWEEP:
    rep, _ = evaluate(trained, execute_h=h)
    print(f"execute_h={h:>2}  success {rep.success_rate:.2f}")

policy, env = trained.policy(), trained.env
mixed = 0
for e in range(100):
    r = derive(0, "inspect", e)
    chunk = policy(env.observe(env.reset(r)), r)
    signs = set(np.sign(np.round(chunk[:7, 0], 3))) - {0.0}
    mixed += len(signs) > 1
print(f"start chunks whose first 7 steps head toward both goals: {mixed}/100")
