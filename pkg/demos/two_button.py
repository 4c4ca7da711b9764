"""Two agents, two buttons, one door -- and the reward arrives only at the end.

Trains the shared tabular policy three ways and prints greedy success rates
as training goes on:

* final   -- the raw episodic reward, on the last step only
* uniform -- the episodic reward spread evenly over all steps
* arel    -- per-step rewards predicted by the attention credit network

    python demos/two_button.py [episodes] [seed]
"""

import sys

from arel import config
from arel.marl_learner import run_seed

episodes = int(sys.argv[1]) if len(sys.argv) > 1 else 1500
seed = int(sys.argv[2]) if len(sys.argv) > 2 else 0
cfg = config.load("configs/two_button.cfg").replace(episodes=episodes, eval_every=max(1, episodes // 10))

for strategy in ("final", "uniform", "arel"):
    res = run_seed(cfg, seed, strategy)
    curve = "  ".join(f"{r['success_rate']:.2f}" for r in res.curve)
    print(f"{strategy:8s} {curve}")
    if res.credit_losses:
        print(f"{'':8s} credit loss {res.credit_losses[0]:.3f} -> {res.credit_losses[-1]:.3f}")
