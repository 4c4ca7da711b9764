"""Small exact checks behind reward redistribution.

1. Moving reward around inside a trajectory (keeping every trajectory's total)
   never changes which policies are optimal -- checked by brute force.
2. A uniform per-episode split cannot fit two episodes that share a state but
   have different returns.
3. The loss is bounded by a variance + bias^2 sum.
4. The reward head's initial output variance shrinks as the head gets wider.

    python demos/theory_checks.py
"""

import json

import numpy as np

from arel import verify

rng = np.random.default_rng(0)
spec = verify.random_spec(rng)
same_totals = verify.redistribute_spec(spec, rng)
v = verify.check_return_equivalence(spec, same_totals)
print("one random pair:", v.to_dict())

tweaked = verify.perturb_spec(spec, (0, 0, 0, 0), (0, 0, 0), delta=1.0)
print("after changing one return:", verify.check_return_equivalence(spec, tweaked).to_dict())

print("\n100 random pairs:", verify.theorem_sweep(100))
print("\nuniform split, shared state:", json.dumps(verify.check_uniform_infeasibility(), indent=1))
print("\nloss bound:", verify.check_loss_bound(samples=1000))
print("\nwidth trend:", verify.check_width_variance_trend(bootstrap=200))
