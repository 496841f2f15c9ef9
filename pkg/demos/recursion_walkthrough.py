"""Follow recursive regularization round by round with an exact inner solver.

With zero noise and exact inner solves the only error left is the one
introduced by regularization itself.  Each round doubles the weight of a new
anchor, so the anchors walk toward the true saddle point.
"""

import numpy as np

from dpsaddle.problems import make_instance
from dpsaddle.solvers import ExactSubroutine, build_schedule, lambda_default, recursive_regularization

inst = make_instance("quadratic_scsc_ssp", d_w=3, noise=0.0)
truth = inst.population_truth().point
n = 2**20
data = np.broadcast_to(np.zeros((1, inst.sample_dim)), (n, inst.sample_dim))

n_prime = build_schedule(n, 1, 1, 1, 1, "ssp", rounds=1, enforce_floor=False).chunk_size
lam = lambda_default("ssp", 0.0, inst.geometry.kappa, inst.operator_bound, n_prime, inst.diameter, n=n, capped=True)
res = recursive_regularization(data, inst, ExactSubroutine(), lam, "ssp")

sched = res.schedule
print(f"lambda={lam:.4g} rounds={sched.rounds} chunk size={sched.chunk_size}")
print("loss weights:", [f"{w:.3g}" for w in sched.weights])
for k, anchor in enumerate(res.anchors):
    print(f"anchor {k}: distance to truth {inst.geometry.norm(anchor - truth):.4f}")
print(f"output distance {inst.geometry.norm(res.point - truth):.4f}, "
      f"target D/2^T = {inst.diameter / 2**sched.rounds:.4f}")
print(f"largest regularized operator bound / L = "
      f"{max(p.operator_bound for p in res.problems) / inst.operator_bound:.2f}")
