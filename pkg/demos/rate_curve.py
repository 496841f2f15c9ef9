"""A small rate sweep: mean saddle gap against n on a log-log scale.

This is a shrunk version of the acceptance sweep (fewer seeds, smaller n) so
it finishes in well under a minute.  The slope of the fitted line estimates
the exponent in gap ~ n^slope.
"""

import numpy as np

from dpsaddle.evaluation import SweepConfig, rate_sweep

cfg = SweepConfig(ns=(256, 512, 1024, 2048), seeds=5, dims=(5,), lambda_constant=1.0, bound_factor=3.0,
                  instance_params={"offset": 0.5})
res = rate_sweep(cfg)
for c in res.cells:
    print(f"n={c['n']:5d} mean gap {c['mean_gap']:.4f} +- {c['stderr']:.4f}  "
          f"noise share {c['noise_share']:.2f}  grad evals {c['grad_evals']:.0f}")
x = np.log([c["n"] for c in res.cells])
y = np.log([c["mean_gap"] for c in res.cells])
print(f"log-log slope {np.polyfit(x, y, 1)[0]:.3f}")
