"""
Robust aggregators and their contraction constants
==================================================

A robust aggregator should land close to the average of the regular
messages, no matter where the poisoned messages are. Here we measure how
close, against the analytic constant of each rule.
"""

import numpy as np

from poisonbench.aggregators import (AggregatorSpec, aggregate, certify_contraction, mean_agg, rho_formula,
                                     rho_lower_bound)
from poisonbench.core import GLOBAL, derive_stream

# %%
# Ten workers, one of them poisoned, sending scalars.
# The poisoned value sits far away; the mean follows it, the others do not.
y = np.array([[1.0], [1.2], [0.9], [1.1], [1.0], [0.8], [1.05], [0.95], [1.0], [50.0]])
for kind in ("mean", "trimean", "cc", "faba"):
    print(f"{kind:8s} {aggregate(AggregatorSpec(kind, cc_start='zero', cc_tau=1.0), y, R=9)[0]:8.4f}")

# %%
# Empirical contraction ratio ``||agg - ybar|| / max ||y_w - ybar||`` over
# 1000 adversarial message sets, next to the analytic constant.
print(f"\n{'rule':8s} {'delta':>5s} {'observed':>9s} {'rho':>7s} {'lower bound':>12s}")
for kind, deltas in (("trimean", (0.1, 0.3)), ("cc", (0.1, 0.3)), ("faba", (0.1, 0.2))):
    for delta in deltas:
        W, R = 10, round(10 * (1 - delta))
        stream = derive_stream(0, GLOBAL, f"demo/{kind}/{delta}")
        ratio = certify_contraction(AggregatorSpec(kind), 1000, W, R, 3, stream)
        print(f"{kind:8s} {delta:5.1f} {ratio:9.3f} {rho_formula(kind, delta, 3, R):7.3f} "
              f"{rho_lower_bound(delta):12.3f}")

# %%
# The mean has no finite constant once a single worker is poisoned.
ratio = certify_contraction(AggregatorSpec("mean"), 300, 10, 9, 3, derive_stream(0, GLOBAL, "demo/mean"),
                            agg_fn=mean_agg)
print(f"\nmean at delta=0.1: observed ratio {ratio:.1f}")
