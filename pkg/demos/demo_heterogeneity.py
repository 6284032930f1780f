"""
Measuring heterogeneity across partitions
=========================================

The same data split three ways. A Dirichlet split with small ``beta`` drifts
towards one class per worker, and the spread of local gradients grows with
it. For softmax regression on non-negative features the spread is bounded by
the mean feature norms.
"""

import numpy as np

from poisonbench.attacks import AttackSpec
from poisonbench.core import GLOBAL, derive_stream
from poisonbench.data import label_histogram, partition_dirichlet, partition_iid, partition_one_class, synth_blobs
from poisonbench.models import SoftmaxRegression
from poisonbench.theory import softmax_A_bound, softmax_xi_bound
from poisonbench.trainer import build_workers, measure_A, measure_xi

data = synth_blobs(10, 20, 100, 0.8, derive_stream(0, GLOBAL, "dataset"))
model = SoftmaxRegression(10, 20)
x0 = np.zeros(model.param_dim)
flip = AttackSpec("static_flip")

splits = {
    "iid": partition_iid(len(data), 10, derive_stream(0, GLOBAL, "partition")),
    "dirichlet 1.0": partition_dirichlet(data, 10, 1.0, derive_stream(0, GLOBAL, "partition")),
    "dirichlet 0.05": partition_dirichlet(data, 10, 0.05, derive_stream(0, GLOBAL, "partition")),
    "one class": partition_one_class(data, 10),
}

# %%
# Label histogram of worker 0 under each split.
for name, shards in splits.items():
    print(f"{name:15s}", label_histogram(data, shards[0]))

# %%
# xi and A at x = 0 next to their bounds.
print(f"\n{'split':15s} {'xi':>7s} {'xi bound':>9s} {'A':>7s} {'A bound':>8s}")
for name, shards in splits.items():
    workers = build_workers(data, shards, 9, flip, 0)
    feats = [w.features for w in workers]
    xi = measure_xi(model, x0, workers[:9])
    a = measure_A(model, x0, workers[9:], workers[:9])
    print(f"{name:15s} {xi:7.3f} {softmax_xi_bound(feats[:9], 10)[0]:9.3f} {a:7.3f} "
          f"{softmax_A_bound(feats, 10):8.3f}")
