"""
Label poisoning with heterogeneous and homogeneous data
=======================================================

Nine regular workers and one that flips every label ``b`` to ``K - 1 - b``.
When each worker holds a single class, the regular local gradients already
disagree a lot, and robust rules throw away useful information. When data are
i.i.d., robust rules shrug off the attack.
"""

from poisonbench.config import from_dict
from poisonbench.experiment import execute

BASE = {
    "dataset": {"kind": "synth", "num_classes": 10, "dim": 30, "per_class": 60, "test_per_class": 30,
                "spread": 0.9},
    "attack": {"kind": "static_flip"},
    "hyper": {"W": 10, "R": 9, "T": 1500, "gamma": 0.05, "alpha": 0.1},
    "train": {"measure_sigma2": False, "log_every": 500},
}


def final(partition, agg, attack="static_flip"):
    cfg = from_dict({**BASE, "partition": {"kind": partition}, "aggregator": {"kind": agg},
                     "attack": {"kind": attack}})
    rec = execute(cfg)[0].records[-1]
    return rec.test_acc, rec.xi_hat, rec.a_hat


# %%
# Final test accuracy, heterogeneity xi and disturbance A at the last step.
for partition in ("one_class", "iid"):
    acc, _, _ = final(partition, "mean", attack="none")
    print(f"\n{partition}: no attack {acc:.3f}")
    for agg in ("mean", "trimean", "cc", "faba"):
        acc, xi, a = final(partition, agg)
        print(f"  {agg:8s} acc {acc:.3f}   xi {xi:.3f}   A {a:.3f}")
