"""Distributed learning under label poisoning: aggregators, attacks, training and bounds."""

__version__ = "0.1.0"

from .aggregators import (AggregatorSpec, aggregate, cc_agg, certify_contraction, faba_agg, mean_agg,
                          rho_formula, rho_lower_bound, trimean_agg)
from .attacks import AttackSpec, apply_static_poisoning, dynamic_flip, static_flip
from .core import (ConfigError, DimensionError, DivergenceError, HyperParams, NumericError,
                   PoisonBenchError, Sample, derive_stream)
from .data import (Dataset, Shard, load_idx, partition_dirichlet, partition_iid, partition_one_class,
                   synth_blobs)
from .models import MLP, SoftmaxRegression
from .trainer import RunRecord, run, step, theorem_schedule

__all__ = [
    "AggregatorSpec", "AttackSpec", "ConfigError", "Dataset", "DimensionError", "DivergenceError",
    "HyperParams", "MLP", "NumericError", "PoisonBenchError", "RunRecord", "Sample", "Shard",
    "SoftmaxRegression", "aggregate", "apply_static_poisoning", "cc_agg", "certify_contraction",
    "derive_stream", "dynamic_flip", "faba_agg", "load_idx", "mean_agg", "partition_dirichlet",
    "partition_iid", "partition_one_class", "rho_formula", "rho_lower_bound", "run", "static_flip",
    "step", "synth_blobs", "theorem_schedule", "trimean_agg",
]
