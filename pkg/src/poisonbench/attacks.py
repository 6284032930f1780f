"""Label poisoning: static label flipping and dynamic least-probable flipping.

Attacks only ever touch labels. A poisoned worker otherwise runs exactly the
same training code as a regular one.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .core import ConfigError, NumericError

KINDS = ("none", "static_flip", "dynamic_flip")


@dataclass(frozen=True)
class AttackSpec:
    kind: str = "static_flip"
    flip_prob: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown attack kind {self.kind!r}; choose from {KINDS}", "attack.kind")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ConfigError(f"flip_prob must lie in [0, 1], got {self.flip_prob}", "attack.flip_prob")

    @property
    def is_dynamic(self) -> bool:
        return self.kind == "dynamic_flip"

    def to_dict(self) -> dict:
        return asdict(self)


def static_flip(label, K: int):
    """Map label ``b`` to ``K - 1 - b`` (works element-wise on arrays)."""
    return K - 1 - label


def apply_static_poisoning(labels: np.ndarray, K: int, p: float, stream: np.random.Generator) -> np.ndarray:
    """Flip each label independently with probability ``p``; returns a new array.

    One uniform draw is consumed per label whatever ``p`` is, so the stream
    position after poisoning does not depend on the flip probability.
    """
    labels = np.asarray(labels, dtype=np.int64)
    flip = stream.random(labels.shape[0]) < p
    return np.where(flip, static_flip(labels, K), labels)


def least_probable(probs: np.ndarray) -> np.ndarray:
    """Row-wise argmin of class probabilities; ties go to the smallest class index."""
    probs = np.asarray(probs, dtype=np.float64)
    if not np.all(np.isfinite(probs)):
        raise NumericError("predictor returned non-finite probabilities")
    return np.argmin(probs, axis=-1)


def dynamic_flip(feature: np.ndarray, x: np.ndarray, predictor, K: int | None = None) -> int:
    """Least probable label of ``feature`` under model ``x``.

    ``predictor(x, features)`` returns a ``(1, K)`` or ``(K,)`` probability array.
    """
    probs = np.atleast_2d(predictor(x, np.atleast_2d(feature)))[0]
    if K is not None and probs.shape != (K,):
        raise NumericError(f"predictor returned shape {probs.shape}, expected ({K},)")
    return int(least_probable(probs))
