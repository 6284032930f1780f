"""Executable versions of the analysis: bound calculators, the impossibility
message sets and the two-instance quadratic lower-bound construction."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .aggregators import DomainError, rho_lower_bound
from .attacks import AttackSpec
from .core import ConfigError, HyperParams, derive_stream
from .models import LossModel
from .trainer import WorkerState, average_grad_norm_sq

SQRT2 = math.sqrt(2.0)


# ---------------------------------------------------------------------------
# two quadratic instances with the same multiset of local costs

@dataclass(frozen=True)
class QuadraticInstance:
    """``W`` workers on ``f(x; k) = ((1 - delta) c / sqrt 2) x_k + (L/2) ||x||^2``.

    Labels ``k`` are 1 or 2. Instance 1 gives label 1 to workers ``1..R`` and
    label 2 to the rest; instance 2 gives label 2 to workers ``1..W-R`` and
    label 1 to the rest. Workers ``1..R`` are regular in both.
    """

    W: int
    R: int
    c: float = 1.0
    L: float = 1.0
    instance_id: int = 1

    def __post_init__(self):
        if not 1 <= self.R <= self.W:
            raise ConfigError(f"need 1 <= R <= W, got R={self.R}, W={self.W}", "hyper.R")
        if self.instance_id not in (1, 2):
            raise ConfigError("instance_id must be 1 or 2", "instance_id")

    @property
    def delta(self) -> float:
        return 1.0 - self.R / self.W

    @property
    def coef(self) -> float:
        return (1.0 - self.delta) * self.c / SQRT2

    @property
    def labels(self) -> list[int]:
        W, R = self.W, self.R
        if self.instance_id == 1:
            return [1 if w <= R else 2 for w in range(1, W + 1)]
        return [2 if w <= W - R else 1 for w in range(1, W + 1)]

    def model(self) -> "QuadraticModel":
        return QuadraticModel(self.coef, self.L)

    def workers(self, seed: int = 0) -> list[WorkerState]:
        """One-sample workers (every sample of a worker is identical, so sigma = 0)."""
        out = []
        for w, k in enumerate(self.labels):
            lab = np.array([k - 1])
            out.append(WorkerState(w, np.zeros((1, 1)), lab, lab, w >= self.R, None,
                                   derive_stream(seed, w, "sample")))
        return out

    def minimizer(self) -> np.ndarray:
        d, c, L = self.delta, self.c, self.L
        if self.instance_id == 1:
            return np.array([-(1 - d) * c / (SQRT2 * L), 0.0])
        return np.array([-(1 - 2 * d) * c / (SQRT2 * L), -d * c / (SQRT2 * L)])

    def objective_gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return np.mean([quad_gradient(self, w, x) for w in range(self.R)], axis=0)


class QuadraticModel(LossModel):
    """Loss model for the quadratic instances; the label picks the linear term."""

    num_classes = 2
    feature_dim = 1
    param_dim = 2

    def __init__(self, coef: float, L: float):
        self.coef = coef
        self.L = L

    def sample_losses(self, x, features, labels):
        x = np.asarray(x, dtype=np.float64)
        return self.coef * x[np.asarray(labels)] + 0.5 * self.L * float(x @ x)

    def sample_gradients(self, x, features, labels):
        labels = np.asarray(labels)
        g = np.tile(self.L * np.asarray(x, dtype=np.float64), (len(labels), 1))
        g[np.arange(len(labels)), labels] += self.coef
        return g

    def logits(self, x, features):
        n = len(np.atleast_2d(features))
        return -np.tile(self.coef * np.asarray(x, dtype=np.float64), (n, 1))


def quad_gradient(inst: QuadraticInstance, worker: int, x) -> np.ndarray:
    """Gradient of worker ``worker``'s (0-based) cost at ``x``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] < 2:
        raise ConfigError("quadratic instances live in at least 2 dimensions", "x")
    g = inst.L * x.copy()
    g[inst.labels[worker] - 1] += inst.coef
    return g


def lower_bound_value(delta: float, A: float, xi: float) -> float:
    """Smallest achievable time-averaged squared gradient norm, ``delta^2 min(A, xi)^2 / 8``."""
    if not 0 <= delta < 1:
        raise DomainError(f"delta must lie in [0, 1), got {delta}", "delta")
    return delta * delta * min(A, xi) ** 2 / 8.0


def run_instance(inst: QuadraticInstance, agg, gamma: float, T: int, alpha: float = 1.0,
                 seed: int = 0) -> float:
    """``(1/T) sum_{t=1..T} ||grad f(x^t)||^2`` for full-gradient training from x = 0."""
    hp = HyperParams(W=inst.W, R=inst.R, T=T, gamma=gamma, alpha=alpha, seed=seed)
    return average_grad_norm_sq(inst.model(), inst.workers(seed), agg, hp, AttackSpec("none"),
                                "full", np.zeros(2))


# ---------------------------------------------------------------------------
# softmax regression constants

def _mean_feature_norms(shards) -> np.ndarray:
    norms = []
    for w, feats in enumerate(shards):
        feats = np.asarray(feats, dtype=np.float64)
        bad = np.argwhere(feats < 0)
        if bad.size:
            raise ConfigError(f"negative feature on worker {w}, sample {int(bad[0, 0])}", "dataset")
        norms.append(float(np.linalg.norm(feats.mean(axis=0))))
    return np.array(norms)


def softmax_A_bound(shards, K: int) -> float:
    """``2 sqrt(K) max_w ||mean feature of worker w||`` over all workers."""
    return 2.0 * math.sqrt(K) * float(_mean_feature_norms(shards).max())


def softmax_xi_bound(regular_shards, K: int) -> tuple[float, float]:
    """Upper heterogeneity bound and the one-class-partition lower bound at x = 0."""
    m = float(_mean_feature_norms(regular_shards).max())
    R = len(regular_shards)
    return 2.0 * math.sqrt(K) * m, (1.0 - 1.0 / R) * (1.0 - 1.0 / K) * m


# ---------------------------------------------------------------------------
# impossibility message sets

def build_indistinguishable_sets(delta: float, rho: float, W: int, R: int):
    """Two scalar message sets with equal multisets but different regular parts.

    Returns ``(set1, set2)`` as ``(W, 1)`` arrays, regular workers first. For
    ``delta >= 1/2`` the values are 0 and ``rho + 1``; otherwise 0 and 1,
    which needs ``rho < min(delta / (1 - 2 delta), 1)``.
    """
    if not 1 <= R <= W:
        raise ConfigError(f"need 1 <= R <= W, got R={R}, W={W}", "hyper.R")
    if not math.isclose(delta, 1.0 - R / W, abs_tol=1e-12):
        raise ConfigError(f"delta={delta} disagrees with 1 - R/W = {1 - R / W}", "delta")
    if 2 * R <= W:
        set1 = [0.0] * R + [rho + 1.0] * R + [0.0] * (W - 2 * R)
        set2 = [rho + 1.0] * R + [0.0] * (W - R)
    elif rho < rho_lower_bound(delta):
        set1 = [0.0] * R + [1.0] * (W - R)
        set2 = [1.0] * (W - R) + [0.0] * R
    else:
        raise DomainError(f"rho={rho} is not below min(delta/(1-2 delta), 1) at delta={delta}", "rho")
    return np.array(set1)[:, None], np.array(set2)[:, None]


# ---------------------------------------------------------------------------
# convergence bounds

def theorem_error_bound(kind: str, rho_or_delta: float, het: float, sigma: float, F0: float,
                        L: float, R: int, T: int, xi: float | None = None,
                        grad0_norm: float = 0.0) -> float:
    """Complete right-hand side of the convergence bounds under the theorem step size.

    ``kind='ragg'``: ``rho_or_delta`` is rho and ``het`` is xi.
    ``kind='mean'``: ``rho_or_delta`` is delta, ``het`` is A, and ``xi``
    (defaulting to ``het``) enters a 1/T term. ``grad0_norm`` is the norm of
    the initial gradient, which appears unsquared in the printed bound.
    """
    if T <= 0 or L <= 0 or R < 1:
        raise ConfigError("need T > 0, L > 0, R >= 1", "bound")
    s2 = sigma * sigma
    if kind == "ragg":
        rho, xi_ = rho_or_delta, het
        r2 = rho * rho * (R + 1.0 / R)
        return (15 * rho * rho * xi_ * xi_
                + math.sqrt(20 * L * s2 * (2.0 / R + 3 * r2) / T) * math.sqrt(32 * F0 + 15 / L * r2 * s2)
                + 32 * L * F0 / T + 15 * r2 * s2 / T
                + (10 * s2 / R + 12 * rho * rho * ((R + 1.0 / R) * s2 + xi_ * xi_) - grad0_norm) / T)
    if kind == "mean":
        d2, A = rho_or_delta ** 2, het
        xi_ = het if xi is None else xi
        return (15 * d2 * A * A
                + math.sqrt(20 * L * s2 * (2.0 / R + 6 * d2) / T) * math.sqrt(32 * F0 + 30 / L * d2 * s2)
                + 32 * L * F0 / T + 30 * d2 * s2 / T
                + (10 * s2 / R + 24 * d2 * (s2 + xi_ * xi_) - grad0_norm) / T)
    raise ConfigError(f"unknown bound kind {kind!r}", "bound.kind")
