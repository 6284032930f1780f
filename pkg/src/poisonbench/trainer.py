"""Distributed stochastic momentum with a pluggable aggregator.

Every worker keeps a momentum ``m_w = (1 - alpha) m_w + alpha g_w`` built from
one fresh sample gradient per step. The server aggregates the ``W`` momenta
and moves the global model by ``-gamma * aggregate``.

Workers ``R .. W-1`` are the poisoned ones. Nothing in the update path checks
that flag except dynamic label flipping, which needs the current model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .aggregators import AggregatorSpec, aggregate
from .attacks import AttackSpec, apply_static_poisoning, least_probable
from .core import GLOBAL, ConfigError, DivergenceError, HyperParams, NumericError, derive_stream
from .data import Dataset, Shard
from .models import LossModel

DIVERGENCE_NORM = 1e8

METRIC_COLUMNS = ("t", "train_loss", "test_acc", "grad_norm_sq", "xi_hat", "a_hat",
                  "sigma2_hat_max", "agg_dev")


class RunRecord(NamedTuple):
    t: int
    train_loss: float
    test_acc: float
    grad_norm_sq: float
    xi_hat: float
    a_hat: float
    sigma2_hat_max: float
    agg_dev: float


@dataclass
class WorkerState:
    id: int
    features: np.ndarray
    labels: np.ndarray  # labels the worker trains on (already statically poisoned)
    clean_labels: np.ndarray
    poisoned: bool
    momentum: np.ndarray | None
    stream: np.random.Generator

    def __len__(self):
        return len(self.labels)


@dataclass
class TrainState:
    x: np.ndarray
    t: int
    workers: list[WorkerState]
    prev_aggregate: np.ndarray | None = None
    agg_dev: float = math.nan

    @property
    def regular(self) -> list[WorkerState]:
        return [w for w in self.workers if not w.poisoned]

    @property
    def poisoned(self) -> list[WorkerState]:
        return [w for w in self.workers if w.poisoned]

    def momenta(self) -> np.ndarray:
        return np.stack([w.momentum for w in self.workers])


def build_workers(dataset: Dataset, shards: list[Shard], R: int, attack: AttackSpec,
                  seed: int) -> list[WorkerState]:
    """One worker per shard; shards ``R..`` get the attack's labels."""
    W = len(shards)
    if not 1 <= R <= W:
        raise ConfigError(f"need 1 <= R <= W, got R={R}, W={W}", "hyper.R")
    workers = []
    for shard in shards:
        w = shard.owner
        if len(shard) == 0:
            raise ConfigError(f"worker {w} has an empty shard", "partition")
        feats = dataset.features[shard.indices]
        clean = dataset.labels[shard.indices].astype(np.int64)
        poisoned = w >= R and attack.kind != "none"
        labels = clean
        if poisoned and attack.kind == "static_flip":
            labels = apply_static_poisoning(clean, dataset.num_classes, attack.flip_prob,
                                            derive_stream(seed, w, "poison"))
        workers.append(WorkerState(w, feats, labels, clean, poisoned, None,
                                   derive_stream(seed, w, "sample")))
    return workers


def init_state(model: LossModel, workers: list[WorkerState], seed: int, x0=None) -> TrainState:
    x = model.init_params(derive_stream(seed, GLOBAL, "init")) if x0 is None else np.array(x0, dtype=np.float64)
    if x.shape != (model.param_dim,):
        raise ConfigError(f"initial model has shape {x.shape}, expected ({model.param_dim},)", "model")
    return TrainState(x, 0, workers)


def _draw(worker: WorkerState, batch_size) -> np.ndarray:
    J = len(worker)
    if batch_size == "full":
        return np.arange(J)
    return worker.stream.integers(0, J, size=int(batch_size))


def _training_labels(model, x, worker, feats, idx, attack):
    if worker.poisoned and attack.is_dynamic:
        return least_probable(model.predict_proba(x, feats))
    return worker.labels[idx]


def step(state: TrainState, agg: AggregatorSpec, hp: HyperParams, model: LossModel,
         attack: AttackSpec, batch_size=1) -> TrainState:
    """One iteration; returns a new state (worker streams are shared and advance)."""
    x = state.x
    W = len(state.workers)
    try:
        feats, labels, counts = [], [], []
        for w in state.workers:
            idx = _draw(w, batch_size)
            f = w.features[idx]
            feats.append(f)
            labels.append(_training_labels(model, x, w, f, idx, attack))
            counts.append(len(idx))
        grads = model.sample_gradients(x, np.concatenate(feats), np.concatenate(labels))
        if len(set(counts)) == 1:
            g = grads.reshape(W, counts[0], -1).mean(axis=1)
        else:
            g = np.stack([blk.mean(axis=0) for blk in np.split(grads, np.cumsum(counts)[:-1])])

        workers = []
        for w, gw in zip(state.workers, g):
            # the initial momentum is the first sample gradient itself
            m = gw if w.momentum is None else (1.0 - hp.alpha) * w.momentum + hp.alpha * gw
            workers.append(replace(w, momentum=m))
        momenta = np.stack([w.momentum for w in workers])
        out = aggregate(agg, momenta, hp.R, state.prev_aggregate)
        x_new = x - hp.gamma * out
    except NumericError as exc:
        raise DivergenceError(state.t, hp.gamma, str(exc)) from exc

    nx = float(np.linalg.norm(x_new))
    if not math.isfinite(nx) or nx > DIVERGENCE_NORM:
        raise DivergenceError(state.t, hp.gamma, f"||x|| = {nx:.3g}")
    regular_mean = momenta[[not w.poisoned for w in workers]].mean(axis=0)
    return TrainState(x_new, state.t + 1, workers, out, float(np.linalg.norm(out - regular_mean)))


# ---------------------------------------------------------------------------
# metrics

def local_gradients(model: LossModel, x, workers, attack: AttackSpec | None = None,
                    poisoned_labels: bool = False) -> np.ndarray:
    """Full local gradients, one row per worker.

    With ``poisoned_labels`` the workers' training labels are used (and, for a
    dynamic attack, labels are flipped against ``x``); otherwise clean labels.
    """
    rows = []
    for w in workers:
        if not poisoned_labels:
            labels = w.clean_labels
        elif attack is not None and attack.is_dynamic and w.poisoned:
            labels = least_probable(model.predict_proba(x, w.features))
        else:
            labels = w.labels
        rows.append(model.full_gradient(x, w.features, labels))
    return np.stack(rows)


def global_gradient(model, x, regular) -> np.ndarray:
    return local_gradients(model, x, regular).mean(axis=0)


def measure_xi(model: LossModel, x, regular) -> float:
    """Largest distance from a regular local gradient to the regular average."""
    if not regular:
        raise ConfigError("need at least one regular worker", "hyper.R")
    G = local_gradients(model, x, regular)
    return float(np.max(np.linalg.norm(G - G.mean(axis=0), axis=1)))


def measure_A(model: LossModel, x, poisoned, regular, attack: AttackSpec | None = None) -> float:
    """Largest distance from a poisoned local gradient to the regular average; NaN without poisoned workers."""
    if not poisoned:
        return math.nan
    g = global_gradient(model, x, regular)
    P = local_gradients(model, x, poisoned, attack, poisoned_labels=True)
    return float(np.max(np.linalg.norm(P - g, axis=1)))


def measure_sigma2(model: LossModel, x, worker: WorkerState, labels=None) -> float:
    """Exact variance of one uniformly drawn sample gradient around the local gradient."""
    labels = worker.clean_labels if labels is None else labels
    G = model.sample_gradients(x, worker.features, labels)
    dev = G - G.mean(axis=0)
    return float(np.einsum("ij,ij->", dev, dev) / len(G))


def measure(state: TrainState, model: LossModel, attack: AttackSpec, test: Dataset | None = None,
            sigma2: bool = True) -> RunRecord:
    x = state.x
    regular, poisoned = state.regular, state.poisoned
    G = local_gradients(model, x, regular)
    g = G.mean(axis=0)
    loss = float(np.mean([model.loss(x, w.features, w.clean_labels) for w in regular]))
    xi = float(np.max(np.linalg.norm(G - g, axis=1)))
    if poisoned:
        P = local_gradients(model, x, poisoned, attack, poisoned_labels=True)
        a_hat = float(np.max(np.linalg.norm(P - g, axis=1)))
    else:
        a_hat = math.nan
    s2 = max(measure_sigma2(model, x, w) for w in regular) if sigma2 else math.nan
    acc = model.accuracy(x, test.features, test.labels) if test is not None and len(test) else math.nan
    return RunRecord(state.t, loss, acc, float(g @ g), xi, a_hat, s2, state.agg_dev)


# ---------------------------------------------------------------------------
# driver

def log_steps(T: int, log_every: int | None = None) -> set[int]:
    every = log_every if log_every else max(1, math.ceil(T / 200))
    return set(range(0, T + 1, every)) | {0, T}


@dataclass
class RunResult:
    records: list[RunRecord]
    state: TrainState
    extra: dict = field(default_factory=dict)

    @property
    def x(self) -> np.ndarray:
        return self.state.x

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])


def run(model: LossModel, workers: list[WorkerState], agg: AggregatorSpec, hp: HyperParams,
        attack: AttackSpec, test: Dataset | None = None, log_every: int | None = None,
        batch_size=1, x0=None, sigma2: bool = True, callback=None) -> RunResult:
    """Run ``hp.T`` steps from a fresh state and log metrics on the logging grid."""
    if len(workers) != hp.W:
        raise ConfigError(f"got {len(workers)} workers but W={hp.W}", "hyper.W")
    agg.validate(hp.W, hp.R)
    logged = log_steps(hp.T, log_every)
    state = init_state(model, workers, hp.seed, x0)
    records = [measure(state, model, attack, test, sigma2)]
    for _ in range(hp.T):
        state = step(state, agg, hp, model, attack, batch_size)
        if state.t in logged:
            records.append(measure(state, model, attack, test, sigma2))
        if callback is not None:
            callback(state)
    return RunResult(records, state)


def average_grad_norm_sq(model: LossModel, workers, agg: AggregatorSpec, hp: HyperParams,
                         attack: AttackSpec, batch_size="full", x0=None) -> float:
    """``(1/T) sum_{t=1..T} ||grad f(x^t)||^2`` over the regular objective."""
    if hp.T == 0:
        return math.nan
    state = init_state(model, workers, hp.seed, x0)
    regular = state.regular
    total = 0.0
    for _ in range(hp.T):
        state = step(state, agg, hp, model, attack, batch_size)
        g = global_gradient(model, state.x, regular)
        total += float(g @ g)
    return total / hp.T


# ---------------------------------------------------------------------------
# step-size schedules

def theorem_schedule(kind: str, F0: float, L: float, sigma: float, rho_or_delta: float, R: int,
                     T: int) -> tuple[float, float]:
    """Step size and momentum coefficient from the convergence theorems.

    ``kind='ragg'`` takes a contraction constant, ``kind='mean'`` the poisoned
    fraction. Returns ``(gamma, alpha)`` with ``alpha = 8 L gamma`` capped at 1.
    """
    if L <= 0 or T <= 0 or R < 1 or F0 < 0 or sigma < 0:
        raise ConfigError("theorem schedule needs L > 0, T > 0, R >= 1, F0 >= 0, sigma >= 0", "schedule")
    cap = 1.0 / (8 * L)
    s2 = sigma * sigma
    if s2 == 0:
        gamma = cap
    else:
        if kind == "ragg":
            r2 = rho_or_delta ** 2 * (R + 1.0 / R)
            num = 4 * F0 + 15 * r2 * s2 / (8 * L)
            den = T * 40 * L * s2 * (3 * r2 + 2.0 / R)
        elif kind == "mean":
            d2 = rho_or_delta ** 2
            num = 4 * F0 + 30 * d2 * s2 / (8 * L)
            den = T * 40 * L * s2 * (6 * d2 + 2.0 / R)
        else:
            raise ConfigError(f"unknown schedule kind {kind!r}", "schedule.kind")
        gamma = min(math.sqrt(num / den), cap)
    return gamma, min(8 * L * gamma, 1.0)
