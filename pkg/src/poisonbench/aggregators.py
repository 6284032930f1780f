"""Aggregation rules (mean, trimmed mean, centered clipping, FABA) and an
empirical contraction checker.

Every rule takes a ``(W, D)`` array of messages, one row per worker, and
returns a length-``D`` vector. Ties are always broken by the smallest row
index.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .core import ConfigError, NumericError

KINDS = ("mean", "trimean", "cc", "faba")


class DomainError(ConfigError):
    """A formula was evaluated outside the range where it holds."""


@dataclass(frozen=True)
class AggregatorSpec:
    kind: str = "mean"
    assumed_regular: int | None = None  # server's belief about R; None means "use the true R"
    cc_tau: float = 10.0
    cc_iters: int = 1
    cc_start: str = "previous"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown aggregator {self.kind!r}; choose from {KINDS}", "aggregator.kind")
        if not (np.isfinite(self.cc_tau) and self.cc_tau > 0):
            raise ConfigError(f"cc_tau must be finite and positive, got {self.cc_tau}", "aggregator.cc_tau")
        if self.cc_iters < 1:
            raise ConfigError(f"cc_iters must be >= 1, got {self.cc_iters}", "aggregator.cc_iters")
        if self.cc_start not in ("zero", "previous"):
            raise ConfigError(f"cc_start must be 'zero' or 'previous', got {self.cc_start!r}",
                              "aggregator.cc_start")
        if self.assumed_regular is not None and self.assumed_regular < 1:
            raise ConfigError("assumed_regular must be >= 1", "aggregator.assumed_regular")

    def regular_count(self, W: int, R: int | None = None) -> int:
        r = self.assumed_regular if self.assumed_regular is not None else (W if R is None else R)
        if not 1 <= r <= W:
            raise ConfigError(f"assumed_regular={r} outside [1, W={W}]", "aggregator.assumed_regular")
        return r

    def validate(self, W: int, R: int):
        r = self.regular_count(W, R)
        if self.kind == "trimean" and 2 * r - W < 1:
            raise ConfigError(f"TriMean undefined for delta >= 1/2 (W={W}, R={r})", "aggregator.assumed_regular")

    def to_dict(self) -> dict:
        return asdict(self)


def _as_messages(messages) -> np.ndarray:
    y = np.asarray(messages, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    if y.ndim != 2 or y.shape[0] == 0:
        raise ConfigError(f"need a non-empty (W, D) message array, got shape {y.shape}", "messages")
    return y


def mean_agg(messages) -> np.ndarray:
    return _as_messages(messages).mean(axis=0)


def trimean_agg(messages, R: int) -> np.ndarray:
    """Coordinate-wise trimmed mean: drop the ``W - R`` smallest and largest values."""
    y = _as_messages(messages)
    W = y.shape[0]
    b = W - R
    if 2 * R - W < 1:
        raise ConfigError(f"TriMean undefined for delta >= 1/2 (W={W}, R={R})", "aggregator.assumed_regular")
    if b == 0:
        return mean_agg(y)
    s = np.sort(y, axis=0, kind="stable")
    return s[b:W - b].mean(axis=0)


def clip(z: np.ndarray, tau: float) -> np.ndarray:
    """Row-wise clipping of ``z`` to norm at most ``tau``."""
    n = np.linalg.norm(z, axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        factor = np.where(n > tau, tau / n, 1.0)
    return z * factor


def cc_agg(messages, tau: float, iters: int = 1, v0=None) -> np.ndarray:
    """Centered clipping, ``iters`` rounds of ``v += mean(clip(y_w - v, tau))``.

    A round in which no message is clipped lands exactly on the mean, so that
    value is returned directly (keeps the no-clipping case bit-identical to
    ``mean_agg``).
    """
    y = _as_messages(messages)
    v = np.zeros(y.shape[1]) if v0 is None else np.array(v0, dtype=np.float64)
    for _ in range(iters):
        diff = y - v
        dist = np.linalg.norm(diff, axis=1)
        if np.all(dist <= tau):
            v = y.mean(axis=0)
        else:
            v = v + clip(diff, tau).mean(axis=0)
        if not np.all(np.isfinite(v)):
            raise NumericError("non-finite value inside centered clipping")
    return v


def faba_agg(messages, R: int) -> np.ndarray:
    """Remove the message farthest from the running mean ``W - R`` times, then average.

    Distances within a relative ``1e-12`` of the largest count as tied; among
    tied messages the lexicographically smallest vector goes first. Breaking
    ties on values rather than positions keeps the output independent of the
    order of the messages.
    """
    y = _as_messages(messages)
    W = y.shape[0]
    if not 1 <= R <= W:
        raise ConfigError(f"FABA needs 1 <= R <= W, got R={R}, W={W}", "aggregator.assumed_regular")
    keep = np.ones(W, dtype=bool)
    for _ in range(W - R):
        idx = np.flatnonzero(keep)
        sub = y[idx]
        diff = sub - sub.mean(axis=0)
        dist = np.einsum("ij,ij->i", diff, diff)
        tied = np.flatnonzero(dist >= dist.max() * (1 - 1e-12))
        if len(tied) > 1:
            # lexsort keys run last to first, so reverse the columns
            tied = tied[np.lexsort(sub[tied].T[::-1])]
        keep[idx[tied[0]]] = False
    return y[keep].mean(axis=0)


def aggregate(spec: AggregatorSpec, messages, R: int | None = None, prev=None) -> np.ndarray:
    """Dispatch on ``spec.kind``. ``R`` is the true regular count, used when
    ``spec.assumed_regular`` is unset. ``prev`` seeds CC when ``cc_start`` is
    ``previous``."""
    y = _as_messages(messages)
    W = y.shape[0]
    if spec.kind == "mean":
        return mean_agg(y)
    r = spec.regular_count(W, R)
    if spec.kind == "trimean":
        return trimean_agg(y, r)
    if spec.kind == "faba":
        return faba_agg(y, r)
    v0 = prev if (spec.cc_start == "previous" and prev is not None) else None
    return cc_agg(y, spec.cc_tau, spec.cc_iters, v0)


# ---------------------------------------------------------------------------
# contraction constants

THRESHOLDS = {"trimean": 0.5, "cc": 0.5, "faba": 1.0 / 3.0}


def rho_formula(kind: str, delta: float, D: int = 1, R: int = 1) -> float:
    """Analytic contraction constant of a robust aggregator at poisoned fraction ``delta``."""
    if kind == "mean":
        if delta == 0:
            return 0.0
        raise DomainError("the mean has no finite contraction constant when delta > 0", "aggregator.kind")
    if kind not in THRESHOLDS:
        raise ConfigError(f"unknown aggregator {kind!r}", "aggregator.kind")
    if not 0 <= delta < THRESHOLDS[kind]:
        raise DomainError(f"{kind} contraction needs 0 <= delta < {THRESHOLDS[kind]:.6g}, got {delta}",
                          "delta")
    if kind == "trimean":
        return 3 * delta / (1 - 2 * delta) * min(np.sqrt(D), np.sqrt(R))
    if kind == "cc":
        return float(np.sqrt(24 * delta))
    return 2 * delta / (1 - 3 * delta)


def rho_lower_bound(delta: float) -> float:
    """No aggregator can contract better than ``min(delta / (1 - 2 delta), 1)``."""
    if not 0 <= delta < 1:
        raise DomainError(f"delta must lie in [0, 1), got {delta}", "delta")
    if delta >= 0.5:
        return 1.0
    return min(delta / (1 - 2 * delta), 1.0)


def cc_oracle_tau(M: float, delta: float) -> float:
    """Clipping threshold under which one CC step provably contracts."""
    return float(np.sqrt(4 * (1 - delta) * M * M / delta))


# ---------------------------------------------------------------------------
# empirical certificate

STRATEGIES = ("far_point", "opposite_of_mean", "cluster_at_extreme")


def adversarial_sets(trials: int, W: int, R: int, dim: int, stream: np.random.Generator):
    """Random message sets for contraction checks.

    Returns ``(messages, ybar, M)`` with shapes ``(trials, W, dim)``,
    ``(trials, dim)`` and ``(trials,)``. Regular rows are a Gaussian cloud of
    random centre and spread; the ``W - R`` poisoned rows are placed by the
    strategy ``STRATEGIES[trial % 3]`` and the rows are then shuffled.
    """
    n_bad = W - R
    center = stream.normal(0.0, 5.0, (trials, 1, dim))
    spread = np.exp(stream.uniform(np.log(0.1), np.log(10.0), (trials, 1, 1)))
    regular = center + spread * stream.standard_normal((trials, R, dim))
    ybar = regular.mean(axis=1)
    dev = regular - ybar[:, None]
    dist = np.linalg.norm(dev, axis=2)
    far = dev[np.arange(trials), np.argmax(dist, axis=1)]
    M = dist.max(axis=1)

    # far point: random direction, magnitude from M/2 to 1000 M
    u = stream.standard_normal((trials, dim))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    far_point = ybar + (M * np.exp(stream.uniform(np.log(0.5), np.log(1e3), trials)))[:, None] * u
    # opposite of the regular extreme
    opposite = ybar - np.exp(stream.uniform(np.log(0.5), np.log(50.0), trials))[:, None] * far
    # just beyond the extreme message, or beyond a mixed per-coordinate extreme
    mag = 1.0 + stream.uniform(0.0, 0.2, (trials, 1))
    sign = stream.random((trials, dim)) < 0.5
    ext = np.where(sign, regular.max(axis=1), regular.min(axis=1)) - ybar
    use_row = (stream.random(trials) < 0.5)[:, None]
    cluster = ybar + mag * np.where(use_row, far, ext)

    which = np.arange(trials) % len(STRATEGIES)
    target = np.where((which == 0)[:, None], far_point, np.where((which == 1)[:, None], opposite, cluster))
    jitter = stream.uniform(0.0, 0.05, (trials, 1, 1)) * M[:, None, None]
    bad = target[:, None] + jitter * stream.standard_normal((trials, n_bad, dim))
    msgs = np.concatenate([regular, bad], axis=1)
    order = np.argsort(stream.random((trials, W)), axis=1)
    msgs = np.take_along_axis(msgs, order[:, :, None], axis=1)
    # recompute ybar in the shuffled order so that it rounds like the aggregators do
    is_regular = (order < R)[:, :, None]
    ybar = np.where(is_regular, msgs, 0.0).sum(axis=1) / R
    M = np.where(is_regular[:, :, 0], np.linalg.norm(msgs - ybar[:, None], axis=2), 0.0).max(axis=1)
    return msgs, ybar, M


def certify_contraction(spec: AggregatorSpec, trials: int, W: int, R: int, dim: int,
                        stream: np.random.Generator, agg_fn=None, cc_oracle: bool = True) -> float:
    """Largest observed ``||agg - ybar|| / max_{w regular} ||y_w - ybar||``.

    Message sets come from ``adversarial_sets``. With ``cc_oracle`` set, CC
    starts from a random point within ``M`` of ``ybar`` and uses the provably
    contracting threshold. ``agg_fn(messages)`` overrides the aggregator (to
    audit an arbitrary rule). The placements are heuristic, so a passing
    certificate is evidence, not proof.
    """
    if trials < 1:
        raise ConfigError("trials must be >= 1", "trials")
    delta = 1.0 - R / W
    msgs, ybar, M = adversarial_sets(trials, W, R, dim, stream)
    oracle = spec.kind == "cc" and cc_oracle and delta > 0 and agg_fn is None
    if oracle:
        u = stream.standard_normal((trials, dim))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        v0 = ybar + (stream.uniform(0.0, 1.0, trials) * M)[:, None] * u
    worst = 0.0
    for i in range(trials):
        if M[i] < 1e-12:
            continue
        if agg_fn is not None:
            out = agg_fn(msgs[i])
        elif oracle:
            out = cc_agg(msgs[i], cc_oracle_tau(M[i], delta), 1, v0[i])
        else:
            out = aggregate(spec, msgs[i], R)
        worst = max(worst, float(np.linalg.norm(out - ybar[i])) / M[i])
    return worst
