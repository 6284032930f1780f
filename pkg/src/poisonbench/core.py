"""Shared types, vector helpers and seeded random streams."""

from __future__ import annotations

import zlib
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np


class PoisonBenchError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(PoisonBenchError, ValueError):
    pass


class ConfigError(PoisonBenchError, ValueError):
    """Invalid or inconsistent configuration.

    ``field`` names the offending config key when one can be identified.
    """

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field


class NumericError(PoisonBenchError, FloatingPointError):
    pass


class DivergenceError(PoisonBenchError, RuntimeError):
    def __init__(self, t: int, gamma: float, detail: str = ""):
        msg = f"training diverged at t={t} (gamma={gamma:g})"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)
        self.t = t
        self.gamma = gamma


class Sample(NamedTuple):
    feature: np.ndarray
    label: int


# ---------------------------------------------------------------------------
# dense vector arithmetic

def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"length mismatch: {a.shape} vs {b.shape}")
    return a, b


def add(a, b) -> np.ndarray:
    a, b = _pair(a, b)
    return a + b


def sub(a, b) -> np.ndarray:
    a, b = _pair(a, b)
    return a - b


def scale(c: float, v) -> np.ndarray:
    return float(c) * np.asarray(v, dtype=np.float64)


def dot(a, b) -> float:
    a, b = _pair(a, b)
    return float(a @ b)


def norm(v) -> float:
    """Euclidean norm."""
    return float(np.linalg.norm(np.asarray(v, dtype=np.float64)))


def block(values: np.ndarray, k: int, block_dim: int) -> np.ndarray:
    """View of the k-th block ``values[k*d:(k+1)*d]``."""
    if values.shape[0] % block_dim:
        raise DimensionError(f"length {values.shape[0]} is not a multiple of block_dim {block_dim}")
    return values[k * block_dim:(k + 1) * block_dim]


# ---------------------------------------------------------------------------
# hyperparameters

@dataclass(frozen=True)
class HyperParams:
    W: int = 10
    R: int = 9
    T: int = 1000
    gamma: float = 0.01
    alpha: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.R <= self.W:
            raise ConfigError(f"need 1 <= R <= W, got R={self.R}, W={self.W}", "hyper.R")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}", "hyper.alpha")
        if not self.gamma > 0:
            raise ConfigError(f"gamma must be positive, got {self.gamma}", "hyper.gamma")
        if self.T < 0:
            raise ConfigError(f"T must be non-negative, got {self.T}", "hyper.T")

    @property
    def delta(self) -> float:
        return 1.0 - self.R / self.W

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# random streams

GLOBAL = -1  # worker id for streams not owned by a worker


def _purpose_key(purpose: str) -> int:
    return zlib.crc32(purpose.encode("utf-8"))


def derive_stream(seed: int, worker: int, purpose: str) -> np.random.Generator:
    """Return an independent generator for ``(seed, worker, purpose)``.

    Streams are Philox (counter based) generators whose keys come from a
    ``SeedSequence`` over the triple, so a worker's draws never depend on how
    many numbers other streams consumed.
    """
    if seed < 0:
        raise ConfigError(f"seed must be non-negative, got {seed}", "hyper.seed")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(_purpose_key(purpose), int(worker) + 1))
    return np.random.Generator(np.random.Philox(ss))
