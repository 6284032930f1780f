"""Loss models with closed-form gradients: softmax regression and a ReLU MLP.

All models work on batches: ``features`` is ``(n, d)`` and ``labels`` is
``(n,)``. Parameters are flat float64 vectors.
"""

from __future__ import annotations

import numpy as np

from .core import ConfigError, NumericError, Sample


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = np.exp(logits - logits.max(axis=1, keepdims=True))
    return shifted / shifted.sum(axis=1, keepdims=True)


def _check_finite(arr: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite {what}")
    return arr


class LossModel:
    """Interface shared by every model the trainer can optimise."""

    num_classes: int
    feature_dim: int
    param_dim: int

    def init_params(self, stream: np.random.Generator) -> np.ndarray:
        return np.zeros(self.param_dim)

    def logits(self, x: np.ndarray, features: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def sample_gradients(self, x, features, labels) -> np.ndarray:
        """Per-sample gradients, shape ``(n, param_dim)``."""
        raise NotImplementedError

    def sample_losses(self, x, features, labels) -> np.ndarray:
        logp = _log_softmax(self.logits(x, features))
        return _check_finite(-logp[np.arange(len(labels)), labels], "loss")

    def loss(self, x, features, labels) -> float:
        return float(self.sample_losses(x, features, labels).mean())

    def full_gradient(self, x, features, labels) -> np.ndarray:
        """Mean of the per-sample gradients over a shard."""
        if len(labels) == 0:
            raise ConfigError("full gradient of an empty shard", "partition")
        return self.sample_gradients(x, features, labels).mean(axis=0)

    def predict_proba(self, x, features) -> np.ndarray:
        return _softmax(_check_finite(self.logits(x, np.atleast_2d(features)), "logits"))

    def predict(self, x, features) -> np.ndarray:
        return np.argmax(self.logits(x, features), axis=1)

    def accuracy(self, x, features, labels) -> float:
        return float(np.mean(self.predict(x, features) == labels))


class SoftmaxRegression(LossModel):
    """Multinomial logistic regression without bias.

    The parameter vector holds ``K`` blocks of length ``d``; block ``k``
    scores class ``k`` through ``x_k^T a``.
    """

    def __init__(self, num_classes: int, feature_dim: int):
        self.num_classes = num_classes
        self.feature_dim = feature_dim
        self.param_dim = num_classes * feature_dim

    def _blocks(self, x):
        return np.asarray(x, dtype=np.float64).reshape(self.num_classes, self.feature_dim)

    def logits(self, x, features):
        return np.asarray(features) @ self._blocks(x).T

    def _residual(self, x, features, labels):
        # p_k - 1{b = k}
        probs = self.predict_proba(x, features)
        probs[np.arange(len(labels)), labels] -= 1.0
        return probs

    def sample_gradients(self, x, features, labels):
        features = np.atleast_2d(features)
        resid = self._residual(x, features, np.asarray(labels))
        grads = resid[:, :, None] * features[:, None, :]
        return grads.reshape(len(features), self.param_dim)

    def full_gradient(self, x, features, labels):
        if len(labels) == 0:
            raise ConfigError("full gradient of an empty shard", "partition")
        features = np.atleast_2d(features)
        resid = self._residual(x, features, np.asarray(labels))
        return (resid.T @ features).ravel() / len(labels)

    def smoothness_estimate(self, features: np.ndarray) -> float:
        """``max ||a||^2 / 2``, a common smoothness estimate for softmax regression."""
        return float(np.max(np.einsum("ij,ij->i", features, features)) / 2.0)


class MLP(LossModel):
    """ReLU perceptron with two hidden layers and a softmax output.

    Layout of the flat parameter vector: ``W1 (d, h), b1, W2 (h, h), b2,
    W3 (h, K), b3``. The ReLU derivative at exactly zero is taken as 0.
    """

    def __init__(self, num_classes: int, feature_dim: int, hidden: int = 50):
        self.num_classes = num_classes
        self.feature_dim = feature_dim
        self.hidden = hidden
        d, h, K = feature_dim, hidden, num_classes
        self.shapes = [(d, h), (h,), (h, h), (h,), (h, K), (K,)]
        self.sizes = [int(np.prod(s)) for s in self.shapes]
        self.param_dim = sum(self.sizes)

    def unpack(self, x):
        x = np.asarray(x, dtype=np.float64)
        out, pos = [], 0
        for shape, size in zip(self.shapes, self.sizes):
            out.append(x[pos:pos + size].reshape(shape))
            pos += size
        return out

    def init_params(self, stream):
        parts = []
        fan_in = {0: self.feature_dim, 1: self.feature_dim, 2: self.hidden, 3: self.hidden,
                  4: self.hidden, 5: self.hidden}
        for i, size in enumerate(self.sizes):
            bound = 1.0 / np.sqrt(fan_in[i])
            parts.append(stream.uniform(-bound, bound, size))
        return np.concatenate(parts)

    def _forward(self, x, features):
        W1, b1, W2, b2, W3, b3 = self.unpack(x)
        z1 = features @ W1 + b1
        h1 = np.maximum(z1, 0.0)
        z2 = h1 @ W2 + b2
        h2 = np.maximum(z2, 0.0)
        out = h2 @ W3 + b3
        return z1, h1, z2, h2, _check_finite(out, "activations")

    def hidden_activations(self, x, features):
        z1, h1, z2, h2, _ = self._forward(x, np.atleast_2d(features))
        return h1, h2

    def logits(self, x, features):
        return self._forward(x, np.atleast_2d(features))[-1]

    def sample_gradients(self, x, features, labels):
        features = np.atleast_2d(features)
        labels = np.asarray(labels)
        n = len(features)
        W1, b1, W2, b2, W3, b3 = self.unpack(x)
        z1, h1, z2, h2, out = self._forward(x, features)
        g_out = _softmax(out)
        g_out[np.arange(n), labels] -= 1.0
        gW3 = h2[:, :, None] * g_out[:, None, :]
        g_h2 = (g_out @ W3.T) * (z2 > 0)
        gW2 = h1[:, :, None] * g_h2[:, None, :]
        g_h1 = (g_h2 @ W2.T) * (z1 > 0)
        gW1 = features[:, :, None] * g_h1[:, None, :]
        return np.concatenate(
            [gW1.reshape(n, -1), g_h1, gW2.reshape(n, -1), g_h2, gW3.reshape(n, -1), g_out], axis=1
        )

    def full_gradient(self, x, features, labels):
        if len(labels) == 0:
            raise ConfigError("full gradient of an empty shard", "partition")
        features = np.atleast_2d(features)
        labels = np.asarray(labels)
        n = len(features)
        W1, b1, W2, b2, W3, b3 = self.unpack(x)
        z1, h1, z2, h2, out = self._forward(x, features)
        g_out = _softmax(out)
        g_out[np.arange(n), labels] -= 1.0
        g_out /= n
        g_h2 = (g_out @ W3.T) * (z2 > 0)
        g_h1 = (g_h2 @ W2.T) * (z1 > 0)
        return np.concatenate([
            (features.T @ g_h1).ravel(), g_h1.sum(0),
            (h1.T @ g_h2).ravel(), g_h2.sum(0),
            (h2.T @ g_out).ravel(), g_out.sum(0),
        ])


def make_model(kind: str, num_classes: int, feature_dim: int, hidden: int = 50) -> LossModel:
    if kind == "softmax":
        return SoftmaxRegression(num_classes, feature_dim)
    if kind == "mlp":
        return MLP(num_classes, feature_dim, hidden)
    raise ConfigError(f"unknown model {kind!r}", "model.kind")


# single-sample helpers

def softmax_sample_loss(x: np.ndarray, s: Sample, num_classes: int) -> float:
    model = SoftmaxRegression(num_classes, len(s.feature))
    return float(model.sample_losses(x, s.feature[None], [s.label])[0])


def softmax_sample_gradient(x: np.ndarray, s: Sample, num_classes: int) -> np.ndarray:
    model = SoftmaxRegression(num_classes, len(s.feature))
    return model.sample_gradients(x, s.feature[None], [s.label])[0]


def mlp_sample_gradient(model: MLP, x: np.ndarray, s: Sample) -> np.ndarray:
    return model.sample_gradients(x, s.feature[None], [s.label])[0]


def full_gradient(model: LossModel, x: np.ndarray, samples: list[Sample]) -> np.ndarray:
    if not samples:
        raise ConfigError("full gradient of an empty shard", "partition")
    feats = np.stack([s.feature for s in samples])
    labels = np.array([s.label for s in samples])
    return model.full_gradient(x, feats, labels)
