"""Dense numerics and the differentiable blocks the models are built from.

Matrices are float64 numpy arrays; a vector of logits for a batch is a
``(B, C)`` array. Dense layers follow the ``(out, in)`` weight layout, so a
forward pass is ``x @ W.T + b``.
"""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import DomainError, NumericError, ShapeError


def make_rng(seed):
    """Counter-based generator; equal seeds give equal streams on every platform."""
    return np.random.Generator(np.random.Philox(int(seed)))


def matmul(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def logsumexp(z, axis=-1):
    z = np.asarray(z, dtype=np.float64)
    if z.size == 0 or z.shape[axis] == 0:
        raise DomainError("log-sum-exp of an empty vector")
    mx = np.max(z, axis=axis, keepdims=True)
    out = mx + np.log(np.sum(np.exp(z - mx), axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis)


def softmax(z, axis=-1):
    z = np.asarray(z, dtype=np.float64)
    if z.size == 0 or z.shape[axis] == 0:
        raise DomainError("softmax of an empty vector")
    e = np.exp(z - np.max(z, axis=axis, keepdims=True))
    return e / np.sum(e, axis=axis, keepdims=True)


def cross_entropy(logits, label):
    """Loss and logit gradient for one example."""
    logits = np.asarray(logits, dtype=np.float64)
    if not 0 <= label < logits.shape[-1]:
        raise IndexError(f"label {label} outside {logits.shape[-1]} classes")
    p = softmax(logits)
    loss = -(logits[label] - logsumexp(logits))
    grad = p.copy()
    grad[label] -= 1.0
    return float(loss), grad


def cross_entropy_batch(logits, labels):
    """Mean cross-entropy over rows of ``logits`` and its gradient."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels {labels.shape} do not match logits {logits.shape}")
    if n and (labels.min() < 0 or labels.max() >= c):
        raise IndexError(f"label outside {c} classes")
    lse = logsumexp(logits, axis=1)
    rows = np.arange(n)
    loss = float(np.mean(lse - logits[rows, labels]))
    grad = softmax(logits, axis=1)
    grad[rows, labels] -= 1.0
    return loss, grad / n


def squared_error(pred, target):
    """Sum of squared differences and its gradient w.r.t. ``pred``."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} vs target {target.shape}")
    d = pred - target
    return float(np.sum(d * d)), 2.0 * d


class Activation(str, Enum):
    IDENTITY = "identity"
    RELU = "relu"
    TANH = "tanh"


def glorot_uniform(rng, fan_out, fan_in):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


class DenseLayer:
    def __init__(self, weights, bias, activation=Activation.IDENTITY):
        self.weights = np.array(weights, dtype=np.float64)
        self.bias = np.array(bias, dtype=np.float64)
        self.activation = Activation(activation)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(f"weights {self.weights.shape} and bias {self.bias.shape} disagree")

    @classmethod
    def init(cls, rng, n_in, n_out, activation=Activation.IDENTITY):
        return cls(glorot_uniform(rng, n_out, n_in), np.zeros(n_out), activation)

    @property
    def n_in(self):
        return self.weights.shape[1]

    @property
    def n_out(self):
        return self.weights.shape[0]

    def forward(self, x):
        """Returns the output and the cache ``backward`` needs."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ShapeError(f"layer expects (*, {self.n_in}) input, got {x.shape}")
        pre = x @ self.weights.T + self.bias
        if self.activation is Activation.RELU:
            out = np.maximum(pre, 0.0)
        elif self.activation is Activation.TANH:
            out = np.tanh(pre)
        else:
            out = pre
        return out, (x, pre, out)

    def backward(self, cache, grad_out):
        x, pre, out = cache
        if grad_out.shape != out.shape:
            raise ShapeError(f"upstream gradient {grad_out.shape} vs output {out.shape}")
        if self.activation is Activation.RELU:
            g = grad_out * (pre > 0.0)
        elif self.activation is Activation.TANH:
            g = grad_out * (1.0 - out * out)
        else:
            g = grad_out
        return g @ self.weights, g.T @ x, g.sum(axis=0)

    def copy(self):
        return DenseLayer(self.weights.copy(), self.bias.copy(), self.activation)


class OptimizerKind(str, Enum):
    SGD = "sgd"
    RMSPROP = "rmsprop"


@dataclass
class Optimizer:
    """Plain SGD or RMSProp over a dict of named parameter arrays.

    Updates are applied in place. RMSProp keeps one squared-gradient
    accumulator per parameter name.
    """

    kind: OptimizerKind = OptimizerKind.SGD
    learning_rate: float = 1e-3
    rmsprop_decay: float = 0.9
    rmsprop_epsilon: float = 1e-8
    accumulators: dict = field(default_factory=dict)

    def __post_init__(self):
        self.kind = OptimizerKind(self.kind)
        if not self.learning_rate > 0:
            raise DomainError(f"learning rate must be positive, got {self.learning_rate}")
        if not 0.0 < self.rmsprop_decay < 1.0:
            raise DomainError(f"rmsprop decay must lie in (0, 1), got {self.rmsprop_decay}")

    def step(self, params, grads):
        for name, g in grads.items():
            p = params[name]
            if p.shape != g.shape:
                raise ShapeError(f"{name}: parameter {p.shape} vs gradient {g.shape}")
            if self.kind is OptimizerKind.SGD:
                p -= self.learning_rate * g
                continue
            acc = self.accumulators.get(name)
            if acc is None or acc.shape != p.shape:
                acc = self._resized(acc, p.shape)
            acc *= self.rmsprop_decay
            acc += (1.0 - self.rmsprop_decay) * g * g
            self.accumulators[name] = acc
            p -= self.learning_rate * g / np.sqrt(acc + self.rmsprop_epsilon)
        return params

    @staticmethod
    def _resized(acc, shape):
        # class expansion grows the leading axis; keep existing statistics
        out = np.zeros(shape)
        if acc is not None:
            out[tuple(slice(0, n) for n in acc.shape)] = acc
        return out


def grad_check(loss_fn, params, grads, epsilon=1e-5, floor=1e-5):
    """Worst relative error between analytic and central-difference gradients.

    ``loss_fn()`` must read the arrays in ``params`` (perturbed in place and
    restored). Relative error is ``|a - n| / max(|a|, |n|, floor)``.
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise DomainError(f"epsilon {epsilon} outside [1e-7, 1e-3]")
    worst = 0.0
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"{name}: parameter {p.shape} vs gradient {g.shape}")
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            up = loss_fn()
            flat[i] = orig - epsilon
            down = loss_fn()
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericError(f"non-finite loss perturbing {name}[{i}]")
            numeric = (up - down) / (2.0 * epsilon)
            denom = max(abs(numeric), abs(gflat[i]), floor)
            worst = max(worst, abs(numeric - gflat[i]) / denom)
    return worst

