"""Dense-network training kernel: seeded init, forward pass, backprop, Adam.

Every operation here is a pure function of its inputs: models are never
mutated in place, and identical (inputs, seed) pairs produce byte-identical
parameters. Hidden layers use ReLU, the output layer is a softmax over the
two classes, and training minimizes mean cross-entropy plus an L2 penalty
on the weight matrices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .errors import ValidationError
from .rng import Xoshiro256
from .validation import check_features, check_labels

N_CLASSES = 2


@dataclass(frozen=True)
class HyperParams:
    """Hyperparameters for the local Adam training loop."""

    learning_rate: float = 1e-3
    l2: float = 1e-4
    batch_size: int = 16
    epochs: int = 25
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValidationError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.l2 < 0:
            raise ValidationError(f"l2 must be non-negative, got {self.l2}")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ValidationError(f"epochs must be >= 0, got {self.epochs}")
        if not (0.0 < self.adam_beta1 < 1.0 and 0.0 < self.adam_beta2 < 1.0):
            raise ValidationError("adam betas must lie strictly between 0 and 1")
        if self.adam_eps <= 0:
            raise ValidationError("adam_eps must be positive")


@dataclass
class Mlp:
    """Dense network parameters.

    weights[l] has shape (layer_dims[l], layer_dims[l+1]) and biases[l]
    has length layer_dims[l+1]. Layers with index < frozen_prefix never
    receive gradient updates (used for pretrained backbones).
    """

    layer_dims: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    frozen_prefix: int = 0

    def __post_init__(self):
        self.layer_dims = tuple(int(d) for d in self.layer_dims)
        if len(self.layer_dims) < 2:
            raise ValidationError("layer_dims needs at least an input and an output dim")
        if any(d < 1 for d in self.layer_dims):
            raise ValidationError(f"layer dims must be >= 1, got {self.layer_dims}")
        n = len(self.layer_dims) - 1
        if len(self.weights) != n or len(self.biases) != n:
            raise ValidationError(
                f"expected {n} weight/bias layers, got {len(self.weights)}/{len(self.biases)}"
            )
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            expected = (self.layer_dims[l], self.layer_dims[l + 1])
            if w.shape != expected:
                raise ValidationError(f"layer {l} weights have shape {w.shape}, expected {expected}")
            if b.shape != (expected[1],):
                raise ValidationError(f"layer {l} biases have shape {b.shape}, expected ({expected[1]},)")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ValidationError(f"layer {l} parameters contain non-finite values")
        if not 0 <= self.frozen_prefix <= n:
            raise ValidationError(f"frozen_prefix {self.frozen_prefix} out of range for {n} layers")

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    def copy(self) -> "Mlp":
        return Mlp(
            self.layer_dims,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.frozen_prefix,
        )


@dataclass
class Grads:
    """Per-layer gradients, shapes mirroring the model's parameters."""

    weight_grads: list[np.ndarray]
    bias_grads: list[np.ndarray]


@dataclass
class OptimizerState:
    """Adam first/second-moment accumulators plus the step counter."""

    m_weights: list[np.ndarray]
    v_weights: list[np.ndarray]
    m_biases: list[np.ndarray]
    v_biases: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros(cls, mlp: Mlp) -> "OptimizerState":
        return cls(
            [np.zeros_like(w) for w in mlp.weights],
            [np.zeros_like(w) for w in mlp.weights],
            [np.zeros_like(b) for b in mlp.biases],
            [np.zeros_like(b) for b in mlp.biases],
            0,
        )


def init_mlp(layer_dims: Sequence[int], seed: int) -> Mlp:
    """Seeded He-style uniform init: |w| <= sqrt(6 / fan_in), biases zero."""
    dims = tuple(int(d) for d in layer_dims)
    if len(dims) < 2:
        raise ValidationError("layer_dims needs at least an input and an output dim")
    if any(d < 1 for d in dims):
        raise ValidationError(f"layer dims must be >= 1, got {dims}")
    gen = Xoshiro256(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = math.sqrt(6.0 / fan_in)
        weights.append(gen.uniforms(fan_in * fan_out, -bound, bound).reshape(fan_in, fan_out))
        biases.append(np.zeros(fan_out, dtype=np.float64))
    return Mlp(dims, weights, biases, 0)


def _softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _forward_cached(mlp: Mlp, X: np.ndarray) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Forward pass keeping activations and pre-activations for backprop."""
    activations = [X]
    pre = []
    a = X
    last = mlp.n_layers - 1
    for l, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        z = a @ w + b
        pre.append(z)
        a = np.maximum(z, 0.0) if l < last else _softmax(z)
        activations.append(a)
    return activations, pre


def forward(mlp: Mlp, batch) -> np.ndarray:
    """Class-probability matrix of shape (n_samples, 2); rows sum to 1."""
    X = check_features(batch, dim=mlp.input_dim)
    activations, _ = _forward_cached(mlp, X)
    return activations[-1]


def predict(mlp: Mlp, batch) -> np.ndarray:
    """Argmax class labels for a batch."""
    return np.argmax(forward(mlp, batch), axis=1).astype(np.int64)


def accuracy(mlp: Mlp, features, labels) -> float:
    y = check_labels(labels)
    return float(np.mean(predict(mlp, features) == y))


def loss_and_grads(mlp: Mlp, batch, labels, l2: float = 0.0) -> tuple[float, Grads]:
    """Mean cross-entropy plus (l2/2)*sum(w^2), and its gradients.

    Gradients for layers below frozen_prefix are zeroed. The data loss is
    computed in log-sum-exp form so it stays finite for extreme logits.
    """
    X = check_features(batch, dim=mlp.input_dim)
    y = check_labels(labels, n_samples=X.shape[0])
    if l2 < 0:
        raise ValidationError(f"l2 must be non-negative, got {l2}")
    n = X.shape[0]
    activations, pre = _forward_cached(mlp, X)

    logits = pre[-1]
    zmax = logits.max(axis=1)
    lse = zmax + np.log(np.exp(logits - zmax[:, None]).sum(axis=1))
    data_loss = float(np.mean(lse - logits[np.arange(n), y]))
    penalty = 0.5 * l2 * sum(float((w * w).sum()) for w in mlp.weights)
    loss = data_loss + penalty
    if not math.isfinite(loss):
        raise ValidationError("loss is non-finite")

    delta = activations[-1].copy()
    delta[np.arange(n), y] -= 1.0
    delta /= n

    weight_grads: list[np.ndarray] = [None] * mlp.n_layers  # type: ignore[list-item]
    bias_grads: list[np.ndarray] = [None] * mlp.n_layers  # type: ignore[list-item]
    for l in range(mlp.n_layers - 1, -1, -1):
        weight_grads[l] = activations[l].T @ delta + l2 * mlp.weights[l]
        bias_grads[l] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ mlp.weights[l].T) * (pre[l - 1] > 0.0)
    for l in range(mlp.frozen_prefix):
        weight_grads[l] = np.zeros_like(mlp.weights[l])
        bias_grads[l] = np.zeros_like(mlp.biases[l])
    return loss, Grads(weight_grads, bias_grads)


def adam_step(
    mlp: Mlp, grads: Grads, opt_state: OptimizerState, hyper: HyperParams
) -> tuple[Mlp, OptimizerState]:
    """One bias-corrected Adam update; frozen-prefix layers pass through."""
    if len(grads.weight_grads) != mlp.n_layers or len(grads.bias_grads) != mlp.n_layers:
        raise ValidationError("gradient layer count does not match model")
    for l in range(mlp.n_layers):
        if grads.weight_grads[l].shape != mlp.weights[l].shape:
            raise ValidationError(f"layer {l} weight gradient shape mismatch")
        if grads.bias_grads[l].shape != mlp.biases[l].shape:
            raise ValidationError(f"layer {l} bias gradient shape mismatch")
        if opt_state.m_weights[l].shape != mlp.weights[l].shape:
            raise ValidationError(f"layer {l} optimizer state shape mismatch")

    t = opt_state.t + 1
    b1, b2 = hyper.adam_beta1, hyper.adam_beta2
    lr, eps = hyper.learning_rate, hyper.adam_eps
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t

    new_w, new_b = [], []
    mw, vw, mb, vb = [], [], [], []
    for l in range(mlp.n_layers):
        if l < mlp.frozen_prefix:
            new_w.append(mlp.weights[l].copy())
            new_b.append(mlp.biases[l].copy())
            mw.append(opt_state.m_weights[l].copy())
            vw.append(opt_state.v_weights[l].copy())
            mb.append(opt_state.m_biases[l].copy())
            vb.append(opt_state.v_biases[l].copy())
            continue
        gw, gb = grads.weight_grads[l], grads.bias_grads[l]
        m_w = b1 * opt_state.m_weights[l] + (1.0 - b1) * gw
        v_w = b2 * opt_state.v_weights[l] + (1.0 - b2) * gw * gw
        m_b = b1 * opt_state.m_biases[l] + (1.0 - b1) * gb
        v_b = b2 * opt_state.v_biases[l] + (1.0 - b2) * gb * gb
        new_w.append(mlp.weights[l] - lr * (m_w / bc1) / (np.sqrt(v_w / bc2) + eps))
        new_b.append(mlp.biases[l] - lr * (m_b / bc1) / (np.sqrt(v_b / bc2) + eps))
        mw.append(m_w)
        vw.append(v_w)
        mb.append(m_b)
        vb.append(v_b)

    model = Mlp(mlp.layer_dims, new_w, new_b, mlp.frozen_prefix)
    return model, OptimizerState(mw, vw, mb, vb, t)


def iter_train_epochs(mlp: Mlp, features, labels, hyper: HyperParams) -> Iterator[Mlp]:
    """Yield the model after each epoch of seeded-shuffle mini-batch Adam.

    Adam state persists across epochs; exhausting the iterator gives the
    same result as train_local with the same hyperparameters.
    """
    X = check_features(features, dim=mlp.input_dim)
    y = check_labels(labels, n_samples=X.shape[0])
    if hyper.epochs > 0 and mlp.frozen_prefix >= mlp.n_layers:
        raise ValidationError("model has no trainable layers")
    gen = Xoshiro256(hyper.seed)
    model = mlp.copy()
    opt = OptimizerState.zeros(model)
    n = X.shape[0]
    for _ in range(hyper.epochs):
        order = gen.permutation(n)
        for start in range(0, n, hyper.batch_size):
            idx = order[start : start + hyper.batch_size]
            _, grads = loss_and_grads(model, X[idx], y[idx], hyper.l2)
            model, opt = adam_step(model, grads, opt, hyper)
        yield model


def train_local(mlp: Mlp, features, labels, hyper: HyperParams) -> Mlp:
    """Train for hyper.epochs epochs of mini-batch Adam; deterministic."""
    model = mlp.copy()
    for model in iter_train_epochs(mlp, features, labels, hyper):
        pass
    return model
