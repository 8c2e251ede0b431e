"""Minimal dense neural-network engine.

Dense stacks with ReLU/identity activations, hand-derived backward
passes, stable softmax / logistic losses, and an Adam optimizer.
Everything operates on 2-D float64 arrays (rows = samples); speed is
irrelevant at desk scale, so all math stays in double precision to keep
finite-difference checks tight.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatchError,
    EmptyBatchError,
    LabelRangeError,
    NotADistributionError,
    NumericalError,
    StaleCacheError,
)

ACTIVATIONS = ("relu", "identity")


def as_matrix(x, name: str = "input") -> np.ndarray:
    """Coerce to a 2-D float64 array, rejecting non-finite entries."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionMismatchError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NumericalError(f"{name} contains non-finite entries")
    return arr


def _check_finite(arr: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NumericalError(f"{what} produced non-finite values")
    return arr


@dataclass
class DenseLayer:
    """One affine layer: y = x @ weight + bias, then the activation."""

    weight: np.ndarray  # (in_dim, out_dim)
    bias: np.ndarray  # (out_dim,)
    activation: str = "relu"

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.bias.shape != (self.weight.shape[1],):
            raise DimensionMismatchError(
                f"bias shape {self.bias.shape} does not match weight {self.weight.shape}"
            )


@dataclass
class DenseStack:
    """A chain of DenseLayers; consecutive dimensions must agree."""

    layers: list[DenseLayer]

    def __post_init__(self):
        for i in range(1, len(self.layers)):
            prev_out = self.layers[i - 1].weight.shape[1]
            cur_in = self.layers[i].weight.shape[0]
            if prev_out != cur_in:
                raise DimensionMismatchError(
                    f"layer {i - 1} outputs {prev_out} features but layer {i} expects {cur_in}"
                )

    @property
    def input_dim(self) -> int:
        return self.layers[0].weight.shape[0]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weight.shape[1]

    def parameters(self) -> list[np.ndarray]:
        """Flat parameter list: [w0, b0, w1, b1, ...]. Arrays are live views."""
        params: list[np.ndarray] = []
        for layer in self.layers:
            params.append(layer.weight)
            params.append(layer.bias)
        return params

    def copy(self) -> "DenseStack":
        return DenseStack(
            [DenseLayer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers]
        )


def glorot_stack(dims: list[int], rng: np.random.Generator, *, final_activation: str = "identity") -> DenseStack:
    """Build a stack with uniform Glorot init, ReLU hidden, given final activation.

    dims = [in, h1, ..., out]; weights ~ U(-limit, limit) with
    limit = sqrt(6 / (fan_in + fan_out)), biases zero.
    """
    if len(dims) < 2:
        raise ValueError("need at least input and output dimensions")
    layers = []
    for i in range(len(dims) - 1):
        fan_in, fan_out = dims[i], dims[i + 1]
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weight = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        bias = np.zeros(fan_out)
        act = "relu" if i < len(dims) - 2 else final_activation
        layers.append(DenseLayer(weight, bias, act))
    return DenseStack(layers)


@dataclass
class ForwardCache:
    """Activation trace from forward(); consumed by backward()."""

    stack_id: int
    layer_shapes: list[tuple[int, int]]
    inputs: list[np.ndarray]  # input to each layer, post previous activation
    pre_activations: list[np.ndarray]


def forward(stack: DenseStack, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Run the stack on a batch, returning output and the activation trace."""
    x = as_matrix(x)
    if x.shape[1] != stack.input_dim:
        raise DimensionMismatchError(
            f"layer 0 expects {stack.input_dim} input features, got {x.shape[1]}"
        )
    inputs = []
    pre_acts = []
    cur = x
    for i, layer in enumerate(stack.layers):
        if cur.shape[1] != layer.weight.shape[0]:
            raise DimensionMismatchError(
                f"layer {i} expects {layer.weight.shape[0]} features, got {cur.shape[1]}"
            )
        inputs.append(cur)
        z = cur @ layer.weight + layer.bias
        pre_acts.append(z)
        cur = np.maximum(z, 0.0) if layer.activation == "relu" else z
    cache = ForwardCache(
        stack_id=id(stack),
        layer_shapes=[l.weight.shape for l in stack.layers],
        inputs=inputs,
        pre_activations=pre_acts,
    )
    return _check_finite(cur, "forward"), cache


def backward(
    stack: DenseStack, cache: ForwardCache, output_gradient: np.ndarray
) -> tuple[list[np.ndarray], np.ndarray]:
    """Backpropagate output_gradient through the stack.

    Returns (parameter_gradients, input_gradient) where the parameter
    gradients line up with stack.parameters().
    """
    if cache.stack_id != id(stack) or cache.layer_shapes != [l.weight.shape for l in stack.layers]:
        raise StaleCacheError("cache was produced by a different forward call")
    grad = np.asarray(output_gradient, dtype=np.float64)
    if grad.shape != (cache.inputs[0].shape[0], stack.output_dim):
        raise DimensionMismatchError(
            f"output_gradient shape {grad.shape} does not match output "
            f"({cache.inputs[0].shape[0]}, {stack.output_dim})"
        )
    param_grads: list[np.ndarray] = [None] * (2 * len(stack.layers))  # type: ignore[list-item]
    for i in reversed(range(len(stack.layers))):
        layer = stack.layers[i]
        if layer.activation == "relu":
            grad = grad * (cache.pre_activations[i] > 0.0)
        param_grads[2 * i] = cache.inputs[i].T @ grad
        param_grads[2 * i + 1] = grad.sum(axis=0)
        grad = grad @ layer.weight.T
    for g in param_grads:
        _check_finite(g, "backward")
    return param_grads, _check_finite(grad, "backward")


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise stable softmax."""
    logits = as_matrix(logits, "logits")
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    logits = as_matrix(logits, "logits")
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax_cross_entropy(
    logits: np.ndarray, labels: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean cross-entropy of softmax(logits) against integer labels.

    Returns (loss, gradient wrt logits) with gradient = (softmax - onehot) / n.
    """
    logits = as_matrix(logits, "logits")
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] != logits.shape[0]:
        raise DimensionMismatchError(
            f"labels shape {labels.shape} does not match logits rows {logits.shape[0]}"
        )
    if logits.shape[0] == 0:
        raise EmptyBatchError("cross-entropy needs at least one row")
    n, num_classes = logits.shape
    if labels.min() < 0 or labels.max() >= num_classes:
        raise LabelRangeError(
            f"labels must lie in [0, {num_classes}), got range "
            f"[{labels.min()}, {labels.max()}]"
        )
    logp = log_softmax(logits)
    loss = float(-logp[np.arange(n), labels].mean())
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    grad /= n
    return loss, _check_finite(grad, "softmax_cross_entropy")


def sigmoid(z: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def binary_logistic_loss(
    logits: np.ndarray, targets: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood of sigmoid(logits) against {0,1} targets.

    Computed in the logit domain: per-sample loss = softplus(z) - y*z.
    Returns (loss, gradient wrt logits) with gradient = (sigmoid(z) - y) / n.
    """
    z = np.asarray(logits, dtype=np.float64).reshape(-1)
    y = np.asarray(targets, dtype=np.float64).reshape(-1)
    if z.shape != y.shape:
        raise DimensionMismatchError(
            f"got {z.shape[0]} logits but {y.shape[0]} domain labels"
        )
    if z.shape[0] == 0:
        raise EmptyBatchError("logistic loss needs at least one sample")
    softplus = np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))
    loss = float((softplus - y * z).mean())
    grad = (sigmoid(z) - y) / z.shape[0]
    return loss, _check_finite(grad, "binary_logistic_loss")


def entropy(probabilities: np.ndarray, *, tol: float = 1e-6) -> np.ndarray:
    """Per-row Shannon entropy in nats, with 0*ln(0) taken as 0.

    Rows must be probability distributions (non-negative, summing to 1
    within tol).
    """
    p = as_matrix(probabilities, "probabilities")
    if np.any(p < 0.0):
        bad = int(np.where((p < 0.0).any(axis=1))[0][0])
        raise NotADistributionError(f"row {bad} has a negative entry")
    sums = p.sum(axis=1)
    off = np.abs(sums - 1.0)
    if np.any(off > tol):
        bad = int(np.argmax(off))
        raise NotADistributionError(
            f"row {bad} sums to {sums[bad]:.8f}, not 1 within {tol}"
        )
    plogp = np.where(p > 0.0, p * np.log(np.where(p > 0.0, p, 1.0)), 0.0)
    return -plogp.sum(axis=1)


def entropy_of_logits(logits: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Entropy of softmax(logits) per row plus its gradient wrt logits.

    d H / d z_j = -p_j * (log p_j + H); returned gradient is per-row (no
    batch averaging), callers scale as needed.
    """
    logp = log_softmax(logits)
    p = np.exp(logp)
    h = -(p * logp).sum(axis=1)
    grad = -p * (logp + h[:, None])
    return h, grad


@dataclass
class AdamState:
    """Per-parameter Adam accumulators plus hyperparameters."""

    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: list[np.ndarray] = field(default_factory=list)
    second_moment: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_parameters(cls, params: list[np.ndarray], learning_rate: float, **kw) -> "AdamState":
        state = cls(learning_rate=learning_rate, **kw)
        state.first_moment = [np.zeros_like(p) for p in params]
        state.second_moment = [np.zeros_like(p) for p in params]
        return state


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState) -> None:
    """Standard bias-corrected Adam update, applied to params in place."""
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise DimensionMismatchError(
            f"adam_step got {len(params)} params, {len(grads)} grads, "
            f"{len(state.first_moment)} accumulators"
        )
    state.step_count += 1
    t = state.step_count
    bias1 = 1.0 - state.beta1**t
    bias2 = 1.0 - state.beta2**t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if p.shape != g.shape:
            raise DimensionMismatchError(
                f"gradient shape {g.shape} does not match parameter {p.shape}"
            )
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.learning_rate * (m / bias1) / (np.sqrt(v / bias2) + state.epsilon)
