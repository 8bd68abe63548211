"""Feed-forward networks on numpy: forward pass, backpropagation, Adam.

Weights are stored as ``(fan_in, fan_out)`` float64 arrays so a batch of row
vectors propagates as ``X @ W + b``. Every layer but the last applies the
hidden activation; the last layer applies the network's output kind:

* ``softmax`` -- class probabilities (classifiers)
* ``sigmoid`` -- values in (0, 1) (decoders over binary inputs)
* ``hidden``  -- the hidden activation again (encoders)
* ``linear``  -- identity
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, ShapeError

ACTIVATIONS = ("relu", "elu")
OUTPUT_KINDS = ("softmax", "sigmoid", "hidden", "linear")

PROB_FLOOR = 1e-12


@dataclass
class MlpParams:
    weights: list
    biases: list
    activation: str = "elu"
    output: str = "softmax"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ContractError(f"unknown activation {self.activation!r}")
        if self.output not in OUTPUT_KINDS:
            raise ContractError(f"unknown output kind {self.output!r}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeError("weights and biases must be non-empty lists of equal length")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ShapeError(f"layer {i}: weight {w.shape} does not match bias {b.shape}")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ShapeError(
                    f"layer {i} expects {w.shape[0]} inputs but layer {i - 1} "
                    f"produces {self.weights[i - 1].shape[1]}"
                )

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def sizes(self) -> list:
        return [self.input_dim] + [w.shape[1] for w in self.weights]

    def arrays(self) -> list:
        """Parameters in the flat order ``[W0, b0, W1, b1, ...]``."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def with_arrays(self, arrays) -> "MlpParams":
        return MlpParams(list(arrays[0::2]), list(arrays[1::2]), self.activation, self.output)

    def copy(self) -> "MlpParams":
        return self.with_arrays([a.copy() for a in self.arrays()])


@dataclass
class ForwardCache:
    """Activations kept from a forward pass for the backward pass."""

    weights: list
    inputs: list
    preacts: list
    output: np.ndarray


@dataclass
class GradientBundle:
    weights: list
    biases: list
    inputs: np.ndarray | None = None

    def arrays(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out


def init_mlp(sizes, activation="elu", output="softmax", rng=None) -> MlpParams:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(rng)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases, activation, output)


def _activate(kind, z):
    if kind == "relu":
        return np.maximum(z, 0.0)
    return (np.exp(np.minimum(z, 0.0)) - 1.0) + np.maximum(z, 0.0)


def _activation_grad(kind, z, a):
    """Derivative at pre-activation ``z`` given the activation ``a``."""
    if kind == "relu":
        return (z > 0).astype(np.float64)
    # elu'(z) = elu(z) + 1 for z <= 0 and 1 above, i.e. min(a, 0) + 1
    return np.minimum(a, 0.0) + 1.0


def softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _as_batch(batch):
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise ShapeError(f"expected a 2-D batch, got shape {x.shape}")
    return x


def mlp_forward(params: MlpParams, batch):
    """Run ``batch`` through the network; returns ``(outputs, cache)``."""
    x = _as_batch(batch)
    if x.shape[1] != params.input_dim:
        raise ShapeError(
            f"batch has {x.shape[1]} columns but the first layer expects {params.input_dim}"
        )
    inputs, preacts = [], []
    a = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(a)
        z = a @ w + b
        preacts.append(z)
        if i < last:
            a = _activate(params.activation, z)
        elif params.output == "softmax":
            a = softmax(z)
        elif params.output == "sigmoid":
            a = sigmoid(z)
        elif params.output == "hidden":
            a = _activate(params.activation, z)
        else:
            a = z
    return a, ForwardCache(list(params.weights), inputs, preacts, a)


def _check_cache(params, cache):
    if len(cache.weights) != len(params.weights) or any(
        cw is not w for cw, w in zip(cache.weights, params.weights)
    ):
        raise ContractError("forward cache was produced by different parameters")


def output_grad_to_logits(params: MlpParams, cache: ForwardCache, grad_output):
    """Chain a gradient w.r.t. the network output back through the output nonlinearity."""
    g = np.asarray(grad_output, dtype=np.float64)
    out = cache.output
    if g.shape != out.shape:
        raise ShapeError(f"output gradient {g.shape} does not match output {out.shape}")
    if params.output == "softmax":
        return out * (g - (g * out).sum(axis=1, keepdims=True))
    if params.output == "sigmoid":
        return g * out * (1.0 - out)
    if params.output == "hidden":
        return g * _activation_grad(params.activation, cache.preacts[-1], out)
    return g


def backward(params: MlpParams, cache: ForwardCache, grad_logits, param_grads=True) -> GradientBundle:
    """Backpropagate a gradient w.r.t. the last pre-activation.

    With ``param_grads=False`` only the input gradient is computed, which is
    all an attack needs.
    """
    _check_cache(params, cache)
    delta = np.asarray(grad_logits, dtype=np.float64)
    if delta.shape != cache.preacts[-1].shape:
        raise ShapeError(
            f"logit gradient {delta.shape} does not match logits {cache.preacts[-1].shape}"
        )
    n_layers = len(params.weights)
    gw = [None] * n_layers
    gb = [None] * n_layers
    for i in range(n_layers - 1, -1, -1):
        if param_grads:
            gw[i] = cache.inputs[i].T @ delta
            gb[i] = delta.sum(axis=0)
        upstream = delta @ params.weights[i].T
        if i:
            delta = upstream * _activation_grad(params.activation, cache.preacts[i - 1], cache.inputs[i])
    return GradientBundle(gw, gb, upstream)


def _check_labels(labels, n, num_classes):
    y = np.asarray(labels)
    if y.shape != (n,):
        raise ShapeError(f"expected {n} labels, got shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.equal(np.mod(y, 1), 0)):
            raise ContractError("labels must be integers")
        y = y.astype(np.int64)
    if n and (y.min() < 0 or y.max() >= num_classes):
        raise ContractError(f"labels must lie in [0, {num_classes})")
    return y


def onehot(labels, num_classes):
    out = np.zeros((len(labels), num_classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def mlp_backward(params: MlpParams, cache: ForwardCache, labels) -> GradientBundle:
    """Gradients of the mean cross-entropy over the batch."""
    if params.output != "softmax":
        raise ContractError("cross-entropy backward needs a softmax output layer")
    _check_cache(params, cache)
    probs = cache.output
    y = _check_labels(labels, probs.shape[0], probs.shape[1])
    return backward(params, cache, (probs - onehot(y, probs.shape[1])) / probs.shape[0])


def cross_entropy_per_sample(probabilities, labels):
    p = _as_batch(probabilities)
    y = _check_labels(labels, p.shape[0], p.shape[1])
    return -np.log(np.maximum(p[np.arange(len(y)), y], PROB_FLOOR))


def cross_entropy(probabilities, labels) -> float:
    """Mean of ``-log p_true``, with ``p_true`` floored at 1e-12."""
    return float(cross_entropy_per_sample(probabilities, labels).mean())


@dataclass
class AdamState:
    first_moments: list
    second_moments: list
    timestep: int = 0
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon_hat: float = 1e-8

    @classmethod
    def zeros_like(cls, arrays, learning_rate=0.001, **kwargs) -> "AdamState":
        if learning_rate <= 0:
            raise ContractError("learning rate must be positive")
        return cls(
            [np.zeros_like(a) for a in arrays],
            [np.zeros_like(a) for a in arrays],
            0,
            learning_rate,
            **kwargs,
        )


def adam_step(state: AdamState, params, grads):
    """One bias-corrected Adam step.

    ``params`` and ``grads`` are parallel lists of arrays. Returns
    ``(new_params, new_state)``; the inputs are left untouched.
    """
    if len(params) != len(grads) or len(params) != len(state.first_moments):
        raise ShapeError("parameter, gradient and moment lists differ in length")
    t = state.timestep + 1
    b1, b2 = state.beta1, state.beta2
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.first_moments, state.second_moments):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeError(f"gradient {g.shape} does not match parameter {p.shape}")
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        new_params.append(p - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon_hat))
        new_m.append(m)
        new_v.append(v)
    new_state = AdamState(
        new_m, new_v, t, state.learning_rate, state.beta1, state.beta2, state.epsilon_hat
    )
    return new_params, new_state


@dataclass
class MlpClassifier:
    """Differentiable classifier over its raw inputs (no masking or binarization)."""

    params: MlpParams
    name: str = field(default="mlp")

    @property
    def input_dim(self) -> int:
        return self.params.input_dim

    @property
    def num_classes(self) -> int:
        return self.params.output_dim

    def predict_proba(self, x):
        return mlp_forward(self.params, x)[0]

    def loss_and_grad(self, x, labels):
        """Per-sample cross-entropy and its gradient w.r.t. each input row."""
        probs, cache = mlp_forward(self.params, x)
        y = _check_labels(labels, probs.shape[0], probs.shape[1])
        losses = -np.log(np.maximum(probs[np.arange(len(y)), y], PROB_FLOOR))
        grads = backward(self.params, cache, probs - onehot(y, probs.shape[1]), param_grads=False)
        return losses, grads.inputs
