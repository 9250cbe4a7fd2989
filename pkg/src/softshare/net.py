"""Dense feedforward classifier with hand-derived gradients.

Weights, biases, and activations are float64 numpy arrays (row-major).
A network is an ordered list of layers, each holding a weight matrix of
shape (out, in), a bias vector of shape (out,), and an activation name.
Hidden layers use relu; the final layer must use softmax. The error loss
is the mean cross-entropy of the true class over a batch.

Only weight-matrix entries count toward ``weight_count``; biases are
trained normally but are tracked separately (they stay dense and at full
precision through the whole compression pipeline).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DataFormatError, NumericError

ACTIVATIONS = ("relu", "softmax")

# Probabilities are floored at 1e-300 before taking logs, so a confidently
# wrong prediction yields a large finite loss instead of inf.
LOG_PROB_FLOOR = float(np.log(1e-300))


@dataclass
class Layer:
    weights: np.ndarray  # (out, in)
    biases: np.ndarray   # (out,)
    activation: str

    def __post_init__(self):
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        self.biases = np.ascontiguousarray(self.biases, dtype=np.float64)
        if self.weights.ndim != 2:
            raise ConfigurationError("layer weights must be a 2-d matrix")
        if self.biases.shape != (self.weights.shape[0],):
            raise ConfigurationError(
                f"bias shape {self.biases.shape} does not match "
                f"{self.weights.shape[0]} output units"
            )
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.activation!r}")

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    def copy(self) -> "Layer":
        return Layer(self.weights.copy(), self.biases.copy(), self.activation)


@dataclass
class Network:
    layers: list[Layer]

    def __post_init__(self):
        if not self.layers:
            raise ConfigurationError("network needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if nxt.in_dim != prev.out_dim:
                raise ConfigurationError(
                    f"layer dimensions do not chain: {prev.out_dim} -> {nxt.in_dim}"
                )
        if self.layers[-1].activation != "softmax":
            raise ConfigurationError("final layer must use softmax")

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def weight_count(self) -> int:
        """Total number of weight-matrix entries (biases excluded)."""
        return sum(l.weights.size for l in self.layers)

    def copy(self) -> "Network":
        return Network([l.copy() for l in self.layers])


@dataclass
class Batch:
    inputs: np.ndarray   # (B, in_dim)
    labels: np.ndarray   # (B,) integer class indices

    def __post_init__(self):
        self.inputs = np.ascontiguousarray(self.inputs, dtype=np.float64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2 or self.labels.ndim != 1:
            raise ConfigurationError("batch needs 2-d inputs and 1-d labels")
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise ConfigurationError("batch inputs and labels disagree on size")
        if self.inputs.shape[0] < 1:
            raise ConfigurationError("batch must contain at least one sample")

    def __len__(self) -> int:
        return self.inputs.shape[0]


def make_network(sizes, seed=0) -> Network:
    """Random network for the given layer sizes, e.g. (784, 300, 100, 10).

    Hidden layers get relu with He-scaled weights, the final layer softmax
    with 1/sqrt(fan_in) scaling. Biases start at zero.
    """
    if len(sizes) < 2:
        raise ConfigurationError("need at least input and output sizes")
    rng = np.random.default_rng(seed)
    layers = []
    for k, (fan_in, fan_out) in enumerate(zip(sizes, sizes[1:])):
        last = k == len(sizes) - 2
        scale = np.sqrt(1.0 / fan_in) if last else np.sqrt(2.0 / fan_in)
        w = rng.normal(0.0, scale, size=(fan_out, fan_in))
        layers.append(Layer(w, np.zeros(fan_out), "softmax" if last else "relu"))
    return Network(layers)


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    """Row-wise softmax, shifted by the row max so huge logits stay finite."""
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _log_softmax_rows(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _forward_trace(net: Network, inputs: np.ndarray):
    """Forward pass keeping pre-activations and activations per layer."""
    if inputs.shape[1] != net.in_dim:
        raise ConfigurationError(
            f"input width {inputs.shape[1]} does not match first layer "
            f"({net.in_dim} inputs)"
        )
    acts = [inputs]
    pre = []
    a = inputs
    for layer in net.layers:
        z = a @ layer.weights.T + layer.biases
        pre.append(z)
        a = _softmax_rows(z) if layer.activation == "softmax" else np.maximum(z, 0.0)
        acts.append(a)
    return pre, acts


def forward(net: Network, batch: Batch) -> np.ndarray:
    """Class probabilities, one simplex row per sample."""
    _, acts = _forward_trace(net, batch.inputs)
    return acts[-1]


def _diagnose_nonfinite(net: Network, inputs: np.ndarray) -> str:
    pre, _ = _forward_trace(net, inputs)
    for k, z in enumerate(pre):
        if not np.all(np.isfinite(z)):
            return f"first non-finite pre-activation in layer {k}"
    return "activations finite; loss reduction produced a non-finite value"


def error_loss_and_grad(net: Network, batch: Batch):
    """Mean cross-entropy of the true class and its exact gradients.

    Returns (loss, grads) where grads is a list of (d_weights, d_biases)
    pairs matching ``net.layers``.
    """
    pre, acts = _forward_trace(net, batch.inputs)
    n = len(batch)
    logp = _log_softmax_rows(pre[-1])
    true_logp = np.maximum(logp[np.arange(n), batch.labels], LOG_PROB_FLOOR)
    loss = float(-true_logp.mean())
    if not np.isfinite(loss):
        raise NumericError(
            f"non-finite error loss: {_diagnose_nonfinite(net, batch.inputs)}"
        )

    probs = np.exp(logp)
    delta = probs
    delta[np.arange(n), batch.labels] -= 1.0
    delta /= n

    grads = [None] * len(net.layers)
    for k in range(len(net.layers) - 1, -1, -1):
        grads[k] = (delta.T @ acts[k], delta.sum(axis=0))
        if k > 0:
            delta = (delta @ net.layers[k].weights) * (pre[k - 1] > 0.0)
    return loss, grads


def evaluate(net: Network, data) -> float:
    """Top-1 error rate over a Batch or an iterable of Batch, in [0, 1]."""
    if isinstance(data, Batch):
        data = [data]
    wrong = 0
    total = 0
    for batch in data:
        probs = forward(net, batch)
        wrong += int(np.count_nonzero(probs.argmax(axis=1) != batch.labels))
        total += len(batch)
    if total == 0:
        raise DataFormatError("evaluation stream is empty")
    return wrong / total


def iter_batches(inputs, labels, batch_size, rng=None):
    """Yield Batch objects; shuffled when an rng is given."""
    n = inputs.shape[0]
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        yield Batch(inputs[idx], labels[idx])


def flat_weights(net: Network) -> np.ndarray:
    """All weight-matrix entries concatenated layer by layer (copy)."""
    return np.concatenate([l.weights.ravel() for l in net.layers])


def set_flat_weights(net: Network, flat: np.ndarray) -> None:
    if flat.shape != (net.weight_count,):
        raise ConfigurationError("flat weight vector has the wrong length")
    pos = 0
    for layer in net.layers:
        size = layer.weights.size
        layer.weights[...] = flat[pos:pos + size].reshape(layer.weights.shape)
        pos += size


def split_like_weights(net: Network, flat: np.ndarray):
    """Views of a flat per-weight vector reshaped to each layer's matrix."""
    out = []
    pos = 0
    for layer in net.layers:
        size = layer.weights.size
        out.append(flat[pos:pos + size].reshape(layer.weights.shape))
        pos += size
    return out
