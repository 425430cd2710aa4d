"""Small dense feedforward network with hand-written backprop.

Everything is float64 numpy. A network is a list of affine layers; hidden
layers are followed by an activation, the last layer emits raw logits. Three
per-example losses are supported:

* ``"softmax"``  - multiclass cross-entropy, labels are ints in ``[0, K)``;
* ``"logistic"`` - binary cross-entropy on a single logit, labels in ``{0, 1}``;
* ``"squared"``  - ``(y - out)^2 / 2`` on a single output, real-valued labels.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, ValidationError

ACTIVATIONS = ("relu", "sigmoid", "tanh")
LOSSES = ("softmax", "logistic", "squared")


def rng_stream(seed: int, name: str = "default") -> np.random.Generator:
    """Counter-based generator for the named substream of ``seed``.

    Streams with different names are statistically independent, and the same
    ``(seed, name)`` pair always reproduces the same draws.
    """
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), key])))


def gaussian_noise(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.standard_normal(shape)


@dataclass
class ModelParams:
    """Layer weights ``(fan_in, fan_out)`` and biases ``(fan_out,)``."""

    weights: list
    biases: list
    activations: tuple = ()
    loss: str = "softmax"

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeError("need one bias per weight matrix and at least one layer")
        if len(self.activations) != len(self.weights) - 1:
            raise ValidationError(
                f"{len(self.weights) - 1} hidden layers but {len(self.activations)} activations"
            )
        for act in self.activations:
            if act not in ACTIVATIONS:
                raise ValidationError(f"unknown activation {act!r}")
        if self.loss not in LOSSES:
            raise ValidationError(f"unknown loss {self.loss!r}")
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or b.shape != (W.shape[1],):
                raise ShapeError(f"layer {k}: weight {W.shape} incompatible with bias {b.shape}")
            if k and self.weights[k - 1].shape[1] != W.shape[0]:
                raise ShapeError(
                    f"layer {k}: input width {W.shape[0]} != previous output width "
                    f"{self.weights[k - 1].shape[1]}"
                )
        if self.loss in ("logistic", "squared") and self.out_dim != 1:
            raise ShapeError(f"{self.loss} loss needs a single output, got {self.out_dim}")

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def num_classes(self) -> int:
        return 2 if self.loss == "logistic" else self.out_dim

    def arrays(self) -> list:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def _rebuild(self, arrays) -> "ModelParams":
        # shapes are inherited from a validated instance, skip __post_init__
        out = object.__new__(ModelParams)
        out.weights = list(arrays[0::2])
        out.biases = list(arrays[1::2])
        out.activations = self.activations
        out.loss = self.loss
        return out

    def copy(self) -> "ModelParams":
        return self._rebuild([a.copy() for a in self.arrays()])

    def zeros_like(self) -> "ModelParams":
        return self._rebuild([np.zeros_like(a) for a in self.arrays()])

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_flat(self, vec: np.ndarray) -> "ModelParams":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != self.size:
            raise ShapeError(f"flat vector has {vec.size} entries, model has {self.size}")
        out, pos = [], 0
        for a in self.arrays():
            out.append(vec[pos : pos + a.size].reshape(a.shape).copy())
            pos += a.size
        return self._rebuild(out)

    @property
    def size(self) -> int:
        return sum(a.size for a in self.arrays())

    def is_finite(self) -> bool:
        # a non-finite entry makes the sum non-finite; overflow of a finite
        # sum is a false alarm we accept, it only triggers the slow path
        return all(np.isfinite(a.sum()) for a in self.arrays()) or all(
            np.isfinite(a).all() for a in self.arrays()
        )

    def map(self, fn, *others: "ModelParams") -> "ModelParams":
        """Apply ``fn`` array-wise across this and the other parameter sets."""
        groups = zip(self.arrays(), *(o.arrays() for o in others))
        return self._rebuild([fn(*g) for g in groups])


def init_mlp(
    sizes,
    rng: np.random.Generator,
    activation: str = "relu",
    loss: str = "softmax",
) -> ModelParams:
    """He-scaled normal init (std ``sqrt(2 / fan_in)``), zero biases."""
    sizes = [int(s) for s in sizes]
    if len(sizes) < 2 or min(sizes[1:]) < 1 or sizes[0] < 0:
        raise ValidationError(f"bad layer sizes {sizes}")
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        std = np.sqrt(2.0 / fan_in) if fan_in else 0.0
        weights.append(rng.standard_normal((fan_in, fan_out)) * std)
        biases.append(np.zeros(fan_out))
    return ModelParams(weights, biases, (activation,) * (len(sizes) - 2), loss)


@dataclass
class ForwardTrace:
    inputs: np.ndarray
    pre: list = field(default_factory=list)
    post: list = field(default_factory=list)
    loss: str = "softmax"

    @property
    def logits(self) -> np.ndarray:
        return self.pre[-1]

    @property
    def embedding(self) -> np.ndarray:
        """Activation feeding the output layer (the inputs for a linear model)."""
        return self.post[-2] if len(self.post) > 1 else self.inputs


def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "sigmoid":
        return sigmoid(z)
    return np.tanh(z)


def _act_grad(name, z, a):
    if name == "relu":
        return (z > 0).astype(np.float64)
    if name == "sigmoid":
        return a * (1.0 - a)
    return 1.0 - a * a


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def forward(params: ModelParams, inputs) -> ForwardTrace:
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"inputs must be 2-D, got shape {x.shape}")
    trace = ForwardTrace(inputs=x, loss=params.loss)
    a = x
    last = len(params.weights) - 1
    for k, (W, b) in enumerate(zip(params.weights, params.biases)):
        if a.shape[1] != W.shape[0]:
            raise ShapeError(f"layer {k}: expected input width {W.shape[0]}, got {a.shape[1]}")
        z = a @ W + b
        a = z if k == last else _act(params.activations[k], z)
        trace.pre.append(z)
        trace.post.append(a)
    return trace


def _check_labels(loss, logits, labels):
    y = np.asarray(labels)
    if y.shape != (logits.shape[0],):
        raise ShapeError(f"{y.shape[0] if y.ndim else 0} labels for batch of {logits.shape[0]}")
    if loss == "squared":
        return y.astype(np.float64)
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.mod(y, 1) == 0):
            raise ValidationError("class labels must be integers")
        y = y.astype(np.int64)
    k = 2 if loss == "logistic" else logits.shape[1]
    if y.size and (y.min() < 0 or y.max() >= k):
        raise ValidationError(f"labels must lie in [0, {k}), got range [{y.min()}, {y.max()}]")
    return y


def log_softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def per_example_losses(trace: ForwardTrace, labels) -> np.ndarray:
    z = trace.logits
    y = _check_labels(trace.loss, z, labels)
    if trace.loss == "softmax":
        return -log_softmax(z)[np.arange(z.shape[0]), y]
    if trace.loss == "logistic":
        s = z[:, 0]
        return np.maximum(s, 0.0) - y * s + np.log1p(np.exp(-np.abs(s)))
    return 0.5 * (y - z[:, 0]) ** 2


def loss_logit_grad(trace: ForwardTrace, labels) -> np.ndarray:
    """d loss_i / d logits_i, one row per example."""
    z = trace.logits
    y = _check_labels(trace.loss, z, labels)
    if trace.loss == "softmax":
        g = np.exp(log_softmax(z))
        g[np.arange(z.shape[0]), y] -= 1.0
        return g
    if trace.loss == "logistic":
        return (sigmoid(z[:, 0]) - y)[:, None]
    return (z[:, 0] - y)[:, None]


def backward(params: ModelParams, trace: ForwardTrace, weights, labels):
    """Gradient of ``mean_i(weights_i * loss_i)`` over the batch.

    Returns ``(grad, grad_embedding)`` where ``grad`` has the shape of
    ``params`` and ``grad_embedding`` is the gradient with respect to
    ``trace.embedding``.
    """
    n = trace.logits.shape[0]
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (n,):
        raise ShapeError(f"{w.size} example weights for batch of {n}")
    if not np.isfinite(w).all() or (w < 0).any():
        raise ValidationError("example weights must be finite and nonnegative")
    delta = loss_logit_grad(trace, labels) * (w / max(n, 1))[:, None]
    gW, gb = [], []
    grad_embedding = None
    for k in range(len(params.weights) - 1, -1, -1):
        a_in = trace.post[k - 1] if k else trace.inputs
        gW.append(a_in.T @ delta)
        gb.append(delta.sum(axis=0))
        d_in = delta @ params.weights[k].T
        if k == len(params.weights) - 1:
            grad_embedding = d_in
        if k:
            delta = d_in * _act_grad(params.activations[k - 1], trace.pre[k - 1], trace.post[k - 1])
    grad = params._rebuild([a for pair in zip(gW[::-1], gb[::-1]) for a in pair])
    return grad, grad_embedding


def predict(params: ModelParams, inputs) -> np.ndarray:
    z = forward(params, inputs).logits
    if params.loss == "logistic":
        return (z[:, 0] > 0).astype(np.int64)
    if params.loss == "squared":
        return z[:, 0]
    return z.argmax(axis=1)
