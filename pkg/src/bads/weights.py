"""Per-example importance weights: a lookup table or a tiny weight network.

Both representations carry the same running-average bookkeeping used to
estimate the total weight mass from a single minibatch.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ShapeError, ValidationError
from .nn import ModelParams, sigmoid


@dataclass
class RunningAverage:
    """Mean of the last ``window`` minibatch-mean weights."""

    window: int = 10
    recent: deque = field(default=None)
    value: float = 0.0

    def __post_init__(self):
        if self.window < 1:
            raise ValidationError("running-average window must be >= 1")
        if self.recent is None:
            self.recent = deque(maxlen=self.window)
        else:
            self.recent = deque(self.recent, maxlen=self.window)
        if self.recent:
            self.value = sum(self.recent) / len(self.recent)

    def copy(self) -> "RunningAverage":
        out = object.__new__(RunningAverage)
        out.window, out.recent, out.value = self.window, self.recent.copy(), self.value
        return out


@dataclass
class ScalarWeights:
    """One free weight in ``[0, 1]`` per training example."""

    w: np.ndarray
    running: RunningAverage

    @classmethod
    def constant(cls, n: int, value: float, window: int = 10) -> "ScalarWeights":
        if not 0.0 <= value <= 1.0:
            raise ValidationError("initial weight must be in [0, 1]")
        return cls(np.full(int(n), float(value)), RunningAverage(window, value=float(value)))

    def copy(self) -> "ScalarWeights":
        return ScalarWeights(self.w.copy(), self.running.copy())


LABEL_MODES = ("concat", "interact")


@dataclass
class WeightNet:
    """``w = sigmoid(features @ phi + b)`` for a single affine layer.

    Features are the embedding, optionally joined with the label: ``concat``
    appends the one-hot label; ``interact`` uses ``embedding (x) one-hot``
    followed by the one-hot, i.e. one affine head per class, which is what
    lets a single layer tell whether a label agrees with its features.
    ``phi`` is a one-layer :class:`ModelParams` with a single output.
    """

    phi: ModelParams
    running: RunningAverage
    use_labels: bool = False
    num_classes: int = 0
    label_mode: str = "concat"

    @classmethod
    def init(
        cls,
        embed_dim: int,
        rng: np.random.Generator,
        value: float = 0.5,
        window: int = 10,
        use_labels: bool = False,
        num_classes: int = 0,
        scale: float = 0.01,
        label_mode: str = "concat",
    ) -> "WeightNet":
        """Small random slopes, bias set so every output starts near ``value``."""
        if not 0.0 < value < 1.0:
            raise ValidationError("weight-net initial output must be in (0, 1)")
        if label_mode not in LABEL_MODES:
            raise ValidationError(f"unknown label_mode {label_mode!r}; choose from {', '.join(LABEL_MODES)}")
        if use_labels and num_classes < 2:
            raise ValidationError("label inputs need num_classes >= 2")
        if not use_labels:
            d = embed_dim
        elif label_mode == "concat":
            d = embed_dim + num_classes
        else:
            d = embed_dim * num_classes + num_classes
        W = rng.standard_normal((d, 1)) * scale
        b = np.array([np.log(value / (1.0 - value))])
        phi = ModelParams([W], [b], (), "logistic")
        return cls(phi, RunningAverage(window, value=float(value)), use_labels, num_classes, label_mode)

    @property
    def in_dim(self) -> int:
        return self.phi.in_dim

    @property
    def interacts(self) -> bool:
        return self.use_labels and self.label_mode == "interact"

    def copy(self) -> "WeightNet":
        return replace(self, phi=self.phi.copy(), running=self.running.copy())


WeightState = ScalarWeights | WeightNet


@dataclass
class WeightQuery:
    """What a weight representation may look at for a batch of training points."""

    indices: np.ndarray
    embeddings: np.ndarray | None = None
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        if self.embeddings is not None and len(self.embeddings) != len(self.indices):
            raise ShapeError(
                f"{len(self.embeddings)} embeddings for {len(self.indices)} indices"
            )


def _embeddings_and_labels(state: WeightNet, query: WeightQuery):
    if query.embeddings is None:
        raise ValidationError("weight network needs embeddings")
    x = np.asarray(query.embeddings, dtype=np.float64)
    if not state.use_labels:
        return x, None
    if query.labels is None:
        raise ValidationError("this weight network also needs labels")
    y = np.asarray(query.labels, dtype=np.int64)
    if len(y) != len(x):
        raise ShapeError(f"{len(y)} labels for {len(x)} embeddings")
    if len(y) and (y.min() < 0 or y.max() >= state.num_classes):
        raise ValidationError(f"labels must lie in [0, {state.num_classes})")
    return x, y


def _onehot(y, k):
    out = np.zeros((len(y), k))
    out[np.arange(len(y)), y] = 1.0
    return out


def weightnet_inputs(state: WeightNet, query: WeightQuery) -> np.ndarray:
    """The full feature matrix fed to the affine layer.

    The ``interact`` features are never built during training (see
    :func:`weightnet_logits`); this form is the reference for tests.
    """
    x, y = _embeddings_and_labels(state, query)
    if y is not None:
        onehot = _onehot(y, state.num_classes)
        if state.label_mode == "concat":
            x = np.hstack([x, onehot])
        else:
            x = np.hstack([(x[:, :, None] * onehot[:, None, :]).reshape(len(x), -1), onehot])
    if x.shape[1] != state.in_dim:
        raise ShapeError(f"weight network expects width {state.in_dim}, got {x.shape[1]}")
    return x


def _interact_blocks(state: WeightNet, d):
    k = state.num_classes
    if state.in_dim != d * k + k:
        raise ShapeError(f"weight network expects embedding width {(state.in_dim - k) // k}, got {d}")
    col = state.phi.weights[0][:, 0]
    return col[: d * k].reshape(d, k), col[d * k:]


def weightnet_logits(state: WeightNet, query: WeightQuery) -> np.ndarray:
    if not state.interacts:
        x = weightnet_inputs(state, query)
        return x @ state.phi.weights[0][:, 0] + state.phi.biases[0][0]
    x, y = _embeddings_and_labels(state, query)
    per_class, label_bias = _interact_blocks(state, x.shape[1])
    # row i only sees the head of its own label
    return np.einsum("ij,ji->i", x, per_class[:, y]) + label_bias[y] + state.phi.biases[0][0]


def weightnet_grad(state: WeightNet, query: WeightQuery, g_logit: np.ndarray) -> ModelParams:
    """Pull a per-example gradient on the logits back to ``phi``."""
    g_logit = np.asarray(g_logit, dtype=np.float64)
    bias = np.array([g_logit.sum()])
    if not state.interacts:
        x = weightnet_inputs(state, query)
        return ModelParams([(x.T @ g_logit)[:, None]], [bias], (), state.phi.loss)
    x, y = _embeddings_and_labels(state, query)
    k = state.num_classes
    scattered = _onehot(y, k) * g_logit[:, None]
    per_class = x.T @ scattered
    label_bias = scattered.sum(axis=0)
    col = np.concatenate([per_class.ravel(), label_bias])[:, None]
    return ModelParams([col], [bias], (), state.phi.loss)


def weights_for_batch(state: WeightState, query: WeightQuery) -> np.ndarray:
    if isinstance(state, ScalarWeights):
        return state.w[query.indices]
    return sigmoid(weightnet_logits(state, query))


def score_new_examples(state: WeightState, query: WeightQuery) -> np.ndarray:
    """Weights for points the model never trained on; weight network only."""
    if isinstance(state, ScalarWeights):
        raise NotImplementedError("scalar weights cannot score unseen examples")
    return weights_for_batch(state, query)
