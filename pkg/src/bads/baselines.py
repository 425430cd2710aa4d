"""Non-selecting comparison trainers: each just changes what data SGD sees.

* ``mixing``         - train and meta pooled together;
* ``meta_only``      - the meta set alone;
* ``random_select``  - the meta set plus a fixed random ``floor(beta * N_t)`` train subset;
* ``duplicate_meta`` - the train set plus meta copies cut off at exactly ``N_t`` rows.
"""

from __future__ import annotations

import enum

import numpy as np

from .engine import Batch, EpochSampler, sparsity_target
from .errors import DivergenceError, ValidationError
from .nn import backward, forward, per_example_losses


class BaselineKind(str, enum.Enum):
    MIXING = "mixing"
    META_ONLY = "meta_only"
    RANDOM_SELECT = "random_select"
    DUPLICATE_META = "duplicate_meta"


class BaselineStream:
    """Epoch-shuffled minibatches over a baseline's effective dataset.

    ``source`` records, per effective row, ``(split, index)`` with split 0 for
    train and 1 for meta.
    """

    def __init__(self, x, y, source, batch_size, rng):
        self.x, self.y, self.source = x, y, source
        self.sampler = EpochSampler(len(y), min(batch_size, len(y)), rng)

    def __len__(self):
        return len(self.y)

    def next(self) -> Batch:
        idx = self.sampler.next()
        return Batch(idx, self.x[idx], self.y[idx])


def effective_rows(kind, scenario, beta, select_rng):
    kind = BaselineKind(kind)
    n_t, n_m = len(scenario.train), len(scenario.meta)
    train_rows = [(0, i) for i in range(n_t)]
    meta_rows = [(1, j) for j in range(n_m)]
    if kind is BaselineKind.MIXING:
        return train_rows + meta_rows
    if kind is BaselineKind.META_ONLY:
        return meta_rows
    if kind is BaselineKind.RANDOM_SELECT:
        k = sparsity_target(n_t, beta)
        chosen = np.sort(select_rng.choice(n_t, size=k, replace=False))
        return [(0, int(i)) for i in chosen] + meta_rows
    if n_m == 0:
        raise ValidationError("duplicate_meta needs a non-empty meta set")
    copies = [(1, j % n_m) for j in range(n_t)]
    return train_rows + copies


def build_baseline_stream(kind, scenario, batch_size, beta, rng, select_rng=None) -> BaselineStream:
    """``select_rng`` fixes the random_select subset; ``rng`` drives the shuffling."""
    rows = effective_rows(kind, scenario, beta, select_rng if select_rng is not None else rng)
    if not rows:
        raise ValidationError(f"{BaselineKind(kind).value}: effective dataset is empty")
    split = np.array([r[0] for r in rows])
    idx = np.array([r[1] for r in rows])
    pool_x = np.vstack([scenario.train.x, scenario.meta.x])
    pool_y = np.concatenate([scenario.train.y, scenario.meta.y])
    rows_in_pool = idx + split * len(scenario.train)
    x, y = pool_x[rows_in_pool], pool_y[rows_in_pool]
    return BaselineStream(x, y, np.stack([split, idx], axis=1), batch_size, rng)


def sgd_step(params, batch: Batch, lr: float, step=None):
    """Plain minibatch SGD on the mean loss; raises on a non-finite loss."""
    trace = forward(params, batch.x)
    losses = per_example_losses(trace, batch.y)
    if not np.isfinite(losses).all():
        raise DivergenceError(f"non-finite loss at step {step}", step=step, term="loss")
    grad, _ = backward(params, trace, np.ones(len(batch)), batch.y)
    return params.map(lambda p, g: p - lr * g, grad), float(losses.mean())
