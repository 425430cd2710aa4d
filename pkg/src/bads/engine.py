"""Joint Langevin updates for backbone parameters and example weights.

The target density over ``(theta, w)`` is

    log p = log p(w) + log p(theta) - sum_i w_i l(z_i^t; theta) - sum_j l(z_j^m; theta)

with a Gaussian base prior ``log p(theta) = -lambda/2 |theta|^2`` and the
sparsity prior ``log p(w) = -(sum w - floor(N_t beta))^2 / (2 sigma^2)``.
Each training iteration takes one minibatch Langevin step on ``theta`` and
then one on the weights (or the weight-network parameters).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import DivergenceError, ShapeError, ValidationError
from .nn import ModelParams, backward, forward, gaussian_noise, per_example_losses
from .weights import (
    ScalarWeights,
    WeightNet,
    WeightQuery,
    weightnet_grad,
    weights_for_batch,
)


@dataclass(frozen=True)
class SgldConfig:
    """Step sizes, prior strengths and batch geometry for one run.

    ``eta`` is the backbone step size, ``eta_w`` the weight (or weight-net)
    step size; ``None`` means "same as ``eta``". ``noise_scale`` multiplies
    the ``sqrt(eta)`` Langevin noise: 1.0 is plain SGLD, 0.0 turns every
    update into deterministic gradient ascent.
    """

    eta: float = 1e-3
    eta_w: float | None = None
    sigma: float = 1.0
    beta: float = 0.05
    rho_theta_t: float = 1.0
    rho_theta_m: float = 1.0
    rho_w_t: float = 1.0
    weight_decay: float = 0.0
    n_t: int = 1
    n_m: int = 1
    batch_t: int = 1
    batch_m: int = 1
    s_avg: int = 10
    noise_scale: float = 1.0
    steps: int = 0
    seed: int = 0

    def __post_init__(self):
        if not self.eta > 0:
            raise ValidationError("eta must be > 0")
        if self.eta_w is not None and not self.eta_w > 0:
            raise ValidationError("eta_w must be > 0")
        if not self.sigma > 0:
            raise ValidationError("sigma must be > 0")
        if not 0.0 < self.beta <= 1.0:
            raise ValidationError("beta must be in (0, 1]")
        for name in ("rho_theta_t", "rho_theta_m", "rho_w_t", "weight_decay"):
            if not getattr(self, name) >= 0:
                raise ValidationError(f"{name} must be >= 0")
        if self.s_avg < 1:
            raise ValidationError("s_avg must be >= 1")
        if self.n_t < 0 or self.n_m < 0:
            raise ValidationError("dataset sizes must be >= 0")
        if not 1 <= self.batch_t <= max(self.n_t, 1) or not 1 <= self.batch_m <= max(self.n_m, 1):
            raise ValidationError(
                f"batch sizes ({self.batch_t}, {self.batch_m}) must be in [1, dataset size] "
                f"({self.n_t}, {self.n_m})"
            )
        if not (self.noise_scale >= 0 and math.isfinite(self.noise_scale)):
            raise ValidationError("noise_scale must be finite and >= 0")
        if self.steps < 0:
            raise ValidationError("steps must be >= 0")

    @property
    def step_w(self) -> float:
        return self.eta if self.eta_w is None else self.eta_w

    @property
    def target(self) -> int:
        return sparsity_target(self.n_t, self.beta)

    def replace(self, **changes) -> "SgldConfig":
        return replace(self, **changes)


def sparsity_target(n_t: int, beta: float) -> int:
    # guard against 0.29 * 100 == 28.999999999999996
    return int(math.floor(n_t * beta + 1e-9))


@dataclass
class Batch:
    idx: np.ndarray
    x: np.ndarray
    y: np.ndarray

    def __len__(self):
        return len(self.idx)


def take(x, y, idx) -> Batch:
    idx = np.asarray(idx, dtype=np.int64)
    return Batch(idx, x[idx], y[idx])


class EpochSampler:
    """Uniform minibatches without replacement, reshuffled every epoch.

    A trailing partial batch is dropped so every batch has the same size.
    """

    def __init__(self, n: int, batch_size: int, rng: np.random.Generator):
        if not 1 <= batch_size <= n:
            raise ValidationError(f"batch size {batch_size} not in [1, {n}]")
        self.n, self.batch_size, self.rng = n, batch_size, rng
        self._order = np.empty(0, dtype=np.int64)
        self._pos = 0

    def next(self) -> np.ndarray:
        if self._pos + self.batch_size > len(self._order):
            self._order = self.rng.permutation(self.n)
            self._pos = 0
        out = self._order[self._pos : self._pos + self.batch_size]
        self._pos += self.batch_size
        return out

    def epoch(self) -> list:
        """All full batches of one fresh epoch."""
        order = self.rng.permutation(self.n)
        k = self.n // self.batch_size
        return [order[i * self.batch_size : (i + 1) * self.batch_size] for i in range(k)]


# priors -------------------------------------------------------------------


def log_prior_theta_grad(params: ModelParams, weight_decay: float) -> ModelParams:
    return params.map(lambda a: -weight_decay * a)


def log_prior_theta(params: ModelParams, weight_decay: float) -> float:
    return -0.5 * weight_decay * float(params.flat() @ params.flat())


def log_prior_w(total, cfg: SgldConfig):
    """Sparsity prior as a function of the total weight mass (broadcasts)."""
    return -((np.asarray(total) - cfg.target) ** 2) / (2.0 * cfg.sigma**2)


def estimated_total(batch_weights, w_bar: float, n_t: int) -> float:
    """Whole-set weight mass from one batch plus the running mean for the rest."""
    b = np.asarray(batch_weights)
    return float(b.sum() + (n_t - b.size) * w_bar)


def sparsity_prior_grad(batch_weights, w_bar: float, cfg: SgldConfig) -> np.ndarray:
    """d log p(w) / d w_i for each batch member, with ``w_bar`` held fixed."""
    total = estimated_total(batch_weights, w_bar, cfg.n_t)
    g = -(total - cfg.target) / cfg.sigma**2
    return np.full(np.asarray(batch_weights).shape, g)


def update_running_avg(state, batch_weights):
    b = np.asarray(batch_weights, dtype=np.float64)
    if b.size == 0:
        raise ValidationError("cannot update running average with an empty batch")
    running = state.running.copy()
    running.recent.append(float(b.sum()) / b.size)
    running.value = sum(running.recent) / len(running.recent)
    return replace(state, running=running)


# updates ------------------------------------------------------------------


def _check_finite(arrays, step, term):
    for a in arrays:
        if not np.isfinite(a).all():
            where = f"step {step}" if step is not None else "update"
            raise DivergenceError(f"non-finite {term} at {where}", step=step, term=term)


def _query(state, batch: Batch, trace) -> WeightQuery:
    if isinstance(state, WeightNet):
        return WeightQuery(batch.idx, trace.embedding, batch.y)
    return WeightQuery(batch.idx)


def _theta_grads(params, state, train: Batch, meta: Batch, cfg: SgldConfig):
    """Scaled loss gradients ``(c_t, g_t)`` and ``(c_m, g_m)``; ``None`` when inactive."""
    t_term = m_term = None
    if len(train) and cfg.rho_theta_t:
        tr = forward(params, train.x)
        w = weights_for_batch(state, _query(state, train, tr))
        t_term = (cfg.rho_theta_t * cfg.n_t, backward(params, tr, w, train.y)[0])
    if len(meta) and cfg.rho_theta_m:
        me = forward(params, meta.x)
        m_term = (cfg.rho_theta_m * cfg.n_m, backward(params, me, np.ones(len(meta)), meta.y)[0])
    return t_term, m_term


def _diagnose_theta(t_term, m_term, step):
    for term, name in ((t_term, "train-loss gradient"), (m_term, "meta-loss gradient")):
        if term is not None:
            _check_finite(term[1].arrays(), step, name)


def _combine_drift(params, t_term, m_term, weight_decay):
    # one pass over the arrays; the order of operations is fixed so that the
    # noiseless, prior-free update reproduces plain weighted SGD exactly
    lam = weight_decay
    if t_term is not None and m_term is not None:
        (c_t, g_t), (c_m, g_m) = t_term, m_term
        return params.map(lambda p, a, b: (-lam * p - c_t * a) - c_m * b, g_t, g_m)
    if t_term is not None:
        c_t, g_t = t_term
        return params.map(lambda p, a: -lam * p - c_t * a, g_t)
    if m_term is not None:
        c_m, g_m = m_term
        return params.map(lambda p, b: -lam * p - c_m * b, g_m)
    return params.map(lambda p: -lam * p)


def theta_drift(params, state, train: Batch, meta: Batch, cfg: SgldConfig, step=None):
    """``grad log p(theta)`` minus the scaled train and meta loss gradients."""
    t_term, m_term = _theta_grads(params, state, train, meta, cfg)
    drift = _combine_drift(params, t_term, m_term, cfg.weight_decay)
    if not drift.is_finite():
        _diagnose_theta(t_term, m_term, step)
        _check_finite(drift.arrays(), step, "backbone drift")
    return drift


def sgld_step_theta(params, state, train: Batch, meta: Batch, cfg: SgldConfig, rng, step=None):
    """One Langevin step on the backbone; returns new parameters."""
    t_term, m_term = _theta_grads(params, state, train, meta, cfg)
    drift = _combine_drift(params, t_term, m_term, cfg.weight_decay)
    half = cfg.eta / 2.0
    if cfg.noise_scale:
        std = cfg.noise_scale * math.sqrt(cfg.eta)
        new = params.map(lambda p, d: p + half * d + std * gaussian_noise(rng, p.shape), drift)
    else:
        new = params.map(lambda p, d: p + half * d, drift)
    if not new.is_finite():
        _diagnose_theta(t_term, m_term, step)
        _check_finite(new.arrays(), step, "backbone parameters")
    return new


def w_drift(params, state, train: Batch, cfg: SgldConfig, step=None):
    """Drift for the weight variables of one batch.

    Returns ``(drift, extras)``. For scalar weights ``drift`` is per batch
    member; for a weight network it is a ``ModelParams`` shaped like ``phi``.
    ``extras`` carries the batch losses and current batch weights.
    """
    trace = forward(params, train.x)
    losses = per_example_losses(trace, train.y)
    query = _query(state, train, trace)
    w = weights_for_batch(state, query)
    g_w = sparsity_prior_grad(w, state.running.value, cfg) - cfg.rho_w_t * cfg.n_t * losses / len(train)
    if not np.isfinite(g_w).all():
        _check_finite([losses], step, "train loss")
        _check_finite([g_w], step, "weight gradient")
    if isinstance(state, ScalarWeights):
        return g_w, {"losses": losses, "weights": w, "query": query}
    drift = weightnet_grad(state, query, g_w * w * (1.0 - w))
    return drift, {"losses": losses, "weights": w, "query": query}


def sgld_step_w(params, state, train: Batch, cfg: SgldConfig, rng, step=None, info=None):
    """One Langevin step on the weights touched by ``train``; returns a new state.

    Scalar weights are clamped to ``[0, 1]`` after the noisy update;
    off-batch weights are left alone. The running mean is refreshed with the
    post-update batch weights. If ``info`` is a dict it receives the batch
    ``losses`` and the post-update ``batch_weights``.
    """
    drift, extras = w_drift(params, state, train, cfg, step)
    if info is not None:
        info["losses"] = extras["losses"]
    half = cfg.step_w / 2.0
    std = cfg.noise_scale * math.sqrt(cfg.step_w)
    if isinstance(state, ScalarWeights):
        upd = extras["weights"] + half * drift
        if cfg.noise_scale:
            upd = upd + std * gaussian_noise(rng, upd.shape)
        upd = np.clip(upd, 0.0, 1.0)
        w = state.w.copy()
        w[train.idx] = upd
        if info is not None:
            info["batch_weights"] = upd
        return update_running_avg(ScalarWeights(w, state.running), upd)
    if cfg.noise_scale:
        phi = state.phi.map(lambda p, d: p + half * d + std * gaussian_noise(rng, p.shape), drift)
    else:
        phi = state.phi.map(lambda p, d: p + half * d, drift)
    _check_finite(phi.arrays(), step, "weight-network parameters")
    new = replace(state, phi=phi)
    upd = weights_for_batch(new, extras["query"])
    if info is not None:
        info["batch_weights"] = upd
    return update_running_avg(new, upd)


# full-batch density -------------------------------------------------------


def full_weights(params, state, train_x, train_y) -> np.ndarray:
    if isinstance(state, ScalarWeights):
        return state.w
    trace = forward(params, train_x)
    return weights_for_batch(state, WeightQuery(np.arange(len(train_x)), trace.embedding, train_y))


def assemble_log_posterior(params, weights, train, meta, cfg: SgldConfig):
    """Unnormalised log-posterior over the full train and meta sets.

    ``train`` and ``meta`` are ``(x, y)`` pairs. ``weights`` is a weight
    state or a plain array whose last axis runs over the training points;
    leading axes broadcast, so a stack of weight vectors yields a stack of
    log-densities.
    """
    tx, ty = train
    mx, my = meta
    if isinstance(weights, (ScalarWeights, WeightNet)):
        w = full_weights(params, weights, tx, ty)
    else:
        w = np.asarray(weights, dtype=np.float64)
    if w.shape[-1] != len(tx):
        raise ShapeError(f"{w.shape[-1]} weights for {len(tx)} training points")
    train_losses = per_example_losses(forward(params, tx), ty) if len(tx) else np.zeros(0)
    meta_loss = float(per_example_losses(forward(params, mx), my).sum()) if len(mx) else 0.0
    return (
        log_prior_w(w.sum(axis=-1), cfg)
        + log_prior_theta(params, cfg.weight_decay)
        - w @ train_losses
        - meta_loss
    )
