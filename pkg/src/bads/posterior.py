"""Checking the Langevin sampler against an exact grid posterior.

The micro-model has one backbone parameter ``theta`` (a bias with no
inputs, squared loss ``(z - theta)^2 / 2``), a handful of training values with
one weight each, and a meta set. That is small enough to tabulate the
posterior on a regular grid and compare it with the empirical law of an
SGLD chain built from the same engine steps used for real training.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .engine import SgldConfig, assemble_log_posterior, sgld_step_theta, sgld_step_w, take
from .errors import DivergenceError, ValidationError
from .nn import ModelParams, rng_stream
from .weights import RunningAverage, ScalarWeights


@dataclass
class MicroModel:
    train_values: tuple = (0.3, 1.5)
    meta_values: tuple = ()
    weight_decay: float = 1.0
    sigma: float = 0.2
    beta: float = 0.5

    def __post_init__(self):
        self.train_values = tuple(float(v) for v in self.train_values)
        self.meta_values = tuple(float(v) for v in self.meta_values)
        vals = self.train_values + self.meta_values + (self.weight_decay, self.sigma, self.beta)
        if not np.all(np.isfinite(vals)):
            raise ValidationError("micro-model values must be finite")

    @property
    def n_t(self) -> int:
        return len(self.train_values)

    @property
    def n_m(self) -> int:
        return len(self.meta_values)

    @property
    def ndim(self) -> int:
        return 1 + self.n_t

    def params(self, theta: float) -> ModelParams:
        return ModelParams([np.zeros((0, 1))], [np.array([float(theta)])], (), "squared")

    def train(self):
        return np.zeros((self.n_t, 0)), np.array(self.train_values)

    def meta(self):
        return np.zeros((self.n_m, 0)), np.array(self.meta_values)

    def sgld_config(self, eta=1e-3, noise_scale=1.0, seed=0, s_avg=10) -> SgldConfig:
        return SgldConfig(
            eta=eta, sigma=self.sigma, beta=self.beta, weight_decay=self.weight_decay,
            n_t=self.n_t, n_m=self.n_m, batch_t=max(self.n_t, 1), batch_m=max(self.n_m, 1),
            s_avg=s_avg, noise_scale=noise_scale, seed=seed,
        )

    def log_posterior(self, theta, weights) -> np.ndarray:
        """Engine log-density at one ``theta`` for a stack of weight vectors."""
        return assemble_log_posterior(
            self.params(theta), weights, self.train(), self.meta(), self.sgld_config()
        )


@dataclass
class GridPosterior:
    """Normalised cell masses on a regular grid; axis 0 is ``theta``."""

    edges: list
    mass: np.ndarray
    names: list = field(default_factory=list)

    @property
    def centres(self) -> list:
        return [0.5 * (e[1:] + e[:-1]) for e in self.edges]

    def marginal(self, axis: int) -> np.ndarray:
        other = tuple(a for a in range(self.mass.ndim) if a != axis)
        return self.mass.sum(axis=other) if other else self.mass

    def mean(self, axis: int) -> float:
        return float(self.marginal(axis) @ self.centres[axis])

    def var(self, axis: int) -> float:
        c = self.centres[axis]
        return float(self.marginal(axis) @ (c - self.mean(axis)) ** 2)


def _evaluate(model: MicroModel, theta_edges, resolution):
    theta_c = 0.5 * (theta_edges[1:] + theta_edges[:-1])
    w_edges = np.linspace(0.0, 1.0, resolution + 1)
    w_c = 0.5 * (w_edges[1:] + w_edges[:-1])
    if model.n_t:
        mesh = np.stack(np.meshgrid(*([w_c] * model.n_t), indexing="ij"), axis=-1)
        flat_w = mesh.reshape(-1, model.n_t)
        shape = (resolution,) * model.n_t
    else:
        flat_w = np.zeros((1, 0))
        shape = ()
    logp = np.stack([np.reshape(model.log_posterior(t, flat_w), shape) for t in theta_c])
    logp -= logp.max()
    mass = np.exp(logp)
    total = mass.sum()
    if not total > 0 or not np.isfinite(total):
        raise ValidationError("grid posterior has no mass; widen bounds or raise resolution")
    return [theta_edges] + [w_edges] * model.n_t, mass / total


def grid_posterior(model: MicroModel, resolution: int = 64, theta_bounds=None, width: float = 7.0):
    """Tabulate the posterior over ``(theta, w_1, ..., w_n)`` with ``w`` in ``[0, 1]``.

    Without explicit ``theta_bounds`` a coarse pass over a wide window locates
    the ``theta`` marginal, then the grid spans ``width`` posterior standard
    deviations either side of its mean.
    """
    if resolution < 64:
        raise ValidationError("resolution must be >= 64 per axis")
    if theta_bounds is None:
        anchors = np.array(model.train_values + model.meta_values + (0.0,))
        prec = model.weight_decay + model.n_m
        spread = 10.0 / np.sqrt(prec) if prec > 0 else 10.0
        wide = np.linspace(anchors.min() - spread, anchors.max() + spread, 257)
        edges, mass = _evaluate(model, wide, 64 if model.n_t else resolution)
        c = 0.5 * (wide[1:] + wide[:-1])
        m = mass.sum(axis=tuple(range(1, mass.ndim)))
        mu = float(m @ c)
        sd = float(np.sqrt(m @ (c - mu) ** 2))
        sd = max(sd, (wide[1] - wide[0]))
        theta_bounds = (mu - width * sd, mu + width * sd)
    lo, hi = theta_bounds
    if not hi > lo:
        raise ValidationError("theta bounds must be increasing")
    edges, mass = _evaluate(model, np.linspace(lo, hi, resolution + 1), resolution)
    names = ["theta"] + [f"w{i + 1}" for i in range(model.n_t)]
    return GridPosterior(edges, mass, names)


def sgld_sample_chain(
    model: MicroModel,
    cfg: SgldConfig,
    n_steps: int,
    burn_in: int,
    thin: int = 1,
    theta0: float | None = None,
    w0: float = 0.5,
) -> np.ndarray:
    """Run full-batch Langevin steps; return thinned post-burn-in samples.

    Rows are ``(theta, w_1, ..., w_n)``. The backbone and weight steps are the
    engine's own, so this exercises exactly the training update.
    """
    if not n_steps > burn_in >= 0:
        raise ValidationError("need n_steps > burn_in >= 0")
    if thin < 1:
        raise ValidationError("thin must be >= 1")
    tx, ty = model.train()
    mx, my = model.meta()
    train = take(tx, ty, np.arange(model.n_t))
    meta = take(mx, my, np.arange(model.n_m))
    if theta0 is None:
        theta0 = float(np.mean(model.meta_values)) if model.n_m else 0.0
    params = model.params(theta0)
    state = ScalarWeights(np.full(model.n_t, float(w0)), RunningAverage(cfg.s_avg, value=float(w0)))
    rng_theta = rng_stream(cfg.seed, "chain-theta")
    rng_w = rng_stream(cfg.seed, "chain-w")
    kept = (n_steps - burn_in + thin - 1) // thin
    out = np.empty((kept, model.ndim))
    k = 0
    for step in range(n_steps):
        params = sgld_step_theta(params, state, train, meta, cfg, rng_theta, step)
        if model.n_t:
            state = sgld_step_w(params, state, train, cfg, rng_w, step)
        if step >= burn_in and (step - burn_in) % thin == 0:
            out[k, 0] = params.biases[0][0]
            out[k, 1:] = state.w
            k += 1
    if not np.isfinite(out).all():
        raise DivergenceError("chain produced non-finite samples", step=n_steps)
    return out


def marginal_tv(samples, oracle: GridPosterior, axis: int) -> float:
    edges = oracle.edges[axis]
    counts, _ = np.histogram(samples[:, axis], bins=edges)
    emp = counts / len(samples)
    outside = 1.0 - emp.sum()
    return float(0.5 * (np.abs(emp - oracle.marginal(axis)).sum() + outside))


def tv_distance(samples, oracle: GridPosterior) -> dict:
    """Per-axis marginal total variation between samples and the grid posterior.

    Samples falling outside the grid count fully towards the distance.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim == 1:
        samples = samples[:, None]
    if len(samples) < 1000:
        raise ValidationError("need at least 1000 samples for a TV estimate")
    if samples.shape[1] != oracle.mass.ndim:
        raise ValidationError(f"samples have {samples.shape[1]} columns, grid has {oracle.mass.ndim} axes")
    per_axis = {name: marginal_tv(samples, oracle, a) for a, name in enumerate(oracle.names)}
    return {"per_axis": per_axis, "max": max(per_axis.values())}


def default_micro_model(n_meta: int = 100, seed: int = 0) -> MicroModel:
    """The reference micro-model used by the verification report."""
    meta = rng_stream(seed, "micro-meta").standard_normal(n_meta)
    return MicroModel(train_values=(0.3, 1.5), meta_values=tuple(meta), weight_decay=1.0,
                      sigma=0.2, beta=0.5)


def verify_posterior(
    model: MicroModel | None = None,
    etas=(1e-2, 3e-3, 1e-3),
    n_steps: int = 200_000,
    burn_in_frac: float = 0.1,
    thin: int = 10,
    resolution: int = 64,
    seed: int = 0,
    equal_time: bool = True,
) -> dict:
    """Run one chain per step size and report per-axis TV against the grid oracle.

    ``n_steps`` is the length of the chain for the smallest step size. With
    ``equal_time`` the larger step sizes run proportionally fewer steps so
    every chain covers the same simulated time ``eta * n_steps`` (and so has
    a comparable effective sample size); otherwise all chains run ``n_steps``.
    """
    model = model or default_micro_model()
    oracle = grid_posterior(model, resolution)
    eta_min = min(etas)
    runs = []
    for eta in etas:
        steps = int(round(n_steps * eta_min / eta)) if equal_time else n_steps
        burn_in = int(steps * burn_in_frac)
        cfg = model.sgld_config(eta=eta, seed=seed)
        samples = sgld_sample_chain(model, cfg, steps, burn_in, thin)
        tv = tv_distance(samples, oracle)
        runs.append({
            "eta": eta, "n_steps": steps, "burn_in": burn_in, "n_samples": int(len(samples)), "tv_per_axis": tv["per_axis"],
            "tv_max": tv["max"],
            "sample_mean": [float(v) for v in samples.mean(axis=0)],
        })
    return {
        "model": {
            "train_values": list(model.train_values), "n_meta": model.n_m,
            "weight_decay": model.weight_decay, "sigma": model.sigma, "beta": model.beta,
        },
        "grid": {"resolution": resolution,
                 "theta_bounds": [float(oracle.edges[0][0]), float(oracle.edges[0][-1])],
                 "oracle_mean": [oracle.mean(a) for a in range(oracle.mass.ndim)]},
        "n_steps": n_steps, "burn_in_frac": burn_in_frac, "thin": thin, "seed": seed,
        "equal_time": equal_time,
        "runs": runs,
    }


def write_report(report: dict, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
