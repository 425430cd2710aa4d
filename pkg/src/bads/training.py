"""Training loops for the Langevin selector and the baselines, plus logging."""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import baselines as bl
from .engine import (
    EpochSampler,
    SgldConfig,
    estimated_total,
    full_weights,
    sgld_step_theta,
    sgld_step_w,
    take,
)
from .errors import DivergenceError, ValidationError
from .nn import ModelParams, forward, init_mlp, per_example_losses, predict, rng_stream
from .weights import ScalarWeights, WeightNet

BADS_METHODS = ("bads-scalar", "bads-weightnet")
BASELINE_METHODS = tuple(k.value for k in bl.BaselineKind)
METHODS = BADS_METHODS + BASELINE_METHODS

BASE_COLUMNS = [
    "step", "train_loss", "train_loss_weighted", "meta_loss", "test_acc", "test_loss",
    "w_bar", "sum_w", "sum_w_est",
]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


@dataclass
class TrainLog:
    """Eval-cadence metrics plus per-step batch weights by tag.

    ``rows`` hold the eval metrics (one dict per eval step); ``batch_rows``
    hold the mean post-update weight of each tag within every training
    minibatch (``None`` when a tag is absent from the batch). Wall-clock is
    kept apart in ``timing`` so the metric files stay reproducible.
    """

    tag_names: list
    rows: list = field(default_factory=list)
    batch_rows: list = field(default_factory=list)
    timing: list = field(default_factory=list)

    @property
    def weight_columns(self) -> list:
        return [f"weight_{name}" for name in self.tag_names]

    @property
    def columns(self) -> list:
        return BASE_COLUMNS + self.weight_columns

    def column(self, name) -> np.ndarray:
        return np.array([np.nan if r.get(name) is None else r[name] for r in self.rows], dtype=float)

    def batch_column(self, name) -> np.ndarray:
        return np.array(
            [np.nan if r.get(name) is None else r[name] for r in self.batch_rows], dtype=float
        )

    def _csv(self, columns, rows) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in columns])
        return buf.getvalue()

    def to_csv(self) -> str:
        return self._csv(self.columns, self.rows)

    def batches_to_csv(self) -> str:
        return self._csv(["step"] + self.weight_columns, self.batch_rows)

    def timing_to_csv(self) -> str:
        return self._csv(["step", "wall_clock"], self.timing)

    @classmethod
    def from_csv(cls, text: str, batch_text: str | None = None) -> "TrainLog":
        rows = list(csv.DictReader(io.StringIO(text)))
        header = next(csv.reader(io.StringIO(text)))
        names = [c[len("weight_"):] for c in header if c.startswith("weight_")]

        def parse(r):
            out = {}
            for k, v in r.items():
                out[k] = None if v == "" else (int(v) if k == "step" else float(v))
            return out

        log = cls(names, [parse(r) for r in rows])
        if batch_text:
            log.batch_rows = [parse(r) for r in csv.DictReader(io.StringIO(batch_text))]
        return log


def evaluate(params: ModelParams, x, y):
    """Accuracy (argmax / sign of logit) and mean loss over a split."""
    y = np.asarray(y)
    if len(y) == 0:
        raise ValidationError("cannot evaluate on an empty split")
    trace = forward(params, x)
    losses = per_example_losses(trace, y)
    acc = float(np.mean(predict(params, x) == y))
    return acc, float(losses.mean())


def init_backbone(scenario, hidden, activation, seed) -> ModelParams:
    out = 1 if scenario.loss == "logistic" else scenario.num_classes
    sizes = [scenario.dim, *hidden, out]
    return init_mlp(sizes, rng_stream(seed, "init"), activation, scenario.loss)


def init_weight_state(method, params, scenario, cfg: SgldConfig, init_value, use_labels, seed,
                      label_mode="concat"):
    if method == "bads-scalar":
        return ScalarWeights.constant(len(scenario.train), init_value, cfg.s_avg)
    embed_dim = params.weights[-1].shape[0]
    return WeightNet.init(
        embed_dim, rng_stream(seed, "weight-net-init"), value=init_value, window=cfg.s_avg,
        use_labels=use_labels, num_classes=scenario.num_classes, label_mode=label_mode,
    )


def _tag_means(tags, weights, tag_ids):
    # one pass over the batch; tag ids are small non-negative ints
    size = max(tag_ids) + 1 if tag_ids else 0
    counts = np.bincount(tags, minlength=size)
    sums = np.bincount(tags, weights=weights, minlength=size)
    return [float(sums[t] / counts[t]) if counts[t] else None for t in tag_ids]


class _Recorder:
    def __init__(self, scenario, log: TrainLog, tag_ids):
        self.scenario, self.log, self.tag_ids = scenario, log, tag_ids
        self.t0 = time.perf_counter()

    def eval_row(self, step, params, state=None, last_est=None):
        scn = self.scenario
        tr = forward(params, scn.train.x)
        losses = per_example_losses(tr, scn.train.y)
        if not np.isfinite(losses).all():
            raise DivergenceError(f"non-finite training loss at step {step}", step=step, term="loss")
        meta_loss = evaluate(params, scn.meta.x, scn.meta.y)[1] if len(scn.meta) else None
        acc, test_loss = evaluate(params, scn.test.x, scn.test.y)
        row = {"step": step, "train_loss": float(losses.mean()), "meta_loss": meta_loss,
               "test_acc": acc, "test_loss": test_loss}
        if state is not None:
            w = full_weights(params, state, scn.train.x, scn.train.y)
            row.update(
                train_loss_weighted=float(np.mean(w * losses)),
                w_bar=state.running.value,
                sum_w=float(w.sum()),
                sum_w_est=last_est,
            )
            for col, v in zip(self.log.weight_columns, _tag_means(scn.train.tags, w, self.tag_ids)):
                row[col] = v
        self.log.rows.append(row)
        self.log.timing.append({"step": step, "wall_clock": time.perf_counter() - self.t0})
        return row

    def batch_row(self, step, idx, weights):
        row = {"step": step}
        tags = self.scenario.train.tags[idx]
        for col, v in zip(self.log.weight_columns, _tag_means(tags, weights, self.tag_ids)):
            row[col] = v
        self.log.batch_rows.append(row)


class Checkpointer:
    """Keeps the last iterate, or the one with the lowest meta loss."""

    def __init__(self, policy):
        if policy not in ("last", "best-on-validation"):
            raise ValidationError(f"unknown checkpoint policy {policy!r}")
        self.policy = policy
        self.best = None
        self.best_loss = math.inf

    def offer(self, params, state, meta_loss):
        if self.policy == "best-on-validation" and meta_loss is not None and meta_loss < self.best_loss:
            self.best_loss = meta_loss
            self.best = (params.copy(), state.copy() if state is not None else None)

    def choose(self, params, state):
        if self.policy == "last" or self.best is None:
            return params, state
        return self.best


def _eval_due(step, steps, every):
    return step == steps or (every and step % every == 0)


def train_bads(
    scenario,
    cfg: SgldConfig,
    method="bads-weightnet",
    hidden=(32,),
    activation="relu",
    eval_every=100,
    checkpoint="last",
    weight_init=None,
    use_labels=False,
    log_batches=True,
    on_log=None,
    label_mode="concat",
):
    """Alternate one backbone step and one weight step per iteration.

    Returns ``(params, weight_state, log)`` for the checkpoint selected by
    ``checkpoint``. ``on_log("log", log)`` is called once the log exists so a
    caller can still reach partial results if training diverges.
    """
    if method not in BADS_METHODS:
        raise ValidationError(f"not a selector method: {method!r}")
    if cfg.n_t != len(scenario.train) or cfg.n_m != len(scenario.meta):
        raise ValidationError("SgldConfig dataset sizes do not match the scenario")
    tag_ids = sorted(scenario.tag_legend)
    log = TrainLog([scenario.tag_legend[t] for t in tag_ids])
    if on_log is not None:
        on_log("log", log)
    rec = _Recorder(scenario, log, tag_ids)
    params = init_backbone(scenario, hidden, activation, cfg.seed)
    init_value = cfg.beta if weight_init is None else weight_init
    if method == "bads-weightnet":
        init_value = min(max(init_value, 1e-6), 1 - 1e-6)
    state = init_weight_state(method, params, scenario, cfg, init_value, use_labels, cfg.seed, label_mode)
    ckpt = Checkpointer(checkpoint)
    samp_t = EpochSampler(cfg.n_t, cfg.batch_t, rng_stream(cfg.seed, "batches-train"))
    samp_m = EpochSampler(cfg.n_m, cfg.batch_m, rng_stream(cfg.seed, "batches-meta"))
    noise_theta = rng_stream(cfg.seed, "noise-theta")
    noise_w = rng_stream(cfg.seed, "noise-w")
    if cfg.steps == 0:
        row = rec.eval_row(0, params, state)
        ckpt.offer(params, state, row["meta_loss"])
    last_est = None
    for step in range(1, cfg.steps + 1):
        tb = take(scenario.train.x, scenario.train.y, samp_t.next())
        mb = take(scenario.meta.x, scenario.meta.y, samp_m.next())
        w_bar = state.running.value
        params = sgld_step_theta(params, state, tb, mb, cfg, noise_theta, step)
        info = {}
        state = sgld_step_w(params, state, tb, cfg, noise_w, step, info=info)
        last_est = estimated_total(info["batch_weights"], w_bar, cfg.n_t)
        if log_batches:
            rec.batch_row(step, tb.idx, info["batch_weights"])
        if _eval_due(step, cfg.steps, eval_every):
            row = rec.eval_row(step, params, state, last_est)
            ckpt.offer(params, state, row["meta_loss"])
    params, state = ckpt.choose(params, state)
    return params, state, log


def train_baseline(
    kind,
    scenario,
    cfg: SgldConfig,
    lr=0.1,
    hidden=(32,),
    activation="relu",
    eval_every=100,
    checkpoint="last",
    on_log=None,
):
    """Plain SGD over a baseline's effective dataset; same log schema as the selector."""
    kind = bl.BaselineKind(kind)
    tag_ids = sorted(scenario.tag_legend)
    log = TrainLog([scenario.tag_legend[t] for t in tag_ids])
    if on_log is not None:
        on_log("log", log)
    rec = _Recorder(scenario, log, tag_ids)
    params = init_backbone(scenario, hidden, activation, cfg.seed)
    stream = bl.build_baseline_stream(
        kind, scenario, cfg.batch_t, cfg.beta,
        rng_stream(cfg.seed, "batches-baseline"), rng_stream(cfg.seed, "random-select"),
    )
    ckpt = Checkpointer(checkpoint)
    if cfg.steps == 0:
        row = rec.eval_row(0, params)
        ckpt.offer(params, None, row["meta_loss"])
    for step in range(1, cfg.steps + 1):
        params, _ = bl.sgd_step(params, stream.next(), lr, step)
        if _eval_due(step, cfg.steps, eval_every):
            row = rec.eval_row(step, params)
            ckpt.offer(params, None, row["meta_loss"])
    params, _ = ckpt.choose(params, None)
    return params, log
