"""Independent oracles shared by the test modules."""

import numpy as np


def central_diff(f, x, h=1e-5):
    """Central finite differences of scalar ``f`` at every entry of array ``x`` (in place, restored)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b) / np.maximum(1e-8, np.abs(a) + np.abs(b))))


def norm_rel_err(a, b):
    a, b = np.ravel(np.asarray(a, float)), np.ravel(np.asarray(b, float))
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


# engine gradient oracle ----------------------------------------------------

from bads.engine import (  # noqa: E402
    SgldConfig,
    assemble_log_posterior,
    log_prior_theta,
    log_prior_w,
    take,
    theta_drift,
    w_drift,
)
from bads.nn import ACTIVATIONS, forward, init_mlp, per_example_losses  # noqa: E402
from bads.weights import (  # noqa: E402
    LABEL_MODES,
    RunningAverage,
    ScalarWeights,
    WeightNet,
    WeightQuery,
    weights_for_batch,
)

VARIANTS = ("scalar", "net") + tuple(f"net-{m}" for m in LABEL_MODES)


def random_problem(seed, variant=None, loss=None, activation=None, full_batch=False):
    """A small backbone, dataset, weight state and config for gradient checks."""
    rng = np.random.default_rng(seed)
    variant = variant or VARIANTS[seed % len(VARIANTS)]
    loss = loss or ("softmax", "logistic")[seed % 2]
    activation = activation or ACTIVATIONS[seed % len(ACTIVATIONS)]
    k = 2 if loss == "logistic" else int(rng.integers(2, 5))
    d = int(rng.integers(2, 5))
    params = init_mlp([d, int(rng.integers(2, 5)), 1 if loss == "logistic" else k], rng, activation, loss)
    params = params.map(lambda a: a + 0.1 * rng.standard_normal(a.shape))
    n_t, n_m = int(rng.integers(4, 9)), int(rng.integers(2, 6))
    tx, ty = rng.standard_normal((n_t, d)), rng.integers(0, k, n_t)
    mx, my = rng.standard_normal((n_m, d)), rng.integers(0, k, n_m)
    bt = n_t if full_batch else int(rng.integers(1, n_t + 1))
    bm = n_m if full_batch else int(rng.integers(1, n_m + 1))
    cfg = SgldConfig(
        eta=1e-3, sigma=float(rng.uniform(0.5, 3.0)), beta=float(rng.uniform(0.05, 0.95)),
        rho_theta_t=1.0 if full_batch else float(rng.uniform(0.1, 2.0)),
        rho_theta_m=1.0 if full_batch else float(rng.uniform(0.1, 2.0)),
        rho_w_t=1.0 if full_batch else float(rng.uniform(0.1, 2.0)),
        weight_decay=float(rng.uniform(0.0, 1.0)), n_t=n_t, n_m=n_m, batch_t=bt, batch_m=bm,
        noise_scale=0.0,
    )
    running = RunningAverage(10, value=float(rng.uniform(0.0, 1.0)))
    if variant == "scalar":
        state = ScalarWeights(rng.uniform(0.05, 0.95, n_t), running)
    else:
        mode = variant.split("-")[1] if "-" in variant else "concat"
        state = WeightNet.init(
            params.weights[-1].shape[0], rng, value=float(rng.uniform(0.2, 0.8)), use_labels="-" in variant,
            num_classes=k, scale=0.5, label_mode=mode,
        )
        state.running = running
    train = take(tx, ty, rng.choice(n_t, bt, replace=False))
    meta = take(mx, my, rng.choice(n_m, bm, replace=False))
    return params, state, cfg, (tx, ty), (mx, my), train, meta


def _batch_weights(params, state, batch):
    trace = forward(params, batch.x)
    if isinstance(state, WeightNet):
        return weights_for_batch(state, WeightQuery(batch.idx, trace.embedding, batch.y))
    return weights_for_batch(state, WeightQuery(batch.idx))


def theta_objective(params, state, train, meta, cfg, w):
    """The minibatch theta objective whose gradient is the drift, weights held at ``w``."""
    lt = per_example_losses(forward(params, train.x), train.y)
    lm = per_example_losses(forward(params, meta.x), meta.y)
    return (
        log_prior_theta(params, cfg.weight_decay)
        - cfg.rho_theta_t * cfg.n_t * float(np.mean(w * lt))
        - cfg.rho_theta_m * cfg.n_m * float(np.mean(lm))
    )


def w_objective(params, w, train, cfg, w_bar):
    """The minibatch weight objective with the running mean held constant."""
    lt = per_example_losses(forward(params, train.x), train.y)
    total = w.sum() + (cfg.n_t - len(w)) * w_bar
    return float(log_prior_w(total, cfg)) - cfg.rho_w_t * cfg.n_t * float(w @ lt) / len(w)


def gradient_errors(seed, h=1e-6):
    """Relative errors of every engine drift against central differences."""
    params, state, cfg, tr, me, train, meta = random_problem(seed)
    out = {}
    w = _batch_weights(params, state, train)
    drift = theta_drift(params, state, train, meta, cfg)
    probe = params.copy()
    fd = [central_diff(lambda: theta_objective(probe, state, train, meta, cfg, w), a, h) for a in probe.arrays()]
    out["theta"] = norm_rel_err(drift.flat(), np.concatenate([g.ravel() for g in fd]))
    wd, _ = w_drift(params, state, train, cfg)
    w_bar = state.running.value
    if isinstance(state, ScalarWeights):
        wv = w.copy()
        fd_w = central_diff(lambda: w_objective(params, wv, train, cfg, w_bar), wv, h)
        out["w"] = norm_rel_err(wd, fd_w)
    else:
        probe_state = state.copy()

        def f():
            return w_objective(params, _batch_weights(params, probe_state, train), train, cfg, w_bar)

        fd = [central_diff(f, a, h) for a in probe_state.phi.arrays()]
        out["phi"] = norm_rel_err(wd.flat(), np.concatenate([g.ravel() for g in fd]))
    return out


def posterior_errors(seed, h=1e-6):
    """Full-batch drifts against finite differences of the assembled log-posterior."""
    params, _, cfg, tr, me, _, _ = random_problem(seed, variant="scalar", full_batch=True)
    rng = np.random.default_rng(seed + 1)
    w = rng.uniform(0.05, 0.95, len(tr[0]))
    state = ScalarWeights(w.copy(), RunningAverage(10, value=0.5))
    train, meta = take(*tr, np.arange(len(tr[0]))), take(*me, np.arange(len(me[0])))
    probe = params.copy()
    fd = [central_diff(lambda: assemble_log_posterior(probe, w, tr, me, cfg), a, h) for a in probe.arrays()]
    e_theta = norm_rel_err(theta_drift(params, state, train, meta, cfg).flat(),
                           np.concatenate([g.ravel() for g in fd]))
    wv = w.copy()
    fd_w = central_diff(lambda: assemble_log_posterior(params, wv, tr, me, cfg), wv, h)
    e_w = norm_rel_err(w_drift(params, state, train, cfg)[0], fd_w)
    return {"posterior_theta": e_theta, "posterior_w": e_w}


# acceptance report -----------------------------------------------------------

ACCEPTANCE = []


def report(n, ok, seconds, detail):
    """Record one acceptance line; conftest prints them at the end of the session."""
    line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  ({seconds:.1f} s)  {detail}"
    ACCEPTANCE.append(line)
    print(line)
    return line
