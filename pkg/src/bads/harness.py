"""Run configuration, presets, single runs and one-axis sweeps.

A run is described by a flat INI-style file with one section per concern::

    [run]       method, seed, eval_every, checkpoint, strict
    [scenario]  generator = <name> plus its keyword arguments, or path = <dir>
    [model]     hidden (comma separated widths), activation
    [sgld]      every SgldConfig field; n_t and n_m, if given, must match the data
    [weights]   init, use_labels, label_mode
    [baseline]  lr

``sigma`` can be given absolutely or as ``sigma_per_nt`` (sigma = k * N_t),
which is how the hyperparameter presets express it; if both are present they
must agree. Dataset sizes always come from the scenario.
"""

from __future__ import annotations

import configparser
import csv
import io
import logging
import os
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import baselines as bl
from .data import GENERATORS, Scenario, load_scenario
from .engine import SgldConfig, full_weights
from .errors import ValidationError
from .weights import LABEL_MODES
from .training import BADS_METHODS, METHODS, TrainLog, evaluate, train_baseline, train_bads

log = logging.getLogger(__name__)

SGLD_KEYS = (
    "eta", "eta_w", "sigma", "sigma_per_nt", "beta", "rho_theta_t", "rho_theta_m", "rho_w_t",
    "weight_decay", "batch_t", "batch_m", "s_avg", "noise_scale", "steps", "n_t", "n_m",
)
# n_t and n_m always come from the scenario; when present in a config they
# are checked against it, so an echoed config replays only on the same data
CHECK_KEYS = ("n_t", "n_m")
INT_KEYS = {"batch_t", "batch_m", "s_avg", "steps", "seed", "eval_every", "n_t", "n_m"}


@dataclass
class RunConfig:
    method: str = "bads-weightnet"
    seed: int = 0
    eval_every: int = 100
    checkpoint: str = "last"
    scenario: dict = field(default_factory=lambda: {"generator": "imbalanced"})
    hidden: tuple = (32,)
    activation: str = "relu"
    sgld: dict = field(default_factory=dict)
    weight_init: float | None = None
    use_labels: bool = False
    label_mode: str = "concat"
    baseline_lr: float = 0.1
    strict: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValidationError(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")
        if self.checkpoint not in ("last", "best-on-validation"):
            raise ValidationError(f"unknown checkpoint policy {self.checkpoint!r}")
        if self.eval_every < 0:
            raise ValidationError("eval_every must be >= 0")
        unknown = set(self.sgld) - set(SGLD_KEYS)
        if unknown:
            raise ValidationError(f"unknown [sgld] keys: {', '.join(sorted(unknown))}")
        if self.strict:
            optional = ("sigma", "sigma_per_nt", "eta_w") + CHECK_KEYS
            missing = [k for k in SGLD_KEYS if k not in self.sgld and k not in optional]
            if "sigma" not in self.sgld and "sigma_per_nt" not in self.sgld:
                missing.append("sigma")
            if missing:
                raise ValidationError(f"strict config is missing [sgld] keys: {', '.join(missing)}")
        if "generator" in self.scenario and self.scenario["generator"] not in GENERATORS:
            raise ValidationError(
                f"unknown generator {self.scenario['generator']!r}; choose from {', '.join(GENERATORS)}"
            )
        if "generator" not in self.scenario and "path" not in self.scenario:
            raise ValidationError("[scenario] needs a generator or a path")
        if self.label_mode not in LABEL_MODES:
            raise ValidationError(
                f"unknown label_mode {self.label_mode!r}; choose from {', '.join(LABEL_MODES)}"
            )
        self.hidden = tuple(int(h) for h in self.hidden)
        if any(h < 1 for h in self.hidden):
            raise ValidationError("hidden widths must be >= 1")

    def replace(self, **changes) -> "RunConfig":
        return replace(self, **changes)

    def build_scenario(self) -> Scenario:
        spec = dict(self.scenario)
        if "path" in spec:
            return load_scenario(spec["path"])
        gen = GENERATORS[spec.pop("generator")]
        spec.setdefault("seed", self.seed)
        try:
            return gen(**spec)
        except TypeError as exc:
            raise ValidationError(f"bad scenario parameters: {exc}") from None

    def sgld_config(self, scenario: Scenario) -> SgldConfig:
        kw = dict(self.sgld)
        n_t, n_m = len(scenario.train), len(scenario.meta)
        for key, actual in (("n_t", n_t), ("n_m", n_m)):
            given = kw.pop(key, None)
            if given is not None and given != actual:
                raise ValidationError(f"config says {key} = {given} but the scenario has {actual}")
        if "sigma_per_nt" in kw:
            sigma = kw.pop("sigma_per_nt") * n_t
            if "sigma" in kw and not np.isclose(kw["sigma"], sigma, rtol=1e-12, atol=0.0):
                raise ValidationError(
                    f"sigma = {kw['sigma']} disagrees with sigma_per_nt * N_t = {sigma}"
                )
            kw["sigma"] = sigma
        kw.setdefault("batch_t", min(100, max(n_t, 1)))
        kw.setdefault("batch_m", min(100, max(n_m, 1)))
        return SgldConfig(n_t=n_t, n_m=n_m, seed=self.seed, **kw)


# presets ------------------------------------------------------------------
#
# Each preset pairs one row of the published hyperparameter table (impact
# constants, sigma as a multiple of N_t, beta, s_avg, noise 1e-5) with the
# synthetic scenario standing in for that experiment. The table's step size
# of 1.0 multiplies the per-model learning rates; the values here are those
# learning rates rescaled for full-batch-sized SGLD on small MLPs.

PRESETS = {
    "mnist": {
        "scenario": {"generator": "imbalanced", "separation": 3.5, "dim": 2},
        "sgld": {"eta": 1e-2, "eta_w": 1e-6, "sigma_per_nt": 5e-5, "beta": 0.005,
                 "rho_theta_t": 0.1, "rho_theta_m": 1.0, "rho_w_t": 1.0, "weight_decay": 1e-3,
                 "batch_t": 100, "batch_m": 10, "s_avg": 10, "noise_scale": 1e-5, "steps": 3000},
        # start above beta so the prior drains the (frequent) majority first
        "weight_init": 0.03,
        "use_labels": False,
    },
    "cifar": {
        "scenario": {"generator": "label_noise", "noise_rate": 0.5, "mode": "symmetric",
                     "n_train": 20000, "dim": 32, "separation": 3.0},
        # eta ~ 1/N_t keeps the effective step (eta/2)*rho*N_t*w bounded at desk scale
        "sgld": {"eta": 5e-5, "eta_w": 7e-7, "sigma_per_nt": 5e-5, "beta": 0.8,
                 "rho_theta_t": 0.1, "rho_theta_m": 1.0, "rho_w_t": 1.0, "weight_decay": 1e-3,
                 "batch_t": 100, "batch_m": 20, "s_avg": 10, "noise_scale": 1e-5, "steps": 6000},
        "hidden": (256,),
        # a per-class head: additive label features cannot spot a label that disagrees with x
        "use_labels": True,
        "label_mode": "interact",
    },
    "webnlg": {
        "scenario": {"generator": "domain_mixture", "domains_train": 8, "n_per_domain": 2500},
        "sgld": {"eta": 1e-4, "eta_w": 1e-6, "sigma_per_nt": 1e-5, "beta": 0.05,
                 "rho_theta_t": 1.0, "rho_theta_m": 1.0, "rho_w_t": 1.0, "weight_decay": 1e-3,
                 "batch_t": 100, "batch_m": 10, "s_avg": 10, "noise_scale": 1e-5, "steps": 16000},
        "use_labels": False,
    },
}


def preset(name: str, **overrides) -> RunConfig:
    if name not in PRESETS:
        raise ValidationError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    p = PRESETS[name]
    cfg = RunConfig(
        method="bads-weightnet", scenario=dict(p["scenario"]), sgld=dict(p["sgld"]),
        weight_init=p.get("weight_init"), use_labels=p["use_labels"],
        label_mode=p.get("label_mode", "concat"), hidden=p.get("hidden", (32,)), strict=True,
    )
    return cfg.replace(**overrides) if overrides else cfg


# INI parsing --------------------------------------------------------------


def _number(key, text):
    text = text.strip()
    if text.lower() in ("none", ""):
        return None
    try:
        return int(text) if key in INT_KEYS else float(text)
    except ValueError:
        raise ValidationError(f"{key}: expected a number, got {text!r}") from None


def _scalar(text):
    text = text.strip()
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def _bool(key, text):
    low = text.strip().lower()
    if low not in ("true", "false", "1", "0", "yes", "no"):
        raise ValidationError(f"{key}: expected true/false, got {text!r}")
    return low in ("true", "1", "yes")


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    """Parse INI text; keys not present keep the values of ``base``."""
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ValidationError(f"cannot parse config: {exc}") from None
    known = {"run", "scenario", "model", "sgld", "weights", "baseline"}
    extra = set(cp.sections()) - known
    if extra:
        raise ValidationError(f"unknown config sections: {', '.join(sorted(extra))}")
    cfg = base or RunConfig()
    kw = {}
    if cp.has_section("run"):
        s = cp["run"]
        for key in s:
            if key == "method" or key == "checkpoint":
                kw[key] = s[key].strip()
            elif key in ("seed", "eval_every"):
                kw[key] = _number(key, s[key])
            elif key == "strict":
                kw[key] = _bool(key, s[key])
            else:
                raise ValidationError(f"unknown [run] key {key!r}")
    if cp.has_section("scenario"):
        items = {k: _scalar(v) for k, v in cp["scenario"].items()}
        if "path" in items:
            items["path"] = cp["scenario"]["path"].strip()
        kw["scenario"] = items
    if cp.has_section("model"):
        s = cp["model"]
        for key in s:
            if key == "hidden":
                kw["hidden"] = tuple(int(v) for v in s[key].split(",") if v.strip())
            elif key == "activation":
                kw["activation"] = s[key].strip()
            else:
                raise ValidationError(f"unknown [model] key {key!r}")
    if cp.has_section("sgld"):
        sg = dict(cfg.sgld)
        for key in cp["sgld"]:
            if key not in SGLD_KEYS:
                raise ValidationError(f"unknown [sgld] key {key!r}")
            sg[key] = _number(key, cp["sgld"][key])
        for key, other in (("sigma", "sigma_per_nt"), ("sigma_per_nt", "sigma")):
            # a file that sets only one form overrides whatever the base had
            if cp.has_option("sgld", key) and not cp.has_option("sgld", other):
                sg.pop(other, None)
        kw["sgld"] = {k: v for k, v in sg.items() if v is not None or k == "eta_w"}
    if cp.has_section("weights"):
        s = cp["weights"]
        for key in s:
            if key == "init":
                kw["weight_init"] = _number(key, s[key])
            elif key == "use_labels":
                kw["use_labels"] = _bool(key, s[key])
            elif key == "label_mode":
                kw["label_mode"] = s[key].strip()
            else:
                raise ValidationError(f"unknown [weights] key {key!r}")
    if cp.has_section("baseline"):
        for key in cp["baseline"]:
            if key != "lr":
                raise ValidationError(f"unknown [baseline] key {key!r}")
            kw["baseline_lr"] = _number(key, cp["baseline"][key])
    return cfg.replace(**kw)


def load_config(path, base: RunConfig | None = None) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_config(fh.read(), base)
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from None


def _ini_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def echo_config(cfg: RunConfig, sgld: SgldConfig | None = None) -> str:
    """Every setting written out explicitly, including resolved SGLD values."""
    cp = configparser.ConfigParser(interpolation=None)
    cp["run"] = {"method": cfg.method, "seed": str(cfg.seed), "eval_every": str(cfg.eval_every),
                 "checkpoint": cfg.checkpoint, "strict": _ini_value(cfg.strict)}
    cp["scenario"] = {k: _ini_value(v) for k, v in sorted(cfg.scenario.items())}
    cp["model"] = {"hidden": ",".join(str(h) for h in cfg.hidden), "activation": cfg.activation}
    if sgld is not None:
        resolved = {f.name: getattr(sgld, f.name) for f in fields(SgldConfig)}
        resolved.pop("seed")
        if "sigma_per_nt" in cfg.sgld:
            resolved["sigma_per_nt"] = cfg.sgld["sigma_per_nt"]
        cp["sgld"] = {k: _ini_value(v) for k, v in resolved.items()}
    else:
        cp["sgld"] = {k: _ini_value(v) for k, v in sorted(cfg.sgld.items())}
    cp["weights"] = {"init": _ini_value(cfg.weight_init), "use_labels": _ini_value(cfg.use_labels),
                     "label_mode": cfg.label_mode}
    cp["baseline"] = {"lr": _ini_value(cfg.baseline_lr)}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue().rstrip("\n") + "\n"


# running ------------------------------------------------------------------


@dataclass
class RunResult:
    params: object
    weight_state: object
    log: TrainLog
    scenario: Scenario
    sgld: SgldConfig
    final_weights: np.ndarray
    paths: dict = field(default_factory=dict)


def _write(path, text):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def implied_weights(kind, scenario, beta, seed) -> np.ndarray:
    """How many times each training row appears in a baseline's effective dataset."""
    from .nn import rng_stream

    rows = bl.effective_rows(kind, scenario, beta, rng_stream(seed, "random-select"))
    out = np.zeros(len(scenario.train))
    for split, i in rows:
        if split == 0:
            out[i] += 1.0
    return out


def weights_csv(scenario: Scenario, weights) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "tag", "weight"])
    for i, (tag, v) in enumerate(zip(scenario.train.tags, weights)):
        w.writerow([i, int(tag), repr(float(v))])
    return buf.getvalue()


def run_experiment(cfg: RunConfig, out_dir=None, scenario: Scenario | None = None) -> RunResult:
    """Train one method on one scenario; write artifacts when ``out_dir`` is given.

    Artifacts: ``log.csv`` (eval metrics), ``batch_weights.csv`` (per-step
    per-tag batch weights), ``weights_final.csv`` (id, tag, final weight),
    ``timing.csv`` (wall-clock), ``config_echo``, ``seed`` and ``params.npz``.
    If training diverges the logs written so far are flushed before the error
    propagates.
    """
    scenario = scenario if scenario is not None else cfg.build_scenario()
    sg = cfg.sgld_config(scenario)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        if not os.access(out_dir, os.W_OK):
            raise ValidationError(f"output directory {out_dir} is not writable")
        _write(os.path.join(out_dir, "config_echo"), echo_config(cfg, sg))
        _write(os.path.join(out_dir, "seed"), f"{cfg.seed}\n")
    if cfg.method not in BADS_METHODS:
        ignored = [k for k in ("sigma", "sigma_per_nt", "eta", "eta_w", "rho_theta_t", "rho_theta_m",
                               "rho_w_t", "noise_scale", "weight_decay") if k in cfg.sgld]
        if ignored:
            log.warning("%s ignores %s", cfg.method, ", ".join(ignored))
    partial = {}
    try:
        if cfg.method in BADS_METHODS:
            params, state, tlog = train_bads(
                scenario, sg, cfg.method, cfg.hidden, cfg.activation, cfg.eval_every,
                cfg.checkpoint, cfg.weight_init, cfg.use_labels, on_log=partial.setdefault,
                label_mode=cfg.label_mode,
            )
            final = full_weights(params, state, scenario.train.x, scenario.train.y)
        else:
            params, tlog = train_baseline(
                cfg.method, scenario, sg, cfg.baseline_lr, cfg.hidden, cfg.activation,
                cfg.eval_every, cfg.checkpoint, on_log=partial.setdefault,
            )
            state = None
            final = implied_weights(cfg.method, scenario, sg.beta, sg.seed)
    except Exception:
        if out_dir is not None and "log" in partial:
            _flush_logs(partial["log"], out_dir)
        raise
    result = RunResult(params, state, tlog, scenario, sg, final)
    if out_dir is not None:
        result.paths = _flush_logs(tlog, out_dir)
        path = os.path.join(out_dir, "weights_final.csv")
        _write(path, weights_csv(scenario, final))
        result.paths["weights_final"] = path
        path = os.path.join(out_dir, "params.npz")
        np.savez(path, **{f"param{k}": a for k, a in enumerate(params.arrays())},
                 activations=np.array(params.activations, dtype=str), loss=np.array(params.loss))
        result.paths["params"] = path
    return result


def _flush_logs(tlog: TrainLog, out_dir) -> dict:
    paths = {}
    for name, text in (("log", tlog.to_csv()), ("batch_weights", tlog.batches_to_csv()),
                       ("timing", tlog.timing_to_csv())):
        paths[name] = os.path.join(out_dir, f"{name}.csv")
        _write(paths[name], text)
    return paths


def load_params(path):
    from .nn import ModelParams

    with np.load(path) as z:
        keys = sorted((k for k in z.files if k.startswith("param")), key=lambda k: int(k[5:]))
        arrays = [z[k] for k in keys]
        acts = tuple(str(a) for a in z["activations"])
        loss = str(z["loss"])
    return ModelParams(arrays[0::2], arrays[1::2], acts, loss)


def evaluate_split(params, scenario: Scenario, split: str = "test"):
    if split not in ("train", "meta", "test"):
        raise ValidationError(f"unknown split {split!r}")
    s = getattr(scenario, split)
    if len(s) == 0:
        raise ValidationError(f"{split} split is empty")
    return evaluate(params, s.x, s.y)


# sweeps -------------------------------------------------------------------


def sweep_axes() -> list:
    axes = ["run.method", "run.seed", "run.eval_every", "run.checkpoint", "model.activation",
            "weights.init", "weights.use_labels", "weights.label_mode", "baseline.lr"]
    axes += [f"sgld.{k}" for k in SGLD_KEYS]
    return axes


def _resolve_axis(axis: str) -> str:
    valid = sweep_axes()
    if axis in valid:
        return axis
    matches = [a for a in valid if a.split(".", 1)[1] == axis]
    if len(matches) == 1:
        return matches[0]
    if axis.startswith("scenario.") and len(axis) > len("scenario."):
        return axis
    raise ValidationError(f"unknown sweep axis {axis!r}; valid axes: {', '.join(valid)}, scenario.<param>")


def _apply(cfg: RunConfig, axis: str, value) -> RunConfig:
    section, key = axis.split(".", 1)
    if section == "sgld":
        sg = dict(cfg.sgld)
        if key == "sigma":
            sg.pop("sigma_per_nt", None)
        if key == "sigma_per_nt":
            sg.pop("sigma", None)
        sg[key] = value
        return cfg.replace(sgld=sg)
    if section == "scenario":
        return cfg.replace(scenario={**cfg.scenario, key: value})
    field_name = {"init": "weight_init", "lr": "baseline_lr"}.get(key, key)
    return cfg.replace(**{field_name: value})


def derived_seed(base: int, replicate: int) -> int:
    """Seed for replicate ``r`` of a sweep; every swept value shares it, so
    comparisons across values are paired."""
    return int(np.random.SeedSequence([int(base), int(replicate)]).generate_state(1)[0] % (2**31))


SUMMARY_COLUMNS = ["value", "replicate", "seed", "test_acc", "test_loss", "meta_loss", "sum_w",
                   "weight_separation"]


def sweep(template: RunConfig, axis: str, values, replicates: int = 1, out_dir=None,
          separation=None) -> tuple:
    """One run per (value, replicate); returns ``(rows, summary_csv_text)``.

    ``separation`` optionally names two tag names ``(good, bad)``; the summary
    then reports the mean final weight of ``good`` minus that of ``bad``.
    """
    values = list(values)
    if not values:
        raise ValidationError("sweep needs at least one value")
    if replicates < 1:
        raise ValidationError("replicates must be >= 1")
    axis = _resolve_axis(axis)
    rows = []
    for r in range(replicates):
        seed = derived_seed(template.seed, r)
        for v in values:
            cfg = _apply(template.replace(seed=seed), axis, v)
            sub = None if out_dir is None else os.path.join(out_dir, f"{axis}={v}", f"rep{r}")
            res = run_experiment(cfg, sub)
            last = res.log.rows[-1]
            sep = None
            if separation is not None:
                sep = tag_separation(res.scenario, res.final_weights, *separation)
            rows.append({"value": v, "replicate": r, "seed": seed, "test_acc": last["test_acc"],
                         "test_loss": last["test_loss"], "meta_loss": last["meta_loss"],
                         "sum_w": float(np.sum(res.final_weights)), "weight_separation": sep})
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["axis"] + SUMMARY_COLUMNS)
    for row in rows:
        w.writerow([axis] + ["" if row[c] is None else (repr(row[c]) if isinstance(row[c], float) else row[c])
                             for c in SUMMARY_COLUMNS])
    text = buf.getvalue()
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        _write(os.path.join(out_dir, "summary.csv"), text)
    return rows, text


def tag_separation(scenario: Scenario, weights, good: str, bad: str) -> float:
    legend = {v: k for k, v in scenario.tag_legend.items()}
    for name in (good, bad):
        if name not in legend:
            raise ValidationError(f"unknown tag {name!r}; tags are {', '.join(legend)}")
    tags = scenario.train.tags
    return float(np.mean(weights[tags == legend[good]]) - np.mean(weights[tags == legend[bad]]))
