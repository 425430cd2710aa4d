"""Command line entry point: ``bads <subcommand> [options]``.

Exit status is 0 on success, 2 on a validation error (bad config, bad
arguments) and 3 when training or sampling diverges numerically.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import harness, plots, posterior
from .data import save_scenario
from .errors import DivergenceError, ValidationError
from .training import TrainLog

EXIT_OK, EXIT_INVALID, EXIT_DIVERGED = 0, 2, 3


def _kv(text):
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    k, v = text.split("=", 1)
    return k.strip(), v.strip()


def _add_common(p, out_required=True):
    p.add_argument("--config", metavar="PATH", help="INI run configuration")
    p.add_argument("--preset", choices=sorted(harness.PRESETS),
                   help="hyperparameter preset with its matching synthetic scenario")
    p.add_argument("--seed", type=int, help="override the run seed")
    p.add_argument("--out", metavar="DIR", required=out_required, help="output directory")
    p.add_argument("--set", dest="overrides", type=_kv, action="append", default=[],
                   metavar="SECTION.KEY=VALUE", help="override one setting (repeatable)")


def _run_config(args) -> harness.RunConfig:
    cfg = harness.preset(args.preset) if args.preset else None
    if args.config:
        cfg = harness.load_config(args.config, cfg)
    cfg = cfg or harness.RunConfig()
    for key, value in args.overrides:
        axis = harness._resolve_axis(key)
        cfg = harness._apply(cfg, axis, _parse_value(axis, value))
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def _parse_value(axis, text):
    key = axis.split(".", 1)[1]
    if key in ("method", "checkpoint", "activation", "generator", "mode", "path", "label_mode"):
        return text
    if key in ("use_labels",):
        return harness._bool(key, text)
    if axis.startswith("scenario."):
        return harness._scalar(text)
    return harness._number(key, text)


def cmd_gen_data(args):
    cfg = _run_config(args)
    scn = cfg.build_scenario()
    paths = save_scenario(scn, args.out)
    print(f"wrote {scn.name} scenario ({len(scn.train)} train, {len(scn.meta)} meta, "
          f"{len(scn.test)} test) to {args.out}")
    return paths


def cmd_train(args):
    cfg = _run_config(args)
    res = harness.run_experiment(cfg, args.out)
    last = res.log.rows[-1]
    print(f"{cfg.method}: test_acc={last['test_acc']:.4f} test_loss={last['test_loss']:.4f} "
          f"-> {args.out}")
    if args.plot:
        plots.export_plots(res.log, args.out)


def cmd_evaluate(args):
    run_dir = args.run
    cfg_path = args.config or os.path.join(run_dir, "config_echo")
    cfg = harness.load_config(cfg_path)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    params = harness.load_params(os.path.join(run_dir, "params.npz"))
    scn = cfg.build_scenario()
    acc, loss = harness.evaluate_split(params, scn, args.split)
    report = {"split": args.split, "accuracy": acc, "loss": loss}
    print(json.dumps(report, sort_keys=True))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "eval.json"), "w", encoding="utf-8", newline="\n") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
            fh.write("\n")


def cmd_sweep(args):
    cfg = _run_config(args)
    axis = harness._resolve_axis(args.axis)
    values = [_parse_value(axis, v) for v in args.values.split(",") if v.strip()]
    sep = tuple(args.separation.split(",")) if args.separation else None
    if sep is not None and len(sep) != 2:
        raise ValidationError("--separation takes two tag names, GOOD,BAD")
    _, text = harness.sweep(cfg, axis, values, args.replicates, args.out, sep)
    sys.stdout.write(text)


def cmd_plot(args):
    src = args.log
    with open(os.path.join(src, "log.csv"), encoding="utf-8") as fh:
        text = fh.read()
    batch_path = os.path.join(src, "batch_weights.csv")
    batch_text = None
    if os.path.exists(batch_path):
        with open(batch_path, encoding="utf-8") as fh:
            batch_text = fh.read()
    log = TrainLog.from_csv(text, batch_text)
    for path in plots.export_plots(log, args.out):
        print(path)


def cmd_verify_posterior(args):
    etas = tuple(float(v) for v in args.etas.split(","))
    seed = 0 if args.seed is None else args.seed
    model = posterior.default_micro_model(n_meta=args.n_meta, seed=seed)
    report = posterior.verify_posterior(model, etas=etas, n_steps=args.steps, thin=args.thin,
                                        resolution=args.resolution, seed=seed)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "posterior_report.json")
    posterior.write_report(report, path)
    for run in report["runs"]:
        print(f"eta={run['eta']:g} steps={run['n_steps']} tv_max={run['tv_max']:.4f}")
    print(path)


def build_parser():
    ap = argparse.ArgumentParser(prog="bads", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic scenario as a CSV bundle")
    _add_common(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one method and write logs and weights")
    _add_common(p)
    p.add_argument("--plot", action="store_true", help="also write SVG charts")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate saved parameters on a split")
    p.add_argument("--run", metavar="DIR", required=True, help="directory written by train")
    p.add_argument("--config", metavar="PATH", help="config (default: RUN/config_echo)")
    p.add_argument("--seed", type=int)
    p.add_argument("--split", default="test", choices=("train", "meta", "test"))
    p.add_argument("--out", metavar="DIR", help="also write eval.json here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="one run per value of one setting; summary CSV")
    _add_common(p)
    p.add_argument("--axis", required=True, help="setting to vary, e.g. sgld.beta")
    p.add_argument("--values", required=True, help="comma separated values")
    p.add_argument("--replicates", type=int, default=1)
    p.add_argument("--separation", metavar="GOOD,BAD",
                   help="report mean weight of tag GOOD minus tag BAD")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("plot", help="SVG charts from a run directory")
    p.add_argument("--log", metavar="DIR", required=True, help="directory holding log.csv")
    p.add_argument("--out", metavar="DIR", required=True)
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("verify-posterior", help="compare SGLD chains with the grid posterior")
    p.add_argument("--out", metavar="DIR", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--steps", type=int, default=200_000, help="chain length at the smallest eta")
    p.add_argument("--etas", default="1e-2,3e-3,1e-3")
    p.add_argument("--thin", type=int, default=10)
    p.add_argument("--resolution", type=int, default=64)
    p.add_argument("--n-meta", type=int, default=100)
    p.set_defaults(func=cmd_verify_posterior)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        # divergence is detected and reported below; numpy's own warnings
        # about the overflow would only duplicate it
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
