import logging
import os

import numpy as np
import pytest

from bads.data import gen_imbalanced, gen_label_noise, save_scenario
from bads.errors import DivergenceError, ValidationError
from bads.harness import (
    PRESETS,
    RunConfig,
    derived_seed,
    echo_config,
    evaluate_split,
    load_params,
    parse_config,
    preset,
    run_experiment,
    sweep,
    sweep_axes,
    tag_separation,
)
from bads.nn import ModelParams
from bads.training import evaluate, init_backbone
from bads.weights import WeightQuery, score_new_examples
from bads.nn import forward

SMALL = {"generator": "imbalanced", "n_major": 60, "n_minor": 6, "n_meta_per_class": 3, "n_test": 40}


def _small(method="bads-weightnet", steps=30, **kw):
    sg = {"eta": 1e-2, "eta_w": 1e-3, "sigma": 1.0, "beta": 0.1, "batch_t": 10, "batch_m": 4,
          "noise_scale": 1e-5, "steps": steps, "weight_decay": 1e-3}
    return RunConfig(method=method, scenario=dict(SMALL), sgld=sg, hidden=(8,), eval_every=10, **kw)


# config -------------------------------------------------------------------


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_presets_resolve(name):
    cfg = preset(name)
    assert cfg.strict
    scn = cfg.build_scenario()
    sg = cfg.sgld_config(scn)
    assert sg.sigma == pytest.approx(PRESETS[name]["sgld"]["sigma_per_nt"] * len(scn.train))
    assert sg.s_avg == 10 and sg.noise_scale == 1e-5


def test_preset_rows_follow_table():
    # impact constants and beta per scenario row
    assert PRESETS["mnist"]["sgld"]["beta"] == 0.005 and PRESETS["mnist"]["sgld"]["sigma_per_nt"] == 5e-5
    assert PRESETS["cifar"]["sgld"]["beta"] == 0.8 and PRESETS["cifar"]["sgld"]["rho_theta_t"] == 0.1
    assert PRESETS["webnlg"]["sgld"]["beta"] == 0.05 and PRESETS["webnlg"]["sgld"]["sigma_per_nt"] == 1e-5
    assert PRESETS["cifar"]["use_labels"] and not PRESETS["mnist"]["use_labels"]


def test_unknown_preset():
    with pytest.raises(ValidationError, match="mnist"):
        preset("imagenet")


def test_echo_roundtrip_with_label_mode():
    cfg = preset("cifar", seed=4)
    back = parse_config(echo_config(cfg))
    assert back == cfg
    assert back.label_mode == "interact"


def test_resolved_echo_replays(tmp_path):
    cfg = _small()
    scn = cfg.build_scenario()
    text = echo_config(cfg, cfg.sgld_config(scn))
    back = parse_config(text)
    assert back.sgld_config(scn) == cfg.sgld_config(scn)


@pytest.mark.parametrize("text,match", [
    ("[bogus]\nx = 1\n", "unknown config sections"),
    ("[run]\ncolour = red\n", "unknown \\[run\\] key"),
    ("[sgld]\neta = fast\n", "expected a number"),
    ("[sgld]\nfoo = 1\n", "unknown \\[sgld\\] key"),
    ("[run]\nmethod = magic\n", "unknown method"),
    ("[weights]\nlabel_mode = outer\n", "label_mode"),
    ("[scenario]\ngenerator = spiral\n", "unknown generator"),
    ("[run]\nstrict = maybe\n", "true/false"),
    ("not an ini", "cannot parse"),
])
def test_bad_configs(text, match):
    with pytest.raises(ValidationError, match=match):
        parse_config(text)


def test_strict_requires_every_field():
    with pytest.raises(ValidationError, match="missing"):
        RunConfig(strict=True, sgld={"eta": 1.0})


def test_sigma_forms_must_agree():
    cfg = _small()
    scn = cfg.build_scenario()
    ok = cfg.replace(sgld={**cfg.sgld, "sigma": None} | {"sigma_per_nt": 0.5})
    ok.sgld.pop("sigma")
    assert ok.sgld_config(scn).sigma == 0.5 * len(scn.train)
    bad = cfg.replace(sgld={**cfg.sgld, "sigma_per_nt": 0.5})
    with pytest.raises(ValidationError, match="disagrees"):
        bad.sgld_config(scn)


def test_dataset_size_checked():
    cfg = _small()
    cfg = cfg.replace(sgld={**cfg.sgld, "n_t": 5})
    with pytest.raises(ValidationError, match="n_t"):
        cfg.sgld_config(cfg.build_scenario())


def test_bad_scenario_parameters():
    with pytest.raises(ValidationError):
        RunConfig(scenario={"generator": "imbalanced", "colour": 1}).build_scenario()


def test_scenario_from_path(tmp_path):
    scn = gen_label_noise(1, n_train=40, num_classes=3, n_test=20)
    save_scenario(scn, tmp_path)
    cfg = RunConfig(scenario={"path": str(tmp_path)})
    assert np.array_equal(cfg.build_scenario().train.x, scn.train.x)


# runs ---------------------------------------------------------------------


def test_zero_steps_writes_artifacts(tmp_path):
    cfg = _small(steps=0)
    res = run_experiment(cfg, tmp_path)
    for name in ("log.csv", "batch_weights.csv", "weights_final.csv", "timing.csv", "config_echo", "seed",
                 "params.npz"):
        assert (tmp_path / name).exists(), name
    init = init_backbone(res.scenario, (8,), "relu", 0)
    assert all(np.array_equal(a, b) for a, b in zip(res.params.arrays(), init.arrays()))
    assert (tmp_path / "seed").read_text() == "0\n"


def test_weights_final_layout(tmp_path):
    res = run_experiment(_small(), tmp_path)
    lines = (tmp_path / "weights_final.csv").read_text().splitlines()
    assert lines[0] == "id,tag,weight"
    assert len(lines) == len(res.scenario.train) + 1
    w = np.array([float(r.split(",")[2]) for r in lines[1:]])
    assert np.all((w >= 0) & (w <= 1))


def test_same_config_same_bytes(tmp_path):
    for sub in ("a", "b"):
        run_experiment(_small(), tmp_path / sub)
    for name in ("log.csv", "batch_weights.csv", "weights_final.csv", "config_echo"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_log_schema_shared_across_methods(tmp_path, caplog):
    caplog.set_level(logging.ERROR)
    headers = set()
    for m in ("bads-scalar", "bads-weightnet", "mixing", "meta_only", "random_select", "duplicate_meta"):
        cfg = _small(method=m)
        run_experiment(cfg, tmp_path / m)
        headers.add((tmp_path / m / "log.csv").read_text().splitlines()[0])
    assert len(headers) == 1


def test_baseline_warns_about_ignored_keys(caplog):
    with caplog.at_level(logging.WARNING):
        run_experiment(_small(method="mixing"))
    assert "ignores" in caplog.text and "sigma" in caplog.text


def test_log_rows_are_monotone_and_weights_in_range():
    res = run_experiment(_small(steps=50))
    steps = res.log.column("step")
    assert np.all(np.diff(steps) > 0)
    for c in res.log.weight_columns:
        v = res.log.column(c)
        assert np.all((v >= 0) & (v <= 1))


def test_divergence_flushes_partial_logs(tmp_path):
    cfg = _small(steps=200)
    cfg = cfg.replace(sgld={**cfg.sgld, "eta": 1e6})
    with pytest.raises(DivergenceError), np.errstate(all="ignore"):
        run_experiment(cfg, tmp_path)
    assert (tmp_path / "log.csv").exists()
    assert (tmp_path / "config_echo").exists()


def test_best_on_validation_checkpoint():
    res = run_experiment(_small(steps=60, checkpoint="best-on-validation"))
    best = min(r["meta_loss"] for r in res.log.rows)
    _, meta_loss = evaluate(res.params, res.scenario.meta.x, res.scenario.meta.y)
    assert meta_loss == pytest.approx(best, rel=1e-12)


def test_params_roundtrip(tmp_path):
    res = run_experiment(_small(), tmp_path)
    back = load_params(tmp_path / "params.npz")
    assert isinstance(back, ModelParams)
    assert all(np.array_equal(a, b) for a, b in zip(back.arrays(), res.params.arrays()))


# evaluate -------------------------------------------------------------------


def test_perfect_oracle_scores_one():
    scn = gen_imbalanced(0, separation=8.0, n_test=400)
    m0 = scn.test.x[scn.test.y == 0].mean(0)
    m1 = scn.test.x[scn.test.y == 1].mean(0)
    w = (m1 - m0)[:, None]
    b = np.array([-(m1 - m0) @ (m0 + m1) / 2])
    p = ModelParams([w * 100], [b * 100], (), "logistic")
    acc, _ = evaluate_split(p, scn)
    assert acc >= 0.999


def test_random_guess_is_chance():
    scn = gen_label_noise(0, num_classes=4, n_test=4000, separation=0.0)
    p = init_backbone(scn, (8,), "relu", 0)
    acc, _ = evaluate_split(p, scn)
    sd = np.sqrt(0.25 * 0.75 / 4000)
    assert abs(acc - 0.25) <= 3 * sd + 0.02


def test_evaluate_errors():
    scn = gen_imbalanced(0)
    p = init_backbone(scn, (8,), "relu", 0)
    with pytest.raises(ValidationError):
        evaluate_split(p, scn, "validation")
    with pytest.raises(ValidationError):
        evaluate(p, np.zeros((0, scn.dim)), np.zeros(0))


# sweeps ---------------------------------------------------------------------


def test_sweep_summary(tmp_path):
    rows, text = sweep(_small(steps=20), "beta", [0.05, 0.5], replicates=2, out_dir=tmp_path,
                       separation=("minority", "majority"))
    assert len(rows) == 4
    lines = text.splitlines()
    assert lines[0].startswith("axis,value,replicate,seed")
    assert (tmp_path / "summary.csv").read_text() == text
    # values within one replicate share the seed
    assert rows[0]["seed"] == rows[1]["seed"] != rows[2]["seed"]
    assert all(r["weight_separation"] is not None for r in rows)


def test_sweep_errors():
    with pytest.raises(ValidationError):
        sweep(_small(), "beta", [])
    with pytest.raises(ValidationError, match="valid axes"):
        sweep(_small(), "colour", [1])


def test_sweep_axes_cover_sgld_fields():
    axes = sweep_axes()
    assert "sgld.beta" in axes and "sgld.sigma_per_nt" in axes and "weights.label_mode" in axes


def test_derived_seeds_distinct():
    assert len({derived_seed(0, r) for r in range(50)}) == 50


def test_tag_separation_errors():
    scn = gen_imbalanced(0)
    with pytest.raises(ValidationError):
        tag_separation(scn, np.zeros(len(scn.train)), "minority", "clean")


# directional, small ---------------------------------------------------------


@pytest.fixture(scope="module")
def imbalance_run():
    return run_experiment(preset("mnist", seed=0, eval_every=3000))


def test_imbalance_minority_weight_in_final_fifth(imbalance_run):
    log = imbalance_run.log
    k = int(0.8 * len(log.batch_rows))
    mino = np.nanmean(log.batch_column("weight_minority")[k:])
    majo = np.nanmean(log.batch_column("weight_majority")[k:])
    assert mino > majo


def test_held_out_minority_scores_higher(imbalance_run):
    res = imbalance_run
    held = gen_imbalanced(0, separation=3.5, dim=2).test  # fresh draws, never trained on
    emb = forward(res.params, held.x).embedding
    w = score_new_examples(res.weight_state, WeightQuery(np.arange(len(held)), emb))
    assert w[held.tags == 1].mean() > w[held.tags == 0].mean()
