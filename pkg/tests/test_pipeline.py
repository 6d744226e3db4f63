import json

import numpy as np
import pytest

from lragnn import pipeline
from lragnn import rl
from lragnn.checkpoint import load_arrays, save_store
from lragnn.config import PipelineConfig
from lragnn.dataset import SyntheticSpec, generate_synthetic, write_samples
from lragnn.errors import CompatibilityError, ConfigError, NumericError

SMALL = {"gcn.depth": 2, "gcn.width": 8, "attention.heads": 2, "rl.q_hidden": 16, "graph.threshold": 0.3,
         "walk.walks_per_node": 2, "walk.walk_length": 6, "optimizer.epochs": 2, "rl.horizon": 12}


def small_cfg(**extra):
    return PipelineConfig().replace(**{**SMALL, **extra})


def small_data(n=40, seed=0, sigma=None):
    return generate_synthetic(SyntheticSpec(n_samples=n, n_nodes=6, n_features=6, sigma=sigma, seed=seed))


# --- oracles -----------------------------------------------------------------

def test_constant_policy_checkpoint_gives_mean_absolute_deviation(tmp_path):
    cfg = small_cfg()
    samples = small_data(30)
    write_samples(tmp_path / "d.jsonl", samples)
    cfg.save(tmp_path / "config.json")
    _, store = pipeline.build_model(cfg, 6)
    for n in rl.Q_NAMES:
        store[n].value[...] = 0.0
    store["q.bq"].value[0, 4] = 1.0        # always stay
    store["q.bc"].value[0, 3] = 1.0        # start row 3, column 4
    save_store(tmp_path / "model.ckpt", store)
    rep = pipeline.run_eval(tmp_path / "model.ckpt", tmp_path / "d.jsonl")
    assert rep.mae == pytest.approx(np.mean([abs(s.age - 34) for s in samples]), abs=1e-12)


def test_two_sample_memorisation(tmp_path):
    samples = small_data(2, seed=5)
    assert samples[0].age != samples[1].age
    cfg = small_cfg(**{"val_fraction": 0.0, "optimizer.epochs": 150, "optimizer.batch": 2, "rl.n_envs": 2,
                       "rl.batch": 8, "rl.sync_interval": 50, "optimizer.lr": 0.01, "rl.epochs": 600})
    res = pipeline.train(samples, cfg, tmp_path)
    write_samples(tmp_path / "d.jsonl", samples)
    rep = pipeline.run_eval(tmp_path / "model.ckpt", tmp_path / "d.jsonl")
    assert res.train_report.mae == 0.0 and rep.mae == 0.0


# --- training -------------------------------------------------------------------------------

def test_zero_epochs_keeps_initialisation(tmp_path):
    cfg = small_cfg(**{"optimizer.epochs": 0})
    res = pipeline.train(small_data(20), cfg, tmp_path)
    _, fresh = pipeline.build_model(cfg, 6)
    saved = load_arrays(tmp_path / "model.ckpt")
    assert set(saved) == set(fresh.values())
    for k, v in fresh.values().items():
        np.testing.assert_array_equal(saved[k], v)
    for name in ("config.json", "train_metrics.json", "train_metrics.txt", "val_metrics.json",
                 "cs_curve.tsv", "train_log.json", "split.json"):
        assert (tmp_path / name).exists()
    assert res.log["warm_epoch_loss"] == []


def test_same_seed_same_metrics(tmp_path):
    data = small_data(30)
    a = pipeline.train(data, small_cfg(), tmp_path / "a")
    b = pipeline.train(data, small_cfg(), tmp_path / "b")
    for name in ("model.ckpt", "val_metrics.json", "train_log.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert a.val_report.mae == b.val_report.mae


def test_report_echoes_config_and_split(tmp_path):
    cfg = small_cfg(**{"seed": 4})
    pipeline.train(small_data(20), cfg, tmp_path)
    rep = json.loads((tmp_path / "val_metrics.json").read_text())
    assert rep["diagnostics"]["config"] == cfg.to_dict()
    assert "[config]" in (tmp_path / "val_metrics.txt").read_text()
    split = json.loads((tmp_path / "split.json").read_text())
    assert len(split["val"]) == 4 and len(split["train"]) == 16
    assert PipelineConfig.load(tmp_path / "config.json") == cfg


def test_smoothed_warm_loss_decreases():
    cfg = small_cfg(**{"optimizer.epochs": 12, "rl.epochs": 0})
    res = pipeline.train(small_data(60), cfg)
    s = res.log["warm_epoch_loss_smoothed"]
    assert all(b <= a for a, b in zip(s, s[1:]))


def test_numeric_abort_writes_dump(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise NumericError("non-finite loss")

    monkeypatch.setattr(pipeline, "warm_phase", boom)
    with pytest.raises(NumericError):
        pipeline.train(small_data(10), small_cfg(), tmp_path)
    dump = json.loads((tmp_path / "numeric_dump.json").read_text())
    assert dump["stage"] == "warm" and "gcn.W_in" in dump["params"]


def test_split_is_seeded_and_disjoint():
    tr, va = pipeline.split_indices(50, 0.2, 3)
    assert len(va) == 10 and not set(tr) & set(va) and len(set(tr) | set(va)) == 50
    tr2, _ = pipeline.split_indices(50, 0.2, 3)
    np.testing.assert_array_equal(tr, tr2)


def test_smooth_trailing_average():
    assert pipeline.smooth([3.0, 1.0, 2.0], window=2) == [3.0, 2.0, 1.5]


# --- evaluation -------------------------------------------------------------------------------

def test_eval_without_sigma_and_with_sigma(tmp_path):
    pipeline.train(small_data(20), small_cfg(), tmp_path / "run")
    write_samples(tmp_path / "plain.jsonl", small_data(10, seed=1))
    write_samples(tmp_path / "sig.jsonl", small_data(10, seed=1, sigma=3.0))
    plain = pipeline.run_eval(tmp_path / "run" / "model.ckpt", tmp_path / "plain.jsonl", out_dir=tmp_path / "ev")
    sig = pipeline.run_eval(tmp_path / "run" / "model.ckpt", tmp_path / "sig.jsonl")
    assert plain.epsilon_error is None and sig.epsilon_error is not None
    assert plain.mae == sig.mae
    assert (tmp_path / "ev" / "eval_cs_curve.tsv").exists()


def test_eval_shape_mismatch_is_compatibility_error(tmp_path):
    pipeline.train(small_data(20), small_cfg(), tmp_path / "run")
    write_samples(tmp_path / "d.jsonl", small_data(5))
    with pytest.raises(CompatibilityError):
        pipeline.run_eval(tmp_path / "run" / "model.ckpt", tmp_path / "d.jsonl", config=small_cfg(**{"gcn.width": 4}))


# --- gradient check and ablation -------------------------------------------------------------

def test_gradcheck_precision_floor_and_seed_robustness():
    assert not pipeline.run_gradcheck(tolerance=1e-12).passed
    assert pipeline.run_gradcheck(seed=11).passed


def test_ablation_tables(tmp_path):
    data = small_data(20)
    cfg = small_cfg(**{"optimizer.epochs": 1})
    rows = pipeline.run_ablation(cfg, [], data)
    assert [r.variant for r in rows] == ["full"]
    rows = pipeline.run_ablation(cfg, ["ResGCN", "full"], data, tmp_path)
    assert [r.variant for r in rows] == ["full", "ResGCN"]
    assert len((tmp_path / "ablation.tsv").read_text().splitlines()) == 3
    with pytest.raises(ConfigError):
        pipeline.run_ablation(cfg, ["no-such"], data)


def test_minority_mae_uses_dataset_minority_decade():
    from lragnn.metrics import EvalRecord, build_report

    ages = [21] * 9 + [55]
    rep = build_report([EvalRecord(20.0, 21.0), EvalRecord(57.0, 55.0)])
    assert pipeline.minority_mae(rep, ages) == 2.0
    majority_only = build_report([EvalRecord(20.0, 21.0)])
    assert pipeline.minority_mae(majority_only, ages) is None
