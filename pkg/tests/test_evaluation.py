import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stecformer import cli
from stecformer import evaluation as ev
from stecformer.checkpoint import load_model
from stecformer.data import load_csv


TINY_MODEL = {"T_in": 16, "T_pred": 12, "d_model": 8, "kernel": 5, "C_in": 4, "C_mid": 2, "C_out": 2,
              "layers_per_stage": 1}
TINY_SYNTH = {"V": 3, "length": 400, "periods": [8, 12, 6], "amplitudes": [1, 0.5, 1],
              "noise": [0.05, 0.05, 0.05], "mixing": [[1, 0.3, 0], [0, 1, 0], [0.2, 0, 1]], "seed": 1}


def tiny_config(tmp_path, **over):
    d = {"dataset": {"preset": "synthetic", "synth": TINY_SYNTH, "train_stride": 3, "eval_stride": 2},
         "model": dict(TINY_MODEL), "train": {"lr": 1e-3, "max_epochs": 2}, "seed": 0,
         "output_dir": "out"}
    d.update(over)
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(d))
    return p


# ---------------------------------------------------------------- metrics

def loop_mse(p, t):
    tot, n = 0.0, 0
    for a, b in zip(p.ravel(), t.ravel()):
        tot += (a - b) ** 2
        n += 1
    return tot / n


def loop_mae(p, t):
    return sum(abs(a - b) for a, b in zip(p.ravel(), t.ravel())) / p.size


def test_metric_examples():
    t = np.random.default_rng(0).normal(size=(3, 6, 2))
    assert ev.mse(t, t) == 0.0 and ev.mae(t, t) == 0.0
    assert ev.mse(t + 2, t) == pytest.approx(4.0, abs=1e-12)
    assert ev.mae(t + 2, t) == pytest.approx(2.0, abs=1e-12)


def test_metrics_match_loop_oracle():
    rng = np.random.default_rng(1)
    for _ in range(20):
        p, t = rng.normal(size=(4, 7, 3)), rng.normal(size=(4, 7, 3))
        assert abs(ev.mse(p, t) - loop_mse(p, t)) < 1e-12
        assert abs(ev.mae(p, t) - loop_mae(p, t)) < 1e-12


def test_metric_shape_mismatch():
    with pytest.raises(ValueError):
        ev.mse(np.zeros(3), np.zeros(4))


# ---------------------------------------------------------------- sub-periods

def test_subperiod_bounds():
    assert ev.subperiod_bounds(96) == [(i * 16, (i + 1) * 16) for i in range(6)]
    assert ev.subperiod_bounds(20)[-1] == (15, 20)
    with pytest.raises(ValueError):
        ev.subperiod_bounds(5)


def test_constant_error_has_unit_jitter():
    t = np.zeros((2, 24, 3))
    mses, jit = ev.subperiod_consistency(t + 0.5, t)
    assert mses == [0.25] * 6 and jit == 1.0


def test_error_only_in_last_part_is_infinite_jitter():
    t = np.zeros((1, 24, 1))
    p = t.copy()
    p[:, 20:] = 1.0
    mses, jit = ev.subperiod_consistency(p, t)
    assert mses[:5] == [0.0] * 5 and mses[5] == 1.0
    assert math.isinf(jit)


def test_jitter_examples():
    assert ev.jitter([1.0, 2.0, 1.0, 1.5]) == 2.0
    assert ev.jitter([0.0, 0.0]) == 1.0


@settings(max_examples=50, deadline=None)
@given(st.integers(6, 50), st.integers(0, 10_000))
def test_weighted_parts_equal_overall(T_pred, seed):
    rng = np.random.default_rng(seed)
    p, t = rng.normal(size=(3, T_pred, 2)), rng.normal(size=(3, T_pred, 2))
    mses, _ = ev.subperiod_consistency(p, t)
    lengths = [b - a for a, b in ev.subperiod_bounds(T_pred)]
    assert abs(np.dot(mses, lengths) / T_pred - ev.mse(p, t)) < 1e-9


def test_overall_mse_is_window_weighted_mean():
    rng = np.random.default_rng(2)
    p, t = rng.normal(size=(5, 12, 2)), rng.normal(size=(5, 12, 2))
    rep = ev.forecast_report(p, t, T_in=16)
    per_window = [ev.mse(p[i], t[i]) for i in range(5)]
    assert abs(rep.mse - np.mean(per_window)) < 1e-12
    assert rep.n_windows == 5 and rep.T_pred == 12


def test_report_round_trip(tmp_path):
    t = np.zeros((1, 12, 1))
    p = t.copy()
    p[:, 10:] = 1
    rep = ev.forecast_report(p, t, T_in=16, seed=3)
    ev.write_report(tmp_path / "r.json", rep)
    back = ev.read_report(tmp_path / "r.json")
    assert back == rep and math.isinf(back.jitter)


# ---------------------------------------------------------------- configs and toggles

def test_ablation_grid_toggles():
    base = {"V": 4, "T_in": 16, "T_pred": 12, "kernel": 5, "d_model": 8}
    cfgs = {}
    for e, a in ev.ABLATION_GRID.items():
        cfgs[e] = a.apply(base, 0.5)
    assert cfgs[1]["w_gcm"] == 0.0 and cfgs[1]["interval_fractions"] == [1.0]
    assert cfgs[2]["w_gcm"] == 0.0 and "interval_fractions" not in cfgs[2]
    assert cfgs[3]["w_gcm"] == 0.5 and cfgs[3]["learn_graph"] and cfgs[3]["interval_fractions"] == [1.0]
    assert cfgs[4]["w_gcm"] == 0.5 and not cfgs[4]["learn_graph"]
    assert cfgs[5] == {**base, "w_gcm": 0.5, "learn_graph": True}
    touched = {"w_gcm", "learn_graph", "interval_fractions"}
    for c in cfgs.values():
        assert {k: v for k, v in c.items() if k not in touched} == base


def test_config_validation(tmp_path):
    with pytest.raises(ValueError):
        ev.ExperimentConfig.from_dict({"dataset": {"preset": "synthetic"}, "bogus": 1})
    with pytest.raises(ValueError):
        ev.ExperimentConfig.from_dict({"dataset": {"preset": "nope", "path": "x.csv"}})
    with pytest.raises(ValueError):
        ev.ExperimentConfig.from_dict({"dataset": {"preset": "ili"}})
    with pytest.raises(TypeError):
        ev.ExperimentConfig.from_dict({"dataset": {"preset": "synthetic"}, "ablation": {"use_x": 1}})


def test_preset_supplies_lengths():
    cfg = ev.ExperimentConfig.from_dict({"dataset": {"preset": "ili", "path": "ili.csv"},
                                         "model": {"kernel": 25}})
    mc = cfg.model_config(7)
    assert (mc.T_in, mc.T_pred, mc.V) == (36, 24, 7)


def test_shipped_configs_validate():
    from pathlib import Path
    root = Path(__file__).resolve().parents[1] / "configs"
    files = sorted(root.glob("*.json"))
    names = {f.stem for f in files}
    assert {"synthetic", "ili", "ettm2", "ecl", "exchange", "weather"} <= names
    for f in files:
        if f.stem.endswith("_spec"):
            continue
        cfg = ev.ExperimentConfig.load(f)
        cfg.model_config(8)
        cfg.train_config()


# ---------------------------------------------------------------- orchestration

def test_run_experiment_artifacts_and_determinism(tmp_path):
    p = tiny_config(tmp_path)
    a = ev.run_experiment(p)
    out = tmp_path / "out"
    for name in ("report.json", "history.csv", "model.ckpt", "model.json", "learned_graph.csv",
                 "subperiods.csv"):
        assert (out / name).is_file()
    first = json.loads((out / "report.json").read_text())
    b = ev.run_experiment(p)
    second = json.loads((out / "report.json").read_text())
    first.pop("runtime_seconds"), second.pop("runtime_seconds")
    assert first == second and a.mse == b.mse
    # artifacts re-ingest
    assert len(ev.read_csv_rows(out / "history.csv")) == a.stopped_epoch
    assert load_csv(out / "learned_graph.csv").values.shape == (3, 3)
    assert [r["part"] for r in ev.read_csv_rows(out / "subperiods.csv")] == [str(i) for i in range(1, 7)]
    model = load_model(out / "model.ckpt")
    assert ev.evaluate_checkpoint(p, out / "model.ckpt").mse == a.mse
    assert model.cfg.num_stages == 2


def test_stage_label_on_error(tmp_path):
    p = tiny_config(tmp_path, model={**TINY_MODEL, "T_in": 500})
    with pytest.raises(RuntimeError, match=r"^\[windows\]"):
        ev.run_experiment(p, write=False)
    missing = tiny_config(tmp_path, dataset={"path": "missing.csv"})
    with pytest.raises(RuntimeError, match=r"^\[data\]"):
        ev.run_experiment(missing, write=False)


def test_denormalized_metrics(tmp_path):
    rep = ev.run_experiment(tiny_config(tmp_path), denormalized=True, write=False)
    assert set(rep.denormalized) == {"mse", "mae"}


def test_zeroed_graph_matches_common_graph(tmp_path):
    """Zeroing the learned graph of a trained Exp 3 model gives exactly the Exp 4 forward pass."""
    cfg = ev.ExperimentConfig.load(tiny_config(tmp_path, ablation={"use_cdp": False}))
    ev.run_experiment(cfg)
    m3 = load_model(tmp_path / "out" / "model.ckpt")
    from stecformer.model import ModelConfig, Stecformer
    m4 = Stecformer(ModelConfig.from_dict({**m3.cfg.to_dict(), "learn_graph": False}))
    state = m3.state_dict()
    state["encoder.0.gcm.A"] = np.zeros_like(state["encoder.0.gcm.A"])
    m4.load_state_dict(state)
    m3.load_state_dict(state)
    x = np.random.default_rng(0).normal(size=(3, 16, 3))
    np.testing.assert_array_equal(m3.predict(x), m4.predict(x))


# ---------------------------------------------------------------- CLI

def test_cli_usage_errors(tmp_path, capsys):
    assert cli.main([]) == 1
    assert cli.main(["frobnicate"]) == 1
    assert cli.main(["train", str(tmp_path / "nope.json")]) == 1
    assert "nope.json" in capsys.readouterr().err
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.main(["train", str(bad)]) == 1
    assert cli.main(["ablate", str(tiny_config(tmp_path)), "--parallel", "0"]) == 1


def test_cli_runtime_error_exit_code(tmp_path):
    p = tiny_config(tmp_path, model={**TINY_MODEL, "T_in": 500})
    assert cli.main(["train", str(p)]) == 2


def test_cli_synth_then_train(tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps(TINY_SYNTH))
    csv_path = tmp_path / "gen.csv"
    assert cli.main(["synth", str(spec), str(csv_path)]) == 0
    assert load_csv(csv_path).values.shape == (400, 3)
    cfg = tiny_config(tmp_path, dataset={"path": "gen.csv", "train_stride": 3, "eval_stride": 2})
    assert cli.main(["train", str(cfg)]) == 0
    ck = tmp_path / "out" / "model.ckpt"
    assert ck.is_file()
    assert cli.main(["eval", str(cfg), "--checkpoint", str(ck)]) == 0
    assert ev.read_report(tmp_path / "out" / "eval_report.json").mse >= 0


def test_cli_ablate_writes_five_rows(tmp_path):
    cfg = tiny_config(tmp_path, train={"lr": 1e-3, "max_epochs": 1})
    assert cli.main(["ablate", str(cfg)]) == 0
    rows = ev.read_csv_rows(tmp_path / "out" / "ablation.csv")
    assert [int(r["exp_id"]) for r in rows] == [1, 2, 3, 4, 5]
    assert list(rows[0]) == ev.ABLATION_COLUMNS
    assert [r["use_cdp"] for r in rows] == ["0", "1", "0", "0", "1"]


def test_cli_consistency_labels(tmp_path):
    on = tiny_config(tmp_path, output_dir="on")
    ev.run_experiment(on)
    off = tiny_config(tmp_path, output_dir="off", ablation={"use_cdp": False})
    ev.run_experiment(off)
    out = tmp_path / "cons.csv"
    code = cli.main(["consistency", str(on), "--checkpoint", str(tmp_path / "on" / "model.ckpt"),
                     "--checkpoint", str(tmp_path / "off" / "model.ckpt"), "--out", str(out)])
    assert code == 0
    rows = ev.read_csv_rows(out)
    assert [r["label"] for r in rows] == ["cdp"] * 6 + ["no_cdp"] * 6
    assert all(float(r["mse"]) >= 0 for r in rows)
