import json
import os

import numpy as np
import pytest

import twins.cli as cli
from twins.training import TrainAbort

SPEC = "len=160,channels=2,lag=2,noise=0.05,seed=3|period=8|period=16,amp=0.5"
MODEL_FLAGS = ["--lookback", "8", "--horizon", "4", "--patch", "4",
               "--d", "2", "--num-scales", "2", "--layers", "1",
               "--heads", "2", "--aware-heads", "2", "--hidden", "8",
               "--ffn-hidden", "8", "--epochs", "2", "--batch-size", "16",
               "--lr", "1e-3"]


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "run"
    rc = cli.main(["train", "--synthetic", SPEC, *MODEL_FLAGS,
                   "--out", str(out)])
    assert rc == 0
    return out


def test_train_artifacts(trained):
    for name in ("run.json", "config.json", "train_log.jsonl",
                 "model.ckpt", "metrics.json"):
        assert (trained / name).exists(), name
    cfg = json.loads((trained / "config.json").read_text())
    assert cfg["C"] == 2 and cfg["L"] == 8 and cfg["T"] == 4
    lines = (trained / "train_log.jsonl").read_text().strip().splitlines()
    records = [json.loads(s) for s in lines]
    assert len(records) == 3          # two epochs plus the final test record
    assert records[0]["epoch"] == 0
    assert records[-1]["epoch"] is None
    assert np.isfinite(records[-1]["test_mse"])
    metrics = json.loads((trained / "metrics.json").read_text())
    assert {"best_epoch", "test_mse", "test_mae",
            "baseline_mse"} <= set(metrics)


def test_eval_reproduces_train_metrics(trained, tmp_path):
    out = tmp_path / "eval"
    rc = cli.main(["eval", "--ckpt", str(trained / "model.ckpt"),
                   "--synthetic", SPEC, "--out", str(out)])
    assert rc == 0
    got = json.loads((out / "metrics.json").read_text())
    want = json.loads((trained / "metrics.json").read_text())
    assert got["test_mse"] == want["test_mse"]
    assert got["test_mae"] == want["test_mae"]


def test_eval_channel_mismatch(trained, capfd):
    rc = cli.main(["eval", "--ckpt", str(trained / "model.ckpt"),
                   "--synthetic", "len=120,period=8"])
    assert rc == 1
    assert "channels" in capfd.readouterr().err


def test_missing_checkpoint(tmp_path, capfd):
    missing = str(tmp_path / "ghost.ckpt")
    rc = cli.main(["eval", "--ckpt", missing, "--synthetic", SPEC])
    assert rc == 1
    assert "ghost.ckpt" in capfd.readouterr().err


def test_forecast_csv(trained, tmp_path):
    out = tmp_path / "fc"
    rc = cli.main(["forecast", "--ckpt", str(trained / "model.ckpt"),
                   "--synthetic", SPEC, "--out", str(out)])
    assert rc == 0
    lines = (out / "forecast.csv").read_text().strip().splitlines()
    assert len(lines) == 5            # header plus T=4 rows
    assert len(lines[0].split(",")) == 2
    body = np.array([[float(v) for v in s.split(",")] for s in lines[1:]])
    assert body.shape == (4, 2) and np.all(np.isfinite(body))


def test_attn_export(trained, tmp_path):
    out = tmp_path / "attn"
    rc = cli.main(["analyze", "attn", "--ckpt", str(trained / "model.ckpt"),
                   "--synthetic", SPEC, "--layer", "0", "--head", "1",
                   "--out", str(out)])
    assert rc == 0
    mat = np.loadtxt(out / "attention.csv", delimiter=",")
    assert mat.shape == (2, 2)        # L=8, patch 4
    assert np.max(np.abs(mat.sum(axis=1) - 1.0)) < 1e-6


def test_scalogram_cmd(tmp_path, capfd):
    out = tmp_path / "sg"
    rc = cli.main(["analyze", "scalogram", "--synthetic",
                   "len=128,period=16", "--out", str(out)])
    assert rc == 0
    assert "peak scale" in capfd.readouterr().out
    lines = (out / "scalogram.csv").read_text().splitlines()
    assert lines[0].startswith("scale,")
    assert len(lines[1].split(",")) == 129


def test_flops_reference_values(capfd):
    rc = cli.main(["analyze", "flops", "--T", "96", "--P", "8",
                   "--D", "128", "--k", "3"])
    assert rc == 0
    out = capfd.readouterr().out
    assert "823296" in out and "434688" in out
    assert "yes" in out


def test_flops_bad_grid(capfd):
    rc = cli.main(["analyze", "flops", "--T", "96", "--P", "7"])
    assert rc == 1
    assert "divide" in capfd.readouterr().err


def test_missing_data_file(capfd):
    rc = cli.main(["train", "--data", "/no/such/file.csv", *MODEL_FLAGS])
    assert rc == 1
    assert "/no/such/file.csv" in capfd.readouterr().err


def test_both_sources_rejected(capfd):
    rc = cli.main(["train", "--data", "x.csv", "--synthetic", SPEC,
                   *MODEL_FLAGS])
    assert rc == 1


def test_no_source_rejected(capfd):
    rc = cli.main(["train", *MODEL_FLAGS])
    assert rc == 1
    assert "--data" in capfd.readouterr().err


def test_bad_config_exit_code(capfd):
    rc = cli.main(["train", "--synthetic", SPEC, "--lookback", "8",
                   "--horizon", "4", "--patch", "5"])
    assert rc == 1
    assert "error:" in capfd.readouterr().err


@pytest.mark.parametrize("spec", [
    "junk",
    "period=bad",
    "amp=2",                   # modifier before any component
    "period=8,active=5",       # missing the LO-HI dash
    "wibble=3",
])
def test_synth_spec_errors(spec, capfd):
    rc = cli.main(["analyze", "scalogram", "--synthetic", spec])
    assert rc == 1
    assert "synthetic spec" in capfd.readouterr().err


def test_nan_abort_maps_to_exit_2(monkeypatch, tmp_path, capfd):
    def explode(cfg, dataset, **kw):
        raise TrainAbort(0, 1)

    monkeypatch.setattr(cli, "train", explode)
    rc = cli.main(["train", "--synthetic", SPEC, *MODEL_FLAGS,
                   "--out", str(tmp_path / "r")])
    assert rc == 2
    assert "non-finite" in capfd.readouterr().err


def test_selfcheck_passes(capfd):
    rc = cli.main(["selfcheck"])
    out = capfd.readouterr().out
    assert rc == 0
    assert "selfcheck passed" in out
    assert "FAIL" not in out
    assert "ok: gradcheck matmul" in out
    assert "ok: flop ledger" in out


def test_selfcheck_inject_bug_fails_named_op(capfd):
    rc = cli.main(["selfcheck", "--inject-bug", "softmax"])
    captured = capfd.readouterr()
    assert rc == 3
    assert "FAIL: gradcheck softmax" in captured.out
    assert "softmax" in captured.err


def test_selfcheck_unknown_op(capfd):
    rc = cli.main(["selfcheck", "--inject-bug", "wibble"])
    assert rc == 1
    assert "wibble" in capfd.readouterr().err


def test_unknown_flag_is_usage_error(capfd):
    rc = cli.main(["train", "--bogus"])
    assert rc == 1


def test_ablate_cmd(tmp_path, capfd):
    out = tmp_path / "ab"
    rc = cli.main(["analyze", "ablate", "--synthetic",
                   "len=140,channels=2,period=8", *MODEL_FLAGS,
                   "--out", str(out)])
    assert rc == 0
    lines = (out / "ablation.csv").read_text().strip().splitlines()
    assert lines[0] == "variant,mse,mae,seconds"
    assert len(lines) == 5
    assert lines[1].startswith("full,")


def test_out_root_env_var(tmp_path, monkeypatch, capfd):
    monkeypatch.setenv(cli.OUT_ROOT_VAR, str(tmp_path))
    rc = cli.main(["analyze", "scalogram", "--synthetic",
                   "len=128,period=16"])
    assert rc == 0
    made = os.listdir(tmp_path)
    assert len(made) == 1 and made[0].startswith("scalogram-")
