import csv
import json
import subprocess
import sys

import pytest

from sslora import persist
from sslora.cli import main


def write_config(path, **overrides):
    cfg = {
        "data": {"num_domains": 2, "num_classes": 3, "input_dim": 8, "n_train": 12,
                 "n_val": 6, "seed": 1},
        "network": {"hidden_dim": 8, "num_blocks": 1, "rank": 2},
        "pretrain": {"epochs": 3},
        "train": {"max_steps": 20, "lr": 1e-3, "eval_every": 10, "seed": 1},
    }
    for key, val in overrides.items():
        cfg[key] = {**cfg.get(key, {}), **val}
    path.write_text(json.dumps(cfg))
    return str(path)


def test_help_exits_zero():
    proc = subprocess.run([sys.executable, "-m", "sslora", "--help"], capture_output=True,
                          text=True)
    assert proc.returncode == 0
    for sub in ("gen-data", "pretrain", "decompose", "train", "eval", "analyze"):
        assert sub in proc.stdout


def test_usage_errors_exit_one(tmp_path, capsys):
    assert main(["train", "--config", str(tmp_path / "missing.json")]) == 1
    with pytest.raises(SystemExit) as info:
        main(["train", "--bogus"])
    assert info.value.code == 1
    with pytest.raises(SystemExit) as info:
        main([])
    assert info.value.code == 1
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"data": {"no_such_key": 1}}))
    assert main(["gen-data", "--config", str(bad)]) == 1
    assert "no_such_key" in capsys.readouterr().err
    bad.write_text(json.dumps({"trian": {}}))
    assert main(["gen-data", "--config", str(bad)]) == 1


def test_full_pipeline(tmp_path, capsys):
    cfg = write_config(tmp_path / "cfg.json")
    assert main(["gen-data", "--config", cfg]) == 0
    assert (tmp_path / "data" / "manifest.json").exists()
    assert main(["pretrain", "--config", cfg]) == 0
    assert main(["decompose", "--config", cfg, "--threshold", "0.9"]) == 0
    records = json.loads((tmp_path / "decomposition.json").read_text())
    assert [r["layer"] for r in records] == [0, 1]
    assert all(r["k"] + r["s"] == min(r["d"], r["d'"]) for r in records)
    dec = persist.load(tmp_path / "decomposition.sslw")
    assert "layer0.U_m" in dec.tensors and dec.metadata["threshold"] == "0.9"
    assert main(["train", "--config", cfg]) == 0
    rows = list(csv.reader((tmp_path / "metrics.csv").open()))
    assert rows[0][:7] == ["step", "domain", "ce", "orth", "ss", "total", "lr"]
    assert len(rows) == 21
    assert (tmp_path / "adapters.sslw").exists()
    assert main(["eval", "--config", cfg]) == 0
    results = json.loads((tmp_path / "eval.json").read_text())
    assert set(results) == {"domain0", "domain1"}
    assert main(["analyze", "--ckpt", str(tmp_path / "checkpoint.sslw"),
                 "--out", str(tmp_path / "report.csv")]) == 0
    assert (tmp_path / "report.csv").exists() and (tmp_path / "pairs.csv").exists()


def test_resume_extends_training(tmp_path):
    cfg = write_config(tmp_path / "cfg.json")
    for cmd in ("gen-data", "pretrain", "train"):
        assert main([cmd, "--config", cfg]) == 0
    cfg2 = write_config(tmp_path / "cfg.json", train={"max_steps": 30})
    assert main(["train", "--config", cfg2, "--resume", str(tmp_path / "checkpoint.sslw")]) == 0
    rows = list(csv.reader((tmp_path / "metrics.csv").open()))
    assert [r[0] for r in rows[1:]] == [str(t) for t in range(30)]


def test_eval_missing_checkpoint_exits_one(tmp_path):
    cfg = write_config(tmp_path / "cfg.json")
    assert main(["gen-data", "--config", cfg]) == 0
    assert main(["eval", "--config", cfg]) == 1


def test_decompose_rejects_bad_threshold(tmp_path):
    cfg = write_config(tmp_path / "cfg.json")
    for cmd in ("gen-data", "pretrain"):
        assert main([cmd, "--config", cfg]) == 0
    assert main(["decompose", "--config", cfg, "--threshold", "1.5"]) == 1


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_exits_two(tmp_path):
    cfg = write_config(tmp_path / "cfg.json",
                       train={"lr": 1e300, "optimizer": "sgd", "max_steps": 50})
    for cmd in ("gen-data", "pretrain"):
        assert main([cmd, "--config", cfg]) == 0
    assert main(["train", "--config", cfg]) == 2
