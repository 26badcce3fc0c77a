import json

import pytest
import yaml

from ltlcontrol.cli import EXIT_CONFIG, EXIT_OK, EXIT_TRAIN, SEED_ENV, main
from ltlcontrol.evaluation import read_path

RUN = {"map": "bundled:coprates.map", "automaton": "bundled:coprates.ldba",
       "algorithm": "fvi", "Z": 2, "sweeps": 10, "eval_trials": 10}


@pytest.fixture
def conf(tmp_path):
    p = tmp_path / "run.yaml"
    p.write_text(yaml.safe_dump(RUN))
    return p


def test_train_evaluate_export(tmp_path, conf, capsys):
    model = tmp_path / "model"
    assert main(["train", str(conf), "--out", str(model)]) == EXIT_OK
    meta = json.loads((model / "run.json").read_text())
    assert meta["sample_complexity"] == 100 * 2 * 5 * 2
    assert main(["evaluate", str(conf), str(model), "--trials", "5"]) == EXIT_OK
    assert "over 5 trials" in capsys.readouterr().out
    out = tmp_path / "p.csv"
    assert main(["export-path", str(conf), str(model), "--out", str(out), "--steps", "7"]) == 0
    rows = read_path(out)
    assert 2 <= len(rows) <= 8 and rows[0][2] == "q1"


def test_seed_from_environment(tmp_path, conf, monkeypatch):
    monkeypatch.setenv(SEED_ENV, "41")
    assert main(["train", str(conf), "--out", str(tmp_path / "a")]) == 0
    assert json.loads((tmp_path / "a" / "run.json").read_text())["config"]["seed"] == 41
    assert main(["train", str(conf), "--seed", "3", "--out", str(tmp_path / "b")]) == 0
    assert json.loads((tmp_path / "b" / "run.json").read_text())["config"]["seed"] == 3
    monkeypatch.setenv(SEED_ENV, "abc")
    assert main(["train", str(conf), "--out", str(tmp_path / "c")]) == EXIT_CONFIG


def test_config_errors_exit_2(tmp_path, conf, capsys):
    out = str(tmp_path / "m")
    assert main(["train", str(tmp_path / "none.yaml"), "--out", out]) == EXIT_CONFIG
    assert main(["train", str(conf), "--set", "k=99", "--out", out]) == EXIT_CONFIG
    assert main(["train", str(conf), "--set", "sweeps=-1", "--out", out]) == EXIT_CONFIG
    assert main(["train", str(conf), "--run", "4", "--out", out]) == EXIT_CONFIG
    assert main(["evaluate", str(conf), str(tmp_path / "nomodel")]) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_training_failure_exits_3(tmp_path, conf, monkeypatch):
    import ltlcontrol.cli as cli

    def boom(cfg, seed=None):
        raise FloatingPointError("nan loss")

    monkeypatch.setattr(cli, "train_algorithm", boom)
    assert main(["train", str(conf), "--out", str(tmp_path / "m")]) == EXIT_TRAIN


def test_bench_command(tmp_path, capsys):
    doc = {"defaults": {k: v for k, v in RUN.items() if k != "algorithm"},
           "runs": [{"algorithm": "fvi"}, {"algorithm": "fvi", "name": "fvi-b", "Z": 1}]}
    p = tmp_path / "b.yaml"
    p.write_text(yaml.safe_dump(doc))
    out = tmp_path / "res" / "bench.json"
    assert main(["bench", str(p), "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert [r["name"] for r in rep["rows"]] == ["fvi", "fvi-b"]
    assert out.with_suffix(".txt").read_text().startswith("map")
    # a multi-run file needs --run for single-run commands
    assert main(["train", str(p), "--out", str(tmp_path / "m")]) == EXIT_CONFIG


def test_validate_assets(tmp_path, capsys):
    assert main(["validate-assets"]) == EXIT_OK
    assert capsys.readouterr().out.count("ok ") == 4
    bad = tmp_path / "bad.ldba"
    bad.write_text("states: a\n")
    assert main(["validate-assets", str(bad)]) == EXIT_CONFIG
