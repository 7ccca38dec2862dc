import json
import subprocess
import sys

import numpy as np
import pytest

from xaitwin.bayes import DagBayesNet, DagStructure
from xaitwin.cli import main

SMALL = """
[run]
seed = 3
kb_sessions = 250
test_sessions = 100
output = "out"

[synthetic]
n_samples = 400
"""


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text(SMALL)
    return path


def last_json(capsys):
    return json.loads(capsys.readouterr().out)


def test_run_writes_outputs(tmp_path, config, capsys):
    out = tmp_path / "res"
    assert main(["run", "--config", str(config), "--out", str(out)]) == 0
    summary = last_json(capsys)
    names = sorted(p.name for p in out.iterdir())
    assert names == ["bn.json", "decisions.ndjson", "estimators.json", "metrics.json",
                     "summary.csv"]
    assert set(summary["normalized_trust"]) == {"ucb", "epsilon", "gradient"}
    metrics = json.loads((out / "metrics.json").read_text())
    assert metrics["accuracy"] == summary["accuracy"]


def test_run_output_from_config(tmp_path, config):
    assert main(["run", "--config", str(config), "--policy", "ucb"]) == 0
    # relative output paths resolve against the config file
    assert (tmp_path / "out" / "metrics.json").exists()
    lines = (tmp_path / "out" / "decisions.ndjson").read_text().splitlines()
    assert {json.loads(x)["policy"] for x in lines} == {"ucb"}


def test_run_requires_config(capsys):
    assert main(["run"]) == 1
    assert "usage" in capsys.readouterr().err


def test_unknown_flag_and_command(capsys):
    assert main(["fit", "--bogus"]) == 1
    assert main(["explode"]) == 1
    assert main([]) == 1


def test_bad_config_exit_1(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("[run]\nnum_gnbs = 0\n")
    assert main(["run", "--config", str(bad)]) == 1
    assert main(["run", "--config", str(tmp_path / "missing.toml")]) == 1
    assert "error" in capsys.readouterr().err


def test_insufficient_data_exit_1(config, capsys):
    assert main(["fit", "--config", str(config), "--kb-sessions", "390"]) == 1


def test_synth_then_fit(tmp_path, capsys):
    trace = tmp_path / "trace.csv"
    assert main(["synth", "--samples", "500", "--seed", "4", "--out", str(trace)]) == 0
    assert last_json(capsys)["rows"] == 500
    assert len(trace.read_text().splitlines()) == 501
    est = tmp_path / "est.json"
    assert main(["fit", "--trace", str(trace), "--kb-sessions", "300", "--test-sessions", "150",
                 "--out", str(est)]) == 0
    summary = last_json(capsys)
    assert 0 < summary["accuracy"] <= 100 and len(summary["converged"]) == 5
    data = json.loads(est.read_text())
    assert len(data["estimators"]) == 5
    assert np.asarray(data["estimators"][0]["coefficients"]).shape == (6, 2)


def test_reason_on_run_model(tmp_path, config, capsys):
    out = tmp_path / "res"
    assert main(["run", "--config", str(config), "--out", str(out)]) == 0
    capsys.readouterr()
    model = str(out / "bn.json")
    assert main(["reason", "--model", model, "--evidence", "speed=30-60",
                 "--evidence", "gnb=0", "--query", "cqi"]) == 0
    res = last_json(capsys)
    assert res["evidence"] == {"speed": "30-60", "gnb": "gNB1"}
    assert list(res["conditionals"]) == ["cqi"]
    assert sum(res["conditionals"]["cqi"].values()) == pytest.approx(1.0, abs=1e-12)
    assert set(res["mpe"]["assignment"]) == {"rsrp", "rsrq", "sinr", "cqi", "uplink",
                                             "downlink"}
    assert main(["reason", "--model", model]) == 0
    assert len(last_json(capsys)["conditionals"]) == 8


def test_reason_input_errors(tmp_path, config, capsys):
    assert main(["reason", "--model", str(tmp_path / "nope.json")]) == 1
    junk = tmp_path / "junk.json"
    junk.write_text("{not json")
    assert main(["reason", "--model", str(junk)]) == 1
    out = tmp_path / "res"
    main(["run", "--config", str(config), "--out", str(out), "--policy", "ucb"])
    model = str(out / "bn.json")
    assert main(["reason", "--model", model, "--evidence", "speed"]) == 1
    assert main(["reason", "--model", model, "--evidence", "speed=warp"]) == 1
    assert main(["reason", "--model", model, "--evidence", "speed=0", "--query", "speed"]) == 1


def test_zero_probability_evidence_exit_2(tmp_path, capsys):
    dag = DagStructure.from_edges(("A", "B"), [("A", "B")])
    net = DagBayesNet(dag, {"A": ("0", "1"), "B": ("0", "1")},
                      {"A": np.array([0.5, 0.5]), "B": np.array([[1.0, 0.0], [0.0, 1.0]])})
    model = tmp_path / "chain.json"
    model.write_text(net.to_json())
    assert main(["reason", "--model", str(model), "--evidence", "A=0", "--evidence", "B=1"]) == 2
    assert "runtime error" in capsys.readouterr().err


def test_console_module(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "xaitwin.cli", "run"], capture_output=True,
                          text=True)
    assert proc.returncode == 1 and "usage" in proc.stderr
