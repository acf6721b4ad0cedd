import csv
import hashlib
import json
import subprocess
import sys

import pytest

from csc_ipca.cli import main


@pytest.fixture(scope="module")
def panel_csv(tmp_path_factory):
    d = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--seed", "7", "--out", str(d / "panel.csv")]) == 0
    return d / "panel.csv"


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_simulate_default_shape(panel_csv):
    rows = read_csv(panel_csv)
    assert len(rows) == 1 + 50 * 30
    assert rows[0][:4] == ["unit", "time", "y", "d"]
    assert len(rows[0]) - 4 == 10
    truth = json.loads(panel_csv.with_name("panel.truth.json").read_text())
    assert len(truth["true_att"]) == 10 and truth["config"]["seed"] == 7


def test_simulate_is_deterministic(tmp_path, panel_csv):
    assert main(["simulate", "--seed", "7", "--out", str(tmp_path / "again.csv")]) == 0
    assert digest(tmp_path / "again.csv") == digest(panel_csv)
    assert main(["simulate", "--seed", "8", "--out", str(tmp_path / "other.csv")]) == 0
    assert digest(tmp_path / "other.csv") != digest(panel_csv)


def test_invalid_alpha_reports_field(tmp_path, capsys):
    code = main(["simulate", "--set", "alpha_observed=0", "--out", str(tmp_path / "x.csv")])
    assert code == 1
    err = json.loads(capsys.readouterr().err)
    assert "alpha_observed" in err["message"] and err["error"] == "ValueError"


def test_unknown_config_field(tmp_path, capsys):
    assert main(["simulate", "--config", '{"nope": 1}', "--out", str(tmp_path / "x.csv")]) == 1
    assert "nope" in json.loads(capsys.readouterr().err)["message"]


def test_bad_arguments_are_json_errors(capsys):
    assert main(["estimate"]) == 1
    assert "error" in json.loads(capsys.readouterr().err)


def test_estimate_gap_csv(tmp_path, panel_csv):
    out = tmp_path / "fit.json"
    assert main(["estimate", "--data", str(panel_csv), "--k", "3", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert len(doc["fit"]["att"]) == 10
    assert doc["config"]["k"] == 3 and "threads" not in doc["config"]
    rows = read_csv(tmp_path / "fit.gap.csv")
    assert rows[0] == ["period", "actual_mean", "counterfactual_mean", "att", "ci_lo", "ci_hi"]
    assert len(rows) == 31


@pytest.mark.parametrize("method", ["ife", "scm"])
def test_estimate_baselines(tmp_path, panel_csv, method):
    out = tmp_path / "fit.json"
    assert main(["estimate", "--data", str(panel_csv), "--method", method,
                 "--out", str(out)]) == 0
    assert json.loads(out.read_text())["fit"]["method"] == method


def test_estimate_with_tuning(tmp_path, panel_csv):
    out = tmp_path / "fit.json"
    assert main(["estimate", "--data", str(panel_csv), "--tune", "loo", "--kmax", "2",
                 "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["tuning"]["method"] == "loo" and len(doc["tuning"]["mse_by_k"]) == 2
    assert len(doc["fit"]["params_ctrl"]["gamma"]["data"][0]) == doc["tuning"]["k_best"]


def test_estimate_with_inference_bands_post_only(tmp_path, panel_csv):
    out = tmp_path / "fit.json"
    assert main(["estimate", "--data", str(panel_csv), "--infer", "--level", "0.95",
                 "--grid=-5:20:26", "--out", str(out)]) == 0
    rows = read_csv(tmp_path / "fit.gap.csv")[1:]
    assert all(r[4] == "" and r[5] == "" for r in rows[:20])
    assert all(r[4] != "" and float(r[4]) <= float(r[5]) for r in rows[20:])


def test_tune_and_infer_commands(tmp_path, panel_csv):
    assert main(["tune", "--data", str(panel_csv), "--method", "bootstrap", "--kmax", "2",
                 "--reps", "2", "--seed", "1", "--out", str(tmp_path / "t.json")]) == 0
    assert read_csv(tmp_path / "t.mse.csv")[0] == ["k", "mse"]
    truth = panel_csv.with_name("panel.truth.json")
    assert main(["infer", "--data", str(panel_csv), "--null", str(truth), "--grid=-5:20:11",
                 "--out", str(tmp_path / "i.json")]) == 0
    doc = json.loads((tmp_path / "i.json").read_text())
    assert 0 < doc["test"]["p_value"] <= 1 and doc["test"]["n_permutations"] == 30
    assert len(read_csv(tmp_path / "i.bands.csv")) == 11


def test_report_from_estimate(tmp_path, panel_csv):
    fit = tmp_path / "fit.json"
    main(["estimate", "--data", str(panel_csv), "--out", str(fit)])
    assert main(["report", str(fit), "--out", str(tmp_path / "r.csv")]) == 0
    rows = read_csv(tmp_path / "r.csv")
    assert rows[0][:3] == ["period", "event_time", "att"] and len(rows) == 31
    assert rows[21][1] == "0"


def test_mc_three_blocks(tmp_path):
    out = tmp_path / "mc.json"
    assert main(["mc", "--reps", "2", "--estimators", "ipca,ife,scm", "--set", "t_pre=10",
                 "--set", "n_ctrl=10", "--out", str(out), "--threads", "1"]) == 0
    table = (tmp_path / "mc.table.txt").read_text()
    assert [ln for ln in table.splitlines() if ln.startswith("[")] == ["[IPCA]", "[IFE]", "[SCM]"]
    assert main(["report", str(out), "--out", str(tmp_path / "t.txt")]) == 0
    assert (tmp_path / "t.txt").read_text() == table


def test_mc_threads_do_not_change_bytes(tmp_path):
    base = ["mc", "--reps", "3", "--set", "t_pre=10", "--set", "n_ctrl=10", "--seed", "4"]
    main(base + ["--threads", "1", "--out", str(tmp_path / "a.json")])
    main(base + ["--threads", "2", "--out", str(tmp_path / "b.json")])
    assert digest(tmp_path / "a.json") == digest(tmp_path / "b.json")


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "csc_ipca.cli", "simulate", "--set", "k=99",
                        "--out", str(tmp_path / "x.csv")], capture_output=True, text=True)
    assert r.returncode == 1 and json.loads(r.stderr)["error"]
    r = subprocess.run([sys.executable, "-m", "csc_ipca.cli", "--help"], capture_output=True)
    assert r.returncode == 0
