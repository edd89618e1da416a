import json

import pytest

from arwlab.cli import EXIT_ARGS, EXIT_BAND, EXIT_OK, main


def test_simulate_text(capsys):
    assert main(["simulate", "--n", "30", "--trials", "20", "--workers", "1"]) == EXIT_OK
    assert "mean T=" in capsys.readouterr().out


def test_simulate_json_stdout(capsys):
    assert main(["simulate", "--n", "10", "--trials", "5", "--format", "json", "--workers", "1"]) == EXIT_OK
    doc = json.loads(capsys.readouterr().out)
    assert doc["entries"][0]["trials"] == 5


def test_simulate_writes_files(tmp_path):
    out = tmp_path / "o"
    assert main(["simulate", "--n", "12", "--trials", "4", "--decimate", "5", "--out", str(out),
                 "--workers", "1"]) == EXIT_OK
    assert {p.name for p in out.iterdir()} == {"records.csv", "summary.json", "series.csv"}


def test_init_from_file(tmp_path, capsys):
    f = tmp_path / "init.json"
    f.write_text(json.dumps([[0, "red", 3], [5, "blue", 3]]))
    assert main(["simulate", "--n", "3", "--trials", "3", "--init", f"file:{f}", "--workers", "1"]) == EXIT_OK
    f.write_text(json.dumps({"variant": "disjoint", "a": 1}))
    assert main(["simulate", "--n", "3", "--trials", "3", "--init", f"file:{f}", "--workers", "1"]) == EXIT_OK


@pytest.mark.parametrize("argv", [
    ["simulate", "--n", "0"],
    ["simulate", "--n", "5", "--p", "0.9"],
    ["simulate", "--n", "5", "--init", "spread"],
    ["simulate", "--n", "5", "--init", "file:/nonexistent.json"],
    ["simulate", "--n", "5", "--topology", "ring"],
    ["sweep", "--n", "64", "32"],
    ["scenario", "knn-stationary", "--n", "1"],
    ["scenario", "slow-clustered", "--n", "1"],
    ["nonsense"],
])
def test_bad_arguments_exit_1(argv):
    with pytest.raises(SystemExit) as ei:
        raise SystemExit(main(argv))
    assert ei.value.code == EXIT_ARGS


def test_sweep_pass(capsys):
    assert main(["sweep", "--n", "64", "128", "--trials", "50", "--workers", "1"]) == EXIT_OK
    assert "band" in capsys.readouterr().out


def test_band_failure_exit_2():
    # at tiny n the slow scenario cannot clear 3 n ln n in nearly all trials
    assert main(["scenario", "slow-clustered", "--n", "8", "--trials", "50"]) == EXIT_BAND


def test_knn_scenario_json(capsys, tmp_path):
    code = main(["scenario", "knn-stationary", "--n", "256", "--trials", "100", "--format", "json",
                 "--out", str(tmp_path)])
    doc = json.loads(capsys.readouterr().out)
    assert code in (EXIT_OK, EXIT_BAND) and doc["abelian_ok"] and (tmp_path / "report.json").exists()


def test_oracle_bake_to_path(tmp_path, capsys):
    out = tmp_path / "c.json"
    assert main(["oracle-bake", "--out", str(out)]) == EXIT_OK
    assert json.loads(out.read_text())["format"] == "arwlab-constants"


def test_audit_bias(capsys):
    code = main(["audit", "bias", "--n", "128", "--trials", "50", "--init", "clustered", "--workers", "1"])
    assert code == EXIT_OK
    assert "red_not_good" in capsys.readouterr().out
