import shutil

import numpy as np
import pytest

from congestion_lab.cli import build_parser, main
from congestion_lab.experiment_runner import read_results_csv
from congestion_lab.series_store import IntensityMatrix


@pytest.fixture
def synth10(tmp_path, monkeypatch):
    """A 10-frame synthetic day (one frame every 108 minutes)."""
    monkeypatch.chdir(tmp_path)
    assert main(["synth", "--out", "s", "--cadence", "6480", "--seed", "4", "--workers", "1"]) == 0
    return tmp_path / "s"


def _extract(s, *extra):
    return main(["extract", "--frames", str(s / "frames"), "--registry", str(s / "registry.csv"),
                 "--mask", str(s / "mask.png"), "--palette", str(s / "palette.toml"), "--workers", "2",
                 "--out", "ex.csv", *extra])


def test_extract_assemble_matches_truth(synth10):
    assert _extract(synth10) == 0
    lines = open("ex.csv").read().splitlines()
    assert len({l.split(",")[0] for l in lines[1:]}) == 10
    assert main(["assemble", "--extraction", "ex.csv", "--registry", str(synth10 / "registry.csv"),
                 "--mask", str(synth10 / "mask.png"), "--out", "m.csv"]) == 0
    assert IntensityMatrix.load_csv("m.csv") == IntensityMatrix.load_csv(synth10 / "truth.csv")


def test_corrupt_frame(synth10, capsys):
    first = sorted((synth10 / "frames").iterdir())[0]
    first.write_bytes(b"garbage")
    assert _extract(synth10) == 3
    assert _extract(synth10, "--skip-bad") == 0
    assert "9 frames (1 skipped)" in capsys.readouterr().out


def test_missing_inputs_exit_2(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(["extract", "--frames", "nowhere", "--registry", "r", "--mask", "m"]) == 2
    assert main(["grid", "--models", "HA"]) == 2
    with pytest.raises(SystemExit) as info:
        main(["grid", "--no-such-flag"])
    assert info.value.code == 2


@pytest.fixture
def month(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(["synth", "--out", "mo", "--days", "30", "--intersections", "3", "--no-render"]) == 0
    return tmp_path / "mo"


def test_grid_report_and_determinism(month, capsys):
    args = ["grid", "--matrix", str(month / "truth.csv"), "--models", "HA", "--intervals", "5",
            "--seqs", "15,30", "--preds", "5,15", "--save-predictions"]
    assert main(args + ["--out", "r1", "--workers", "1"]) == 0
    assert main(args + ["--out", "r2", "--workers", "4"]) == 0
    for name in ("results.csv", "top_k.csv", "manifest.txt", "predictions.csv"):
        assert open(f"r1/{name}", "rb").read() == open(f"r2/{name}", "rb").read()
    rows = read_results_csv("r1/results.csv")
    assert sum(r.node == "AGGREGATE" for r in rows) == 4
    capsys.readouterr()
    assert main(["report", "--results", "r1/results.csv", "--predictions", "r1/predictions.csv",
                 "--plot-limit", "2", "--out", "rep"]) == 0
    out = capsys.readouterr().out
    assert "| 5 | 15 | 5 |" in out and "**" in out
    svgs = sorted((month.parent / "rep" / "plots").glob("*.svg"))
    assert len(svgs) == 2 and svgs[0].read_text().lstrip().startswith("<?xml")


def test_report_empty_and_schema(tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    (tmp_path / "e.csv").write_text("")
    assert main(["report", "--results", "e.csv"]) == 0
    assert "no results" in capsys.readouterr().out
    (tmp_path / "b.csv").write_text("interval_min,seq_min\n")
    assert main(["report", "--results", "b.csv"]) == 4
    assert "pred_min" in capsys.readouterr().err


def test_report_groups_by_interval_sequence_horizon(tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    header = "interval_min,seq_min,pred_min,model,split,node,rmse,mae,corr,n,duration_ms,fingerprint\n"
    body = "".join(f"{i},{s},{p},HA,x,AGGREGATE,{r},1,0.5,1,,f\n"
                   for i, s, p, r in [(5, 15, 5, 90), (0.5, 45, 5, 73.13), (0.5, 15, 30, 80), (1, 60, 5, 75)])
    (tmp_path / "r.csv").write_text(header + body)
    assert main(["report", "--results", "r.csv"]) == 0
    lines = [l for l in capsys.readouterr().out.splitlines() if l.startswith("| ") and l[2].isdigit()]
    assert [l.split(" | ")[:3] for l in lines] == [["| 0.5", "15", "30"], ["| 0.5", "45", "5"],
                                                  ["| 1", "60", "5"], ["| 5", "15", "5"]]
    assert "**73.13**" in lines[1]


def test_train_predict_evaluate_with_config(month, tmp_path):
    (tmp_path / "c.toml").write_text(f'[inputs]\nmatrix = "{month / "truth.csv"}"\n'
                                     '[model]\nmodels = "ARIMA"\ninterval = 5\nseq = 30\npred = 15\n'
                                     'arima-order = [2, 0, 0]\n')
    assert main(["train", "--config", "c.toml", "--node", "N01", "--out", "mods"]) == 0
    import json
    saved = json.load(open("mods/ARIMA_N01.json"))
    assert saved["params"]["order"] == [2, 0, 0] and saved["grid"] == [5, 30, 15]
    assert main(["train", "--config", "c.toml", "--node", "N01", "--arima-order", "1,0,0",
                 "--out", "mods2"]) == 0
    assert json.load(open("mods2/ARIMA_N01.json"))["params"]["order"] == [1, 0, 0]
    assert main(["predict", "--matrix", str(month / "truth.csv"), "--model-file", "mods/ARIMA_N01.json",
                 "--split", "first-k-train:20", "--out", "p.csv"]) == 0
    assert main(["evaluate", "--predictions", "p.csv", "--out", "e.csv"]) == 0
    assert open("e.csv").read().splitlines()[-1].startswith("AGGREGATE,")
    (tmp_path / "bad.toml").write_text("mystery = 1\n")
    assert main(["train", "--config", "bad.toml"]) == 2


def test_config_table_prefixes_keys(month, tmp_path):
    (tmp_path / "c.toml").write_text('[svr]\nc = 2.5\nmax-rows = 120\n[arima]\norder = "2,0,0"\n')
    assert main(["train", "--config", "c.toml", "--matrix", str(month / "truth.csv"), "--models", "SVR",
                 "--interval", "5", "--node", "N00", "--out", "m"]) == 0
    import json
    params = json.load(open("m/SVR_N00.json"))["params"]
    assert params["C"] == 2.5 and params["n_train"] <= 120
    (tmp_path / "bad.toml").write_text("[svr]\nbogus = 1\n")
    assert main(["train", "--config", "bad.toml"]) == 2


def test_numerical_failure_exit_5(month):
    assert main(["train", "--matrix", str(month / "truth.csv"), "--models", "SVR", "--interval", "5",
                 "--seq", "30", "--pred", "5", "--fit-timeout", "1e-9", "--node", "N00"]) == 5


def test_split_inconsistency_exit_3(month, tmp_path):
    (tmp_path / "sp.txt").write_text("[train]\n2019-12-01\n[test]\n2019-11-02\n")
    assert main(["grid", "--matrix", str(month / "truth.csv"), "--models", "HA",
                 "--split-file", "sp.txt"]) == 3


def test_workers_env_fallback(monkeypatch):
    from congestion_lab.cli import _workers
    args = build_parser().parse_args(["grid"])
    monkeypatch.setenv("CONGESTION_LAB_WORKERS", "3")
    assert _workers(args) == 3
    args.workers = 2
    assert _workers(args) == 2


def test_help_documents_every_flag(capsys):
    parser = build_parser()
    sub = parser._subparsers._group_actions[0].choices
    assert set(sub) == {"extract", "assemble", "resample", "train", "predict", "evaluate", "grid",
                        "synth", "report"}
    for name, p in sub.items():
        text = p.format_help()
        for action in p._actions:
            for opt in action.option_strings:
                assert opt in text, (name, opt)
            if action.option_strings and action.dest != "help":
                assert action.help, (name, action.dest)


def test_resample_command(month):
    assert main(["resample", "--matrix", str(month / "truth.csv"), "--interval", "5", "--out", "r.csv"]) == 0
    assert len(IntensityMatrix.load_csv("r.csv")) == 30 * 216
