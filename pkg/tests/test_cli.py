import csv
import json

import pytest

from twolayer.cli import main


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["gen-grid", "--rows", "4", "--cols", "6", "--out", str(d / "net.json"),
                 "--demand-out", str(d / "dem.json"), "--origin-rate", "900"]) == 0
    cfg = {"network": "net.json", "demand": "dem.json", "horizon": 2700, "mode": "pc+mp",
           "mp": {"selection": "targeted", "rate": 0.25}}
    (d / "cfg.json").write_text(json.dumps(cfg))
    return d


def test_gen_grid(workdir):
    net = json.loads((workdir / "net.json").read_text())
    assert len(net["partition"]["regions"]) == 3
    assert json.loads((workdir / "dem.json").read_text())["entries"]


def test_simulate(workdir, capsys):
    assert main(["simulate", "--config", str(workdir / "cfg.json"), "--out", str(workdir / "run")]) == 0
    printed = json.loads(capsys.readouterr().out)
    assert printed["mode"] == "pc+mp"
    assert json.loads((workdir / "run" / "summary.json").read_text())["vht"] == printed["vht"]


def test_select_nodes(workdir, capsys):
    out = workdir / "rank.csv"
    assert main(["select-nodes", "--config", str(workdir / "cfg.json"), "--out", str(out), "--rate", "0.1",
                 "--weights", "-1", "-1", "-1"]) == 0
    printed = json.loads(capsys.readouterr().out)
    rows = list(csv.DictReader(open(out)))
    assert printed["nodes"] == [r["node_id"] for r in rows[:len(printed["nodes"])]]


def test_calibrate(workdir, capsys):
    out = workdir / "cal.csv"
    assert main(["calibrate", "--config", str(workdir / "cfg.json"), "--out", str(out),
                 "--alpha", "0", "--beta=-1,1", "--gamma", "0"]) == 0
    assert json.loads(capsys.readouterr().out)["points"] == 2
    assert len(out.read_text().splitlines()) == 3


def test_perturb_demand(workdir):
    out = workdir / "pert.json"
    assert main(["perturb-demand", "--demand", str(workdir / "dem.json"), "--cv", "0.2", "--seed", "4",
                 "--out", str(out)]) == 0
    a = json.loads((workdir / "dem.json").read_text())["entries"]
    b = json.loads(out.read_text())["entries"]
    assert len(a) == len(b) and a != b


def test_sweep(workdir):
    out = workdir / "sweep"
    assert main(["sweep", "--config", str(workdir / "cfg.json"), "--out", str(out), "--modes", "ftc,mp",
                 "--rates", "0.25", "--selections", "all", "--seeds", "0-1"]) == 0
    rows = list(csv.DictReader(open(out / "sweep.csv")))
    assert [(r["mode"], r["seed"]) for r in rows] == [("ftc", "0"), ("ftc", "1"), ("mp", "0"), ("mp", "1")]
    assert rows[0]["delta_vht_pct"] == "0.0"


def test_errors_exit_with_code_2(workdir, tmp_path, capsys):
    assert main(["simulate", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"network": str(workdir / "net.json"), "mode": "warp"}))
    assert main(["simulate", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert main(["perturb-demand", "--demand", str(workdir / "dem.json"), "--cv", "-1", "--out",
                 str(tmp_path / "x.json")]) == 2
    assert "error:" in capsys.readouterr().err
    with pytest.raises(SystemExit) as exc:
        main(["simulate"])
    assert exc.value.code == 2
