import csv
import json
import shutil
import subprocess

import numpy as np
import pytest
from scipy import stats

from lfdr import cli
from lfdr.simulate import SimModel, generate


@pytest.fixture(scope="module")
def z_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("in") / "z.txt"
    z = generate(SimModel(), 4).values
    path.write_text("\n".join(f"{v:.10g}" for v in z) + "\n")
    return path


def _analyze(z_file, out, *extra):
    return cli.main(["analyze", "--input", str(z_file), "--range=-4:7.4", "--out", str(out), *extra])


def test_analyze_writes_outputs(z_file, tmp_path, capsys):
    assert _analyze(z_file, tmp_path, "--project", "1,2") == 0
    assert "cases, null central-matching" in capsys.readouterr().out
    assert {p.name for p in tmp_path.iterdir()} == {"cases.csv", "summary.json", "plot.svg"}
    rows = list(csv.DictReader((tmp_path / "cases.csv").open()))
    assert len(rows) == 1500
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["threshold"]["flagged"] == sum(int(r["flagged"]) for r in rows)
    assert summary["null_used"] == "central-matching"
    assert set(summary["nulls"]) == {"theoretical", "central-matching", "mle"}
    assert summary["projections"]["efdr1"]["1"] == pytest.approx(summary["efdr1"], rel=1e-9)
    assert summary["projections"]["efdr1"]["2"] < summary["efdr1"]
    fdr = np.array([float(r["fdr"]) for r in rows])
    flagged = np.array([int(r["flagged"]) for r in rows])
    assert np.all((fdr <= 0.2) == (flagged == 1))
    assert (tmp_path / "plot.svg").read_text().lstrip().startswith("<?xml")


def test_analyze_is_deterministic(z_file, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert _analyze(z_file, a) == 0
    assert _analyze(z_file, b) == 0
    for name in ("cases.csv", "plot.svg"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    ja = json.loads((a / "summary.json").read_text())
    jb = json.loads((b / "summary.json").read_text())
    ja["config"].pop("out")
    jb["config"].pop("out")
    assert ja == jb


@pytest.mark.parametrize("null", ["theoretical", "cm", "mle"])
def test_each_null_runs(z_file, tmp_path, null):
    assert _analyze(z_file, tmp_path, "--null", null) == 0


def test_t_statistics_input(tmp_path):
    rng = np.random.default_rng(2)
    t = np.concatenate([rng.standard_t(20, 900), rng.standard_t(20, 100) + 3.5])
    inp = tmp_path / "t.csv"
    with inp.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["gene", "tstat"])
        w.writerows([[f"g{i}", f"{v:.8g}"] for i, v in enumerate(t)])
    out = tmp_path / "out"
    code = cli.main(["analyze", "--input", str(inp), "--column", "tstat", "--stat", "t", "--df", "20",
                     "--out", str(out)])
    assert code == 0
    rows = list(csv.DictReader((out / "cases.csv").open()))
    expected = stats.norm.ppf(stats.t.cdf(float(f"{t[0]:.8g}"), 20))
    assert float(rows[0]["z"]) == pytest.approx(expected, rel=1e-5)


def test_empty_input_is_usage_error(tmp_path, capsys):
    inp = tmp_path / "empty.txt"
    inp.write_text("")
    out = tmp_path / "out"
    assert _analyze(inp, out) == 1
    assert "empty" in capsys.readouterr().err
    assert not out.exists()


def test_bad_rows_are_data_error(tmp_path, z_file, capsys):
    lines = z_file.read_text().splitlines()
    lines[10:40] = ["oops"] * 30
    inp = tmp_path / "bad.txt"
    inp.write_text("\n".join(lines))
    out = tmp_path / "out"
    assert _analyze(inp, out) == 2
    assert "line 11" in capsys.readouterr().err
    assert not out.exists()


def test_few_bad_rows_are_reported(tmp_path, z_file):
    lines = z_file.read_text().splitlines()
    lines[5] = "NA"
    inp = tmp_path / "one_bad.txt"
    inp.write_text("\n".join(lines))
    out = tmp_path / "out"
    assert _analyze(inp, out) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["input"]["bad_rows"] == [[6, "NA"]]
    assert summary["input"]["cases"] == 1499


@pytest.mark.parametrize("extra", [["--stat", "t"], ["--df", "5"], ["--threshold", "1.5"]])
def test_usage_errors(z_file, tmp_path, extra):
    assert _analyze(z_file, tmp_path / "o", *extra) == 1
    assert not (tmp_path / "o").exists()


def test_missing_input_is_usage_error(tmp_path):
    assert _analyze(tmp_path / "nope.txt", tmp_path / "o") == 1


def test_bad_flag_exits_one(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["analyze", "--input", "x", "--range", "garbage"])
    assert exc.value.code == 1


def test_constant_input_is_data_error(tmp_path):
    inp = tmp_path / "const.txt"
    inp.write_text("1.0\n" * 500)
    assert cli.main(["analyze", "--input", str(inp), "--out", str(tmp_path / "o")]) == 2


def test_simulate_deterministic(tmp_path, capsys):
    assert cli.main(["simulate", "--table", "1", "--reps", "3", "--seed", "5", "--out", str(tmp_path / "a")]) == 0
    first = capsys.readouterr().out
    assert cli.main(["simulate", "--table", "1", "--reps", "3", "--seed", "5", "--out", str(tmp_path / "b")]) == 0
    assert capsys.readouterr().out == first
    assert (tmp_path / "a" / "table1.csv").read_bytes() == (tmp_path / "b" / "table1.csv").read_bytes()
    assert "true_efdr1" in first


def test_simulate_rejects_one_rep():
    assert cli.main(["simulate", "--table", "3", "--reps", "1"]) == 1


def test_project_matches_efdr1(z_file, tmp_path, capsys):
    assert cli.main(["project", "--input", str(z_file), "--range=-4:7.4", "--c", "1,1.5,3",
                     "--out", str(tmp_path)]) == 0
    rows = list(csv.DictReader((tmp_path / "projection.csv").open()))
    assert [r["c"] for r in rows] == ["1", "1.5", "3"]
    vals = [float(r["efdr1"]) for r in rows]
    assert vals[0] > vals[1] > vals[2]
    assert _analyze(z_file, tmp_path / "full") == 0
    summary = json.loads((tmp_path / "full" / "summary.json").read_text())
    assert vals[0] == pytest.approx(summary["efdr1"], rel=1e-5)


@pytest.mark.skipif(shutil.which("lfdr") is None, reason="console script not installed")
def test_console_script_version():
    res = subprocess.run(["lfdr", "--version"], capture_output=True, text=True, check=True)
    assert res.stdout.strip().startswith("lfdr ")
