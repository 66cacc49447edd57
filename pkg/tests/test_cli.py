import csv
import io
import json
import subprocess
import sys

import pytest

from bmdlink.cli import EXIT_IO, EXIT_NUMERICAL, EXIT_OK, EXIT_VALIDATION, main

BROMO_CSV = "dose,n,events\n0,50,1\n62.5,50,9\n125,50,8\n250,50,14\n"


@pytest.fixture
def bromo_csv(tmp_path):
    p = tmp_path / "bromo.csv"
    p.write_text(BROMO_CSV)
    return p


def run_cli(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def numbers(obj, prefix=""):
    """Flatten a JSON tree into ``{path: value}`` for numeric leaves."""
    out = {}
    if isinstance(obj, dict):
        for k, v in obj.items():
            out.update(numbers(v, f"{prefix}.{k}" if prefix else k))
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            out.update(numbers(v, f"{prefix}[{i}]"))
    elif isinstance(obj, (int, float)) and not isinstance(obj, bool):
        out[prefix] = float(obj)
    return out


class TestFit:
    def test_report(self, capsys, bromo_csv):
        code, out, _ = run_cli(capsys, "fit", bromo_csv, "--deterministic")
        assert code == EXIT_OK
        rep = json.loads(out)
        assert set(rep["fit"]["delta_hat"]) == {"beta0", "beta1", "alpha1", "alpha2"}
        assert rep["fit"]["standard_errors"] is not None
        assert rep["fit"]["loglik"] < 0
        assert "timestamp" not in rep and rep["version"]

    def test_timestamp_by_default(self, capsys, bromo_csv):
        _, out, _ = run_cli(capsys, "fit", bromo_csv)
        assert "timestamp" in json.loads(out)

    def test_empty_file(self, capsys, tmp_path):
        p = tmp_path / "empty.csv"
        p.write_text("")
        code, _, err = run_cli(capsys, "fit", p)
        assert code == EXIT_VALIDATION and "empty" in err

    def test_malformed_row(self, capsys, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("dose,n,events\n0,50,1\n1,50,x\n2,50,3\n")
        code, _, err = run_cli(capsys, "fit", p)
        assert code == EXIT_VALIDATION and "row 3" in err

    def test_missing_file(self, capsys, tmp_path):
        code, _, _ = run_cli(capsys, "fit", tmp_path / "nope.csv")
        assert code == EXIT_IO

    def test_unwritable_output(self, capsys, bromo_csv, tmp_path):
        code, _, _ = run_cli(capsys, "fit", bromo_csv, "-o", tmp_path / "no" / "dir" / "out.json")
        assert code == EXIT_IO

    def test_bad_bmr(self, capsys, bromo_csv):
        code, _, _ = run_cli(capsys, "bmd", bromo_csv, "--bmr", "1.5")
        assert code == EXIT_VALIDATION

    def test_unknown_flag(self, capsys, bromo_csv):
        assert run_cli(capsys, "fit", bromo_csv, "--bogus")[0] == EXIT_VALIDATION


class TestBmdl:
    def test_bt_requires_seed(self, capsys, bromo_csv):
        code, _, err = run_cli(capsys, "bmdl", bromo_csv, "--methods", "BT")
        assert code == EXIT_VALIDATION and "seed" in err

    def test_empty_methods_means_all(self, capsys, bromo_csv):
        code, out, _ = run_cli(capsys, "bmdl", bromo_csv, "--methods", "--seed", "3", "--replicates", "200",
                               "--bmr", "0.1", "--deterministic")
        assert code == EXIT_OK
        rep = json.loads(out)
        assert rep["inputs"]["methods"] == ["ML", "LR", "ST", "BT"]
        assert [e["method"] for e in rep["bmdl"]] == ["ML", "LR", "ST", "BT"]
        for e in rep["bmdl"]:
            assert 0 < e["bmdl"] <= e["bmd"]

    def test_decreasing_data_is_numerical_failure(self, capsys, tmp_path):
        p = tmp_path / "down.csv"
        p.write_text("dose,n,events\n0,50,30\n1,50,20\n2,50,10\n3,50,5\n")
        code, _, _ = run_cli(capsys, "bmdl", p, "--methods", "LR")
        assert code == EXIT_NUMERICAL

    def test_byte_identical(self, capsys, bromo_csv):
        argv = ("compare", bromo_csv, "--methods", "ML", "LR", "--bmr", "0.1", "--deterministic")
        a = run_cli(capsys, *argv)[1]
        b = run_cli(capsys, *argv)[1]
        assert a == b

    def test_csv_matches_json(self, capsys, bromo_csv):
        argv = ("bmdl", bromo_csv, "--methods", "ML", "ST", "--bmr", "0.01", "--deterministic")
        js = json.loads(run_cli(capsys, *argv, "--format", "json")[1])
        rows = list(csv.reader(io.StringIO(run_cli(capsys, *argv, "--format", "csv")[1])))
        assert rows[0] == ["key", "value"]
        from_csv = {}
        for k, v in rows[1:]:
            try:
                from_csv[k] = float(v)
            except ValueError:
                pass
        assert numbers(js) == from_csv

    def test_json_round_trip(self, capsys, bromo_csv):
        out = run_cli(capsys, "bmd", bromo_csv, "--deterministic")[1]
        assert json.dumps(json.loads(out), indent=2) + "\n" == out


class TestConfig:
    def test_file_and_override(self, capsys, bromo_csv, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("# settings\nbmr = 0.05, 0.1\nlevel = 0.9\nmethods = LR\ndeterministic = true\n")
        rep = json.loads(run_cli(capsys, "bmdl", bromo_csv, "--config", cfg)[1])
        assert rep["inputs"]["bmr"] == [0.05, 0.1] and rep["inputs"]["level"] == 0.9
        assert "timestamp" not in rep
        rep = json.loads(run_cli(capsys, "bmdl", bromo_csv, "--config", cfg, "--bmr", "0.2")[1])
        assert rep["inputs"]["bmr"] == [0.2] and rep["inputs"]["methods"] == ["LR"]

    def test_unknown_key(self, capsys, bromo_csv, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("colour = blue\n")
        code, _, err = run_cli(capsys, "fit", bromo_csv, "--config", cfg)
        assert code == EXIT_VALIDATION and "colour" in err


class TestPlotData:
    def test_two_hundred_points(self, capsys, bromo_csv, tmp_path):
        plot = tmp_path / "curve.csv"
        assert run_cli(capsys, "fit", bromo_csv, "--plot-data", plot)[0] == EXIT_OK
        rows = list(csv.reader(plot.open()))
        assert rows[0] == ["dose", "risk"] and len(rows) == 201
        doses = [float(r[0]) for r in rows[1:]]
        risks = [float(r[1]) for r in rows[1:]]
        assert doses[0] == 0.0 and doses[-1] == 250.0
        assert all(0 < r < 1 for r in risks)


class TestSimulate:
    def test_requires_seed(self, capsys):
        assert run_cli(capsys, "simulate", "--scenarios", "3")[0] == EXIT_VALIDATION

    def test_single_replicate(self, capsys):
        code, out, _ = run_cli(capsys, "simulate", "--scenarios", "3", "--n", "50", "--bmr", "0.1",
                               "--replicates", "1", "--seed", "1", "--deterministic")
        assert code == EXIT_OK
        rows = json.loads(out)["rows"]
        assert [r["method"] for r in rows] == ["FL", "MA"]
        assert all(r["replicates_used"] == 1 and r["value"] >= 0 for r in rows)

    def test_full_grid_csv(self, capsys, tmp_path):
        out = tmp_path / "grid.csv"
        code, _, _ = run_cli(capsys, "simulate", "--replicates", "1", "--seed", "2", "--format", "csv",
                             "-o", out, "--deterministic")
        assert code == EXIT_OK
        rows = list(csv.DictReader(out.open()))
        cases = {(r["scenario"], r["n"], r["bmr"]) for r in rows}
        assert len(cases) == 36 and len(rows) == 72

    def test_coverage_columns(self, capsys):
        code, out, _ = run_cli(capsys, "simulate", "--study", "coverage", "--scenarios", "3", "--n", "50",
                               "--bmr", "0.1", "--methods", "LR", "--replicates", "2", "--seed", "4")
        assert code == EXIT_OK
        rows = json.loads(out)["rows"]
        assert rows[0]["study"] == "coverage" and 0 <= rows[0]["value"] <= 1

    def test_bad_scenario(self, capsys):
        assert run_cli(capsys, "simulate", "--scenarios", "9", "--seed", "1")[0] == EXIT_VALIDATION


def test_module_entry_point(bromo_csv):
    res = subprocess.run([sys.executable, "-m", "bmdlink", "bmd", str(bromo_csv), "--deterministic"],
                         capture_output=True, text=True, check=False)
    assert res.returncode == 0 and json.loads(res.stdout)["bmd"][0]["bmr"] == 0.01
