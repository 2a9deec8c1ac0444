import io
import json

import pytest

from gridcert.caseio import data_dir, emit_case, read_case
from gridcert.cli import EXIT_ERROR, EXIT_INCONCLUSIVE, EXIT_INSOLVABLE, EXIT_OK, RunConfig, UsageError, run


def call(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = run(list(argv), stdout=out, stderr=err)
    return code, out.getvalue(), err.getvalue()


def test_certify_ieee14():
    code, out, _ = call("certify", "--case", "ieee14", "--out", "json")
    data = json.loads(out)
    assert code == EXIT_OK
    assert data["sigma"] == pytest.approx(2.0148, abs=1e-3)
    assert data["multiplier"] == 1.0 and data["case"] == "case14"


def test_certify_insolvable_exits_2():
    code, out, _ = call("certify", "--case", "ieee14", "--multiplier", "5")
    assert code == EXIT_INSOLVABLE
    data = json.loads(out)
    assert data["eta"] == pytest.approx(0.8119, abs=1e-3)
    assert data["insolvable_certified"] is True


def test_margins():
    code, out, _ = call("margins", "--case", "ieee14", "--multiplier", "5", "--out", "json")
    data = json.loads(out)
    assert code == EXIT_INSOLVABLE
    assert data["schema"] == "gridcert.margins"
    assert data["max_multiplier"] == pytest.approx(4.0602, abs=2e-3)


def test_sweep_csv():
    code, out, _ = call("sweep", "--case", "ieee14", "--from", "4.0", "--to", "4.2", "--step", "0.1", "--nr")
    lines = out.splitlines()
    assert code == EXIT_OK
    assert lines[0] == "multiplier,nr_converged,v_lower,sigma,eta,certified_insolvable"
    assert [ln.split(",")[0] for ln in lines[1:]] == ["4.0", "4.1", "4.2"]
    assert [ln.split(",")[1] for ln in lines[1:]] == ["true", "false", "false"]
    assert [ln.split(",")[-1] for ln in lines[1:]] == ["false", "true", "true"]


def test_sweep_multiplier_list_and_jobs():
    a = call("sweep", "--case", "three_bus", "--multipliers", "1,2,3")
    b = call("sweep", "--case", "three_bus", "--multipliers", "1,2,3", "--jobs", "2")
    assert a == b and a[0] == EXIT_OK


def test_solve_and_warm_start(tmp_path):
    first = tmp_path / "base.json"
    assert call("solve", "--case", "ieee14", "--out", str(first))[0] == EXIT_OK
    base = json.loads(first.read_text())
    assert base["converged"] and base["iterations"] <= 6
    code, out, _ = call("solve", "--case", "ieee14", "--warm-from", str(first))
    warm = json.loads(out)
    assert code == EXIT_OK and warm["iterations"] <= 1


def test_pvcurve_csv(tmp_path):
    path = tmp_path / "trace.csv"
    code, _, _ = call("pvcurve", "--case", "ieee14", "--monitor", "14", "--step", "0.2", "--out", str(path))
    assert code == EXIT_OK
    assert path.read_text().splitlines()[0] == "multiplier,v_monitored,branch"


def test_rank_study_human():
    code, out, _ = call("rank-study", "--case", "three_bus", "--out", "human")
    assert code == EXIT_OK
    assert "nullspace rank = 2" in out


def test_case_file_input(tmp_path):
    path = tmp_path / "c.m"
    path.write_text(emit_case(read_case(data_dir() / "case14.m")))
    by_file = json.loads(call("certify", "--case", str(path))[1])
    by_name = json.loads(call("certify", "--case", "ieee14")[1])
    assert by_file["v_lower"] == pytest.approx(by_name["v_lower"], rel=1e-9)


@pytest.mark.parametrize("argv", [
    [],
    ["certify"],
    ["frobnicate", "--case", "ieee14"],
    ["certify", "--case", "ieee14", "--multiplier", "-1"],
    ["certify", "--case", "ieee14", "--gap-tol", "2"],
    ["sweep", "--case", "ieee14"],
    ["sweep", "--case", "ieee14", "--from", "2", "--to", "1", "--step", "0.1"],
    ["sweep", "--case", "ieee14", "--multipliers", "1,x"],
    ["certify", "--case", "ieee14", "--out", "csv", "--format", "json"],
    ["rank-study", "--case", "three_bus", "--out", "csv"],
])
def test_usage_errors_exit_1(argv):
    code, out, err = call(*argv)
    assert code == EXIT_ERROR
    assert out == ""
    assert err.startswith("usage: gridcert")


def test_missing_case_exits_1(tmp_path):
    code, _, err = call("certify", "--case", str(tmp_path / "nope.m"))
    assert code == EXIT_ERROR and err.startswith("error")


def test_numerical_trouble_exits_3(monkeypatch):
    import gridcert.cli as cli
    from gridcert.sdpcert import BarrierOptions

    monkeypatch.setattr(cli.RunConfig, "barrier", property(lambda self: BarrierOptions(max_backtracks=0)))
    assert call("certify", "--case", "ieee14")[0] == EXIT_INCONCLUSIVE
    assert call("sweep", "--case", "ieee14", "--multipliers", "1")[0] == EXIT_INCONCLUSIVE


def test_run_config_validation():
    with pytest.raises(UsageError):
        RunConfig("certify", "ieee14", nr_max_iter=0)
    assert RunConfig("certify", "ieee14") == RunConfig("certify", "ieee14")


@pytest.mark.parametrize("argv", [
    ("certify", "--case", "ieee14", "--multiplier", "4.06"),
    ("sweep", "--case", "ieee14", "--from", "4.05", "--to", "4.07", "--step", "0.01", "--nr"),
    ("solve", "--case", "ieee14", "--out", "human"),
])
def test_repeated_runs_are_byte_identical(argv):
    assert call(*argv) == call(*argv)
