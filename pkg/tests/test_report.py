import csv
import io
import json
import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from gridcert.continuation import trace_pv_curve
from gridcert.powerflow import flat_start, nr_solve
from gridcert.report import SWEEP_COLUMNS, TRACE_COLUMNS, emit_report, num, sweep_csv, to_payload
from gridcert.sdpcert import SweepRow, certify, rank_study


@pytest.fixture(scope="module")
def cert14(ieee14):
    return certify(ieee14)


def test_certificate_csv_header(cert14):
    text = emit_report(cert14, "csv", multiplier=1.0)
    lines = text.splitlines()
    assert lines[0] == "multiplier,nr_converged,v_lower,sigma,eta,certified_insolvable"
    assert len(lines) == 2
    row = dict(zip(SWEEP_COLUMNS, lines[1].split(",")))
    assert float(row["sigma"]) == cert14.sigma
    assert row["certified_insolvable"] == "false" and row["nr_converged"] == ""


def test_trace_csv_header(ieee14):
    trace = trace_pv_curve(ieee14, step=0.2)
    rows = list(csv.reader(io.StringIO(emit_report(trace, "csv", ieee14))))
    assert tuple(rows[0]) == TRACE_COLUMNS == ("multiplier", "v_monitored", "branch")
    assert {r[2] for r in rows[1:]} == {"upper", "lower"}
    assert len(rows) == len(trace.points) + 1


def test_empty_sweep_is_header_only():
    assert sweep_csv([]) == ",".join(SWEEP_COLUMNS) + "\n"
    assert emit_report([], "csv") == ",".join(SWEEP_COLUMNS) + "\n"


def test_certificate_json_round_trips(cert14):
    data = json.loads(emit_report(cert14, "json", case="ieee14", multiplier=1.0))
    assert data["schema"] == "gridcert.certificate" and data["version"] == 1
    for key in ("v_lower", "sigma", "eta"):
        assert data[key] == getattr(cert14, key)
    assert data["a_eigenvalues"] == [float(x) for x in cert14.a_eigenvalues]
    assert data["insolvable_certified"] is False


def test_human_has_verdict_and_margins(cert14):
    text = emit_report(cert14, "human")
    assert text.splitlines()[0] == cert14.verdict
    assert "sigma" in text and "eta" in text


def test_solve_report_json(ieee14):
    rep = nr_solve(ieee14, flat_start(ieee14))
    data = json.loads(emit_report(rep, "json", ieee14))
    assert data["schema"] == "gridcert.solve"
    assert data["state"]["v"] == list(rep.state.v)
    assert data["state"]["bus_ids"] == [b.id for b in ieee14.buses]
    assert data["trace"] == list(rep.trace)


def test_rank_study_human(gap_case):
    text = emit_report(rank_study(gap_case), "human")
    assert "nullspace rank = 4" in text
    assert "several pairs coincide: yes" in text


def test_sweep_failure_row_renders():
    rows = [SweepRow(1.0, None, None, None, None, None, None, "NumericalTrouble", "no step")]
    assert sweep_csv(rows).splitlines()[1] == "1.0,,,,,"
    data = json.loads(emit_report(rows, "json"))
    assert data["rows"][0]["error"] == "no step"


def test_unknown_layouts_rejected(cert14):
    with pytest.raises(ValueError):
        emit_report(cert14, "xml")
    with pytest.raises(ValueError):
        emit_report({"a": 1}, "csv")
    with pytest.raises(TypeError):
        to_payload(object())


def test_nonfinite_values_are_strings():
    assert num(math.inf) == "inf" and num(-math.inf) == "-inf" and num(math.nan) == "nan"
    data = json.loads(emit_report({"x": math.inf}, "json", kind="probe"))
    assert data == {"schema": "gridcert.probe", "version": 1, "x": "inf"}


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_num_round_trips(x):
    s = num(x)
    assert float(s) == x
    assert len(s.lstrip("-").replace(".", "").split("e")[0].lstrip("0")) <= 17


@given(st.lists(st.floats(allow_nan=False, allow_infinity=False), min_size=5, max_size=5))
def test_sweep_csv_round_trips(vals):
    row = SweepRow(vals[0], True, vals[1], vals[2], vals[3], False)
    parsed = next(csv.DictReader(io.StringIO(sweep_csv([row]))))
    assert float(parsed["multiplier"]) == vals[0]
    assert float(parsed["v_lower"]) == vals[1]
    assert float(parsed["eta"]) == vals[3]
