"""Text renderings of solver results: JSON, CSV and a short human format.

Every float is written with ``repr``, the shortest decimal string that parses
back to the identical double (never more than 17 significant digits), so all
three formats round-trip losslessly.  Non-finite values become the strings
``"inf"``, ``"-inf"`` and ``"nan"`` in JSON, which has no literal for them.
"""

from __future__ import annotations

import csv
import io
import json
import math
from typing import Any, Iterable

import numpy as np

from .continuation import ContinuationTrace
from .netmodel import NetworkModel
from .powerflow import SolveReport
from .sdpcert import CertificateResult, RankStudy, SweepRow

__all__ = [
    "SCHEMA_VERSION",
    "SWEEP_COLUMNS",
    "TRACE_COLUMNS",
    "FORMATS",
    "num",
    "sweep_csv",
    "trace_csv",
    "emit_report",
    "to_payload",
]

SCHEMA_VERSION = 1
SWEEP_COLUMNS = ("multiplier", "nr_converged", "v_lower", "sigma", "eta", "certified_insolvable")
TRACE_COLUMNS = ("multiplier", "v_monitored", "branch")
FORMATS = ("json", "csv", "human")


def num(x: float | None) -> str:
    if x is None:
        return ""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(x)


def _flag(b: bool | None) -> str:
    return "" if b is None else ("true" if b else "false")


def _jsonable(x: Any) -> Any:
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return float(x) if math.isfinite(x) else num(x)
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in x]
    return x


def _csv(header: Iterable[str], rows: Iterable[Iterable[str]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def sweep_csv(rows: Iterable[SweepRow]) -> str:
    return _csv(SWEEP_COLUMNS, (
        (num(r.multiplier), _flag(r.nr_converged), num(r.v_lower), num(r.sigma), num(r.eta),
         _flag(r.certified_insolvable)) for r in rows))


def trace_csv(trace: ContinuationTrace, model: NetworkModel) -> str:
    v = trace.monitored_voltages(model)
    return _csv(TRACE_COLUMNS, ((num(p.multiplier), num(x), p.branch) for p, x in zip(trace.points, v)))


def to_payload(result: Any, model: NetworkModel | None = None, **context: Any) -> dict:
    """A JSON-ready dict with a ``schema`` tag naming the result kind and version."""
    if isinstance(result, CertificateResult):
        body = {
            "v_lower": result.v_lower,
            "v0": result.v0,
            "sigma": result.sigma,
            "eta": result.eta,
            "insolvable_certified": result.insolvable_certified,
            "nullspace_rank": result.nullspace_rank,
            "solution_indicator": result.solution_indicator,
            "status": result.status.value,
            "verdict": result.verdict,
            "a_eigenvalues": list(result.a_eigenvalues),
        }
        kind = "certificate"
    elif isinstance(result, SolveReport):
        body = {
            "converged": result.converged,
            "iterations": result.iterations,
            "final_mismatch": result.final_mismatch,
            "trace": list(result.trace),
            "state": None if result.state is None else {
                "bus_ids": [b.id for b in model.buses] if model is not None else None,
                "v": list(result.state.v),
                "delta": list(result.state.delta),
            },
        }
        kind = "solve"
    elif isinstance(result, ContinuationTrace):
        body = {
            "monitored_bus": result.monitored_bus,
            "nose_multiplier": result.nose_multiplier,
            "step_underflow": result.step_underflow,
            "points": [{"multiplier": p.multiplier, "v_monitored": v, "branch": p.branch}
                       for p, v in zip(result.points, result.monitored_voltages(model))],
        }
        kind = "pvcurve"
    elif isinstance(result, RankStudy):
        cc = result.cross_check
        body = {
            "nullspace_rank": result.nullspace_rank,
            "v_lower": result.v_lower,
            "status": result.status.value,
            "eigenvalues": list(result.eigenvalues),
            "cross_check": None if cc is None else {
                "nominal_count": cc.nominal_count,
                "scale_tol": cc.scale_tol,
                "events": [{"scale": s, "count_above": a, "count_below": b} for s, a, b in cc.events],
                "pairs_at_last": cc.pairs_at_last,
                "multiple_pairs_coincide": cc.multiple_pairs_coincide,
            },
        }
        kind = "rank_study"
    elif isinstance(result, list) and all(isinstance(r, SweepRow) for r in result):
        body = {"rows": [{
            "multiplier": r.multiplier,
            "nr_converged": r.nr_converged,
            "v_lower": r.v_lower,
            "sigma": r.sigma,
            "eta": r.eta,
            "certified_insolvable": r.certified_insolvable,
            "nullspace_rank": r.nullspace_rank,
            "status": r.status,
            "error": r.error,
        } for r in result]}
        kind = "sweep"
    elif isinstance(result, dict):
        body, kind = dict(result), context.pop("kind", "generic")
    else:
        raise TypeError(f"no report layout for {type(result).__name__}")
    return _jsonable({"schema": f"gridcert.{kind}", "version": SCHEMA_VERSION, **context, **body})


def _human(payload: dict) -> str:
    kind = payload["schema"].split(".", 1)[1]
    lines = []
    if kind == "certificate":
        lines.append(payload["verdict"])
        lines.append(f"V_lower = {num(payload['v_lower'])} pu (V0 = {num(payload['v0'])} pu)")
        lines.append(f"voltage margin sigma = {num(payload['sigma'])}")
        lines.append(f"injection margin eta = {num(payload['eta'])}")
        lines.append(f"nullspace rank = {payload['nullspace_rank']}, solver status {payload['status']}")
    elif kind == "sweep":
        lines.append(" ".join(f"{c:>22}" for c in SWEEP_COLUMNS))
        for r in payload["rows"]:
            cells = [num(r["multiplier"]), _flag(r["nr_converged"]), num(r["v_lower"]), num(r["sigma"]),
                     num(r["eta"]), _flag(r["certified_insolvable"])]
            line = " ".join(f"{c:>22}" for c in cells)
            lines.append(line + (f"  ({r['error']})" if r["error"] else ""))
    elif kind == "solve":
        state = "converged" if payload["converged"] else "did not converge"
        lines.append(f"Newton-Raphson {state} after {payload['iterations']} iterations, "
                     f"max mismatch {num(payload['final_mismatch'])}")
        if payload["state"] is not None:
            ids = payload["state"]["bus_ids"] or range(1, len(payload["state"]["v"]) + 1)
            for bid, v, d in zip(ids, payload["state"]["v"], payload["state"]["delta"]):
                lines.append(f"  bus {bid:>4}  |V| = {num(v)}  angle = {num(d)} rad")
    elif kind == "pvcurve":
        lines.append(f"nose at multiplier {num(payload['nose_multiplier'])}; "
                     f"bus {payload['monitored_bus']} monitored; {len(payload['points'])} points")
        if payload["step_underflow"]:
            lines.append("trace stopped early: step size underflow")
    elif kind == "rank_study":
        lines.append(f"nullspace rank = {payload['nullspace_rank']}, V_lower = {num(payload['v_lower'])}, "
                     f"solver status {payload['status']}")
        ev = payload["eigenvalues"]
        lines.append("smallest eigenvalues of A: " + ", ".join(num(x) for x in ev[:8]))
        cc = payload["cross_check"]
        if cc is not None:
            for e in cc["events"]:
                lines.append(f"  solutions {e['count_above']} -> {e['count_below']} "
                             f"at controlled-voltage scale {num(e['scale'])}")
            same = "yes" if cc["multiple_pairs_coincide"] else "no"
            lines.append(f"pairs vanishing at the last scale: {cc['pairs_at_last']} (several pairs coincide: {same})")
    else:
        for k, v in payload.items():
            if k not in ("schema", "version"):
                lines.append(f"{k} = {num(v) if isinstance(v, float) else v}")
    return "\n".join(lines) + "\n"


def emit_report(result: Any, fmt: str = "json", model: NetworkModel | None = None, **context: Any) -> str:
    """Render ``result`` as ``json``, ``csv`` or ``human`` text.

    CSV exists for sweeps, traces and certificates (a one-row sweep table,
    which needs ``multiplier`` in ``context``); other results raise ValueError.
    """
    if fmt not in FORMATS:
        raise ValueError(f"unknown format {fmt!r}; choose from {', '.join(FORMATS)}")
    if fmt == "csv":
        if isinstance(result, list):
            return sweep_csv(result)
        if isinstance(result, ContinuationTrace):
            return trace_csv(result, model)
        if isinstance(result, CertificateResult):
            row = SweepRow(context.get("multiplier", 1.0), None, result.v_lower, result.sigma, result.eta,
                           result.insolvable_certified)
            return sweep_csv([row])
        raise ValueError(f"no CSV layout for {type(result).__name__}")
    payload = to_payload(result, model, **context)
    if fmt == "json":
        return json.dumps(payload, indent=2, allow_nan=False) + "\n"
    return _human(payload)
