"""Command line entry point: ``gridcert <subcommand> --case CASE [options]``.

Exit codes are shared by all subcommands:

* 0  success
* 1  error (bad input, unreadable case, usage error)
* 2  certified insolvable (``certify`` and ``margins``)
* 3  inconclusive: the dual solver reported numerical trouble
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .caseio import BUILTIN_NAMES, CaseError, load_case
from .continuation import BaseCaseUnsolvable, scale_controlled_voltages, trace_pv_curve
from .netmodel import NetworkError, NetworkModel, scale_injections
from .powerflow import GuardExceeded, PowerFlowState, SingularJacobian, flat_start, nr_solve
from .report import FORMATS, emit_report
from .sdpcert import BarrierOptions, InconclusiveCertificate, certify, rank_study, sweep

__all__ = ["RunConfig", "run", "main", "EXIT_OK", "EXIT_ERROR", "EXIT_INSOLVABLE", "EXIT_INCONCLUSIVE"]

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INSOLVABLE = 2
EXIT_INCONCLUSIVE = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors, which would collide with "certified insolvable".
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


@dataclass(frozen=True)
class RunConfig:
    command: str
    case: str
    multiplier: float = 1.0
    fmt: str = "json"
    out: Path | None = None
    nr_tol: float = 1e-8
    nr_max_iter: int = 50
    gap_tol: float = 1e-7
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.multiplier > 0:
            raise UsageError(f"--multiplier must be positive, got {self.multiplier}")
        if not 0 < self.nr_tol < 1:
            raise UsageError(f"--tol must lie in (0, 1), got {self.nr_tol}")
        if not 1 <= self.nr_max_iter <= 1000:
            raise UsageError(f"--max-iter must lie in [1, 1000], got {self.nr_max_iter}")
        if not 0 < self.gap_tol < 1:
            raise UsageError(f"--gap-tol must lie in (0, 1), got {self.gap_tol}")

    @property
    def barrier(self) -> BarrierOptions:
        return BarrierOptions(gap_tol=self.gap_tol)


def _parser() -> _Parser:
    p = _Parser(prog="gridcert", description="Power flow insolvability certificates and margins.")
    p.add_argument("--version", action="version", version=f"gridcert {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, default_fmt="json"):
        sp.add_argument("--case", required=True,
                        help=f"case file path or builtin name ({', '.join(BUILTIN_NAMES)})")
        sp.add_argument("--multiplier", type=float, default=1.0, help="uniform injection multiplier")
        sp.add_argument("--format", choices=FORMATS, default=None, help=f"output format (default {default_fmt})")
        sp.add_argument("--out", default=None,
                        help="output file, or one of json/csv/human to pick the format for stdout")
        sp.set_defaults(default_fmt=default_fmt)

    sp = sub.add_parser("solve", help="Newton-Raphson power flow")
    common(sp)
    start = sp.add_mutually_exclusive_group()
    start.add_argument("--flat-start", action="store_true", help="start from a flat profile (default)")
    start.add_argument("--warm-from", metavar="S", help="JSON report of an earlier solve to start from")
    sp.add_argument("--tol", type=float, default=1e-8)
    sp.add_argument("--max-iter", type=int, default=50)

    sp = sub.add_parser("certify", help="insolvability certificate with both margins")
    common(sp)
    sp.add_argument("--gap-tol", type=float, default=1e-7)

    sp = sub.add_parser("sweep", help="certificate (and optionally NR) over a multiplier range")
    common(sp, "csv")
    sp.add_argument("--from", dest="start", type=float)
    sp.add_argument("--to", dest="stop", type=float)
    sp.add_argument("--step", type=float)
    sp.add_argument("--multipliers", help="comma separated list, instead of --from/--to/--step")
    sp.add_argument("--nr", action="store_true", help="add the warm-started Newton-Raphson column")
    sp.add_argument("--jobs", type=int, default=1, help="worker processes for the dual solves")
    sp.add_argument("--tol", type=float, default=1e-8)
    sp.add_argument("--max-iter", type=int, default=50)
    sp.add_argument("--gap-tol", type=float, default=1e-7)

    sp = sub.add_parser("pvcurve", help="continuation power flow through the nose")
    common(sp, "csv")
    sp.add_argument("--voltage-scale", type=float, default=1.0,
                    help="scale the slack and PV setpoints before tracing")
    sp.add_argument("--monitor", type=int, default=None, help="PQ bus id whose voltage is reported")
    sp.add_argument("--step", type=float, default=0.1, help="largest arclength step")

    sp = sub.add_parser("rank-study", help="nullspace rank of the dual optimum")
    common(sp)
    sp.add_argument("--no-cross-check", action="store_true",
                    help="skip the multistart bifurcation cross-check on tiny systems")
    sp.add_argument("--gap-tol", type=float, default=1e-7)

    sp = sub.add_parser("margins", help="voltage and injection margins at a multiplier")
    common(sp)
    sp.add_argument("--gap-tol", type=float, default=1e-7)
    return p


def _resolve_output(ns) -> tuple[str, Path | None]:
    out, fmt = ns.out, ns.format
    if out in FORMATS:
        if fmt is not None and fmt != out:
            raise UsageError(f"--out {out} conflicts with --format {fmt}")
        return out, None
    path = Path(out) if out else None
    if fmt is None:
        suffix = path.suffix.lower().lstrip(".") if path else ""
        fmt = {"json": "json", "csv": "csv", "txt": "human"}.get(suffix, ns.default_fmt)
    return fmt, path


def _config(ns) -> RunConfig:
    fmt, out = _resolve_output(ns)
    opts = {k: v for k, v in vars(ns).items()
            if k not in ("command", "case", "multiplier", "format", "out", "default_fmt", "tol", "max_iter",
                         "gap_tol")}
    return RunConfig(
        command=ns.command,
        case=ns.case,
        multiplier=ns.multiplier,
        fmt=fmt,
        out=out,
        nr_tol=getattr(ns, "tol", 1e-8),
        nr_max_iter=getattr(ns, "max_iter", 50),
        gap_tol=getattr(ns, "gap_tol", 1e-7),
        options=opts,
    )


def _multipliers(cfg: RunConfig) -> list[float]:
    o = cfg.options
    if o.get("multipliers"):
        if any(o.get(k) is not None for k in ("start", "stop", "step")):
            raise UsageError("use either --multipliers or --from/--to/--step")
        try:
            return [float(x) for x in o["multipliers"].split(",") if x.strip()]
        except ValueError as exc:
            raise UsageError(f"bad --multipliers list: {exc}") from None
    a, b, h = o.get("start"), o.get("stop"), o.get("step")
    if a is None or b is None or h is None:
        raise UsageError("sweep needs --from, --to and --step (or --multipliers)")
    if not h > 0 or b < a:
        raise UsageError("sweep needs --step > 0 and --to >= --from")
    count = int(np.floor((b - a) / h + 1e-9)) + 1
    # rounding keeps 4.055 + 5 * 0.001 printing as 4.06, not 4.0600000000000005
    return [round(a + i * h, 12) for i in range(count)]


def _warm_state(path: str, model: NetworkModel) -> PowerFlowState:
    data = json.loads(Path(path).read_text())
    state = data.get("state")
    if not state:
        raise UsageError(f"{path} holds no converged state to start from")
    v, d = np.array(state["v"], dtype=float), np.array(state["delta"], dtype=float)
    if v.size != model.n:
        raise UsageError(f"{path} has {v.size} buses but the case has {model.n}")
    return PowerFlowState(v, d)


def _execute(cfg: RunConfig) -> tuple[str, int]:
    model = load_case(cfg.case)
    m = cfg.multiplier
    scaled = scale_injections(model, m) if m != 1.0 else model
    ctx = {"case": model.name, "multiplier": m}
    o = cfg.options

    if cfg.command == "solve":
        initial = _warm_state(o["warm_from"], scaled) if o.get("warm_from") else flat_start(scaled)
        rep = nr_solve(scaled, initial, tol=cfg.nr_tol, max_iter=cfg.nr_max_iter)
        return emit_report(rep, cfg.fmt, scaled, **ctx), EXIT_OK

    if cfg.command in ("certify", "margins"):
        cert = certify(scaled, cfg.barrier)
        code = EXIT_INSOLVABLE if cert.insolvable_certified else EXIT_OK
        if cfg.command == "certify":
            return emit_report(cert, cfg.fmt, scaled, **ctx), code
        margins = {
            "v_lower": cert.v_lower,
            "v0": cert.v0,
            "sigma": cert.sigma,
            "eta": cert.eta,
            "max_multiplier": m * cert.eta,
            "insolvable_certified": cert.insolvable_certified,
        }
        if cfg.fmt == "csv":
            raise UsageError("margins has no CSV layout; use json or human")
        return emit_report(margins, cfg.fmt, scaled, kind="margins", **ctx), code

    if cfg.command == "sweep":
        rows = sweep(model, _multipliers(cfg), with_nr=o["nr"], opts=cfg.barrier, jobs=max(1, o["jobs"]),
                     nr_max_iter=cfg.nr_max_iter)
        code = EXIT_INCONCLUSIVE if any(r.v_lower is None for r in rows) else EXIT_OK
        return emit_report(rows, cfg.fmt, model, case=model.name), code

    if cfg.command == "pvcurve":
        base = scale_controlled_voltages(model, o["voltage_scale"]) if o["voltage_scale"] != 1.0 else model
        trace = trace_pv_curve(base, step=o["step"], monitored_bus=o["monitor"])
        return emit_report(trace, cfg.fmt, base, case=model.name, voltage_scale=o["voltage_scale"]), EXIT_OK

    if cfg.command == "rank-study":
        if cfg.fmt == "csv":
            raise UsageError("rank-study has no CSV layout; use json or human")
        cross = False if o["no_cross_check"] else None
        study = rank_study(scaled, cross_check=cross, opts=cfg.barrier)
        return emit_report(study, cfg.fmt, scaled, **ctx), EXIT_OK

    raise UsageError(f"unknown command {cfg.command!r}")


def run(argv: list[str] | None = None, stdout=None, stderr=None) -> int:
    """Parse ``argv``, run the subcommand and write its report; returns the exit code."""
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    try:
        cfg = _config(_parser().parse_args(argv))
        text, code = _execute(cfg)
    except UsageError as exc:
        msg = str(exc)
        if not msg.startswith("usage:"):
            msg = f"{_parser().format_usage()}gridcert: error: {msg}"
        print(msg, file=stderr)
        return EXIT_ERROR
    except InconclusiveCertificate as exc:
        print(f"inconclusive: {exc}", file=stderr)
        return EXIT_INCONCLUSIVE
    except (CaseError, NetworkError, GuardExceeded, SingularJacobian, BaseCaseUnsolvable,
            FileNotFoundError, KeyError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=stderr)
        return EXIT_ERROR
    if cfg.out is not None:
        cfg.out.write_text(text)
    else:
        stdout.write(text)
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
