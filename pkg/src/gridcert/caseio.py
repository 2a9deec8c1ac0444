"""MATPOWER-style case files and the bundled example systems.

Only the ``mpc.baseMVA``, ``mpc.bus``, ``mpc.gen`` and ``mpc.branch`` blocks
are read.  Everything in memory is per-unit on ``base_mva`` with angles in
radians; :func:`emit_case` converts back to the file's MW/degree units.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .netmodel import Branch, Bus, BusKind, NetworkModel, scale_injections

__all__ = [
    "CaseFile",
    "CaseSyntaxError",
    "CaseError",
    "parse_case",
    "read_case",
    "emit_case",
    "to_network",
    "builtin_case",
    "load_case",
    "BUILTIN_NAMES",
    "data_dir",
]

# Column indices (0-based) of the MATPOWER format.
BUS_I, BUS_TYPE, PD, QD, GS, BS, BUS_AREA, VM, VA = range(9)
GEN_BUS, PG, QG, QMAX, QMIN, VG, MBASE, GEN_STATUS, PMAX, PMIN = range(10)
F_BUS, T_BUS, BR_R, BR_X, BR_B, RATE_A, RATE_B, RATE_C, TAP, SHIFT, BR_STATUS = range(11)

MIN_COLS = {"bus": 9, "gen": 8, "branch": 11}
# Columns holding MW/MVAr/MVA quantities, per block.
POWER_COLS = {
    "bus": (PD, QD, GS, BS),
    "gen": (PG, QG, QMAX, QMIN, PMAX, PMIN),
    "branch": (RATE_A, RATE_B, RATE_C, 13, 14, 15, 16),
}
ANGLE_COLS = {"bus": (VA,), "gen": (), "branch": (SHIFT, 11, 12)}

BUILTIN_NAMES = ("two_bus", "three_bus", "three_bus_gap", "ieee14", "ieee118")


class CaseError(ValueError):
    pass


class CaseSyntaxError(CaseError):
    def __init__(self, message: str, line: int | None = None):
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)
        self.line = line


@dataclass(frozen=True)
class CaseFile:
    """Raw case tables, per-unit, angles in radians.

    ``bus``, ``gen`` and ``branch`` keep every column of the file so that
    :func:`emit_case` can write them back.
    """

    name: str
    base_mva: float
    bus: np.ndarray
    gen: np.ndarray
    branch: np.ndarray


_BLOCK = re.compile(r"mpc\.(bus|gen|branch)\s*=\s*\[")
_BASE = re.compile(r"mpc\.baseMVA\s*=\s*([^;\n%]+)")
_NAME = re.compile(r"function\s+mpc\s*=\s*(\w+)")


def _line_of(text: str, pos: int) -> int:
    return text.count("\n", 0, pos) + 1


def _parse_block(text: str, start: int, kind: str) -> tuple[np.ndarray, int]:
    end = text.find("]", start)
    if end < 0:
        raise CaseSyntaxError(f"unterminated mpc.{kind} block", _line_of(text, start))
    rows: list[list[float]] = []
    lines: list[int] = []
    first_line = _line_of(text, start)
    for offset, raw in enumerate(text[start:end].split("\n")):
        body = raw.split("%", 1)[0]
        for chunk in body.split(";"):
            tokens = chunk.replace(",", " ").split()
            if not tokens:
                continue
            lineno = first_line + offset
            try:
                rows.append([float(tok) for tok in tokens])
            except ValueError:
                raise CaseSyntaxError(f"non-numeric entry in mpc.{kind} row: {chunk.strip()!r}", lineno) from None
            lines.append(lineno)
    if not rows:
        return np.zeros((0, MIN_COLS[kind])), end
    width = len(rows[0])
    for row, lineno in zip(rows, lines):
        if len(row) < MIN_COLS[kind]:
            raise CaseSyntaxError(
                f"mpc.{kind} row has {len(row)} columns, at least {MIN_COLS[kind]} required", lineno
            )
        if len(row) != width:
            raise CaseSyntaxError(f"mpc.{kind} row has {len(row)} columns, expected {width}", lineno)
    return np.array(rows, dtype=float), end


def _to_pu(table: np.ndarray, kind: str, base: float) -> np.ndarray:
    out = table.copy()
    ncol = out.shape[1]
    cols = [c for c in POWER_COLS[kind] if c < ncol]
    angles = [c for c in ANGLE_COLS[kind] if c < ncol]
    out[:, cols] /= base
    out[:, angles] = np.deg2rad(out[:, angles])
    return out


def _exact_preimage(target: np.ndarray, guess: np.ndarray, forward) -> np.ndarray:
    # Nudge each naive inverse by a few ulps until forward() reproduces the target bit for bit.
    out = guess.copy()
    bad = forward(out) != target
    for k in range(1, 9):
        if not bad.any():
            break
        for direction in (np.inf, -np.inf):
            cand = guess.copy()
            for _ in range(k):
                cand = np.nextafter(cand, direction)
            hit = bad & (forward(cand) == target)
            out[hit] = cand[hit]
            bad &= ~hit
    return out


def _from_pu(table: np.ndarray, kind: str, base: float) -> np.ndarray:
    """File-unit table that :func:`_to_pu` maps back to ``table`` exactly."""
    out = table.copy()
    ncol = out.shape[1]
    cols = [c for c in POWER_COLS[kind] if c < ncol]
    angles = [c for c in ANGLE_COLS[kind] if c < ncol]
    out[:, cols] = _exact_preimage(table[:, cols], table[:, cols] * base, lambda v: v / base)
    out[:, angles] = _exact_preimage(table[:, angles], np.rad2deg(table[:, angles]), np.deg2rad)
    return out


def parse_case(text: str, name: str | None = None) -> CaseFile:
    m = _BASE.search(text)
    if not m:
        raise CaseSyntaxError("missing mpc.baseMVA")
    try:
        base = float(m.group(1))
    except ValueError:
        raise CaseSyntaxError(f"bad mpc.baseMVA value {m.group(1)!r}", _line_of(text, m.start())) from None
    if not base > 0:
        raise CaseSyntaxError(f"mpc.baseMVA must be positive, got {base}", _line_of(text, m.start()))

    tables: dict[str, np.ndarray] = {}
    for blk in _BLOCK.finditer(text):
        kind = blk.group(1)
        if kind in tables:
            raise CaseSyntaxError(f"duplicate mpc.{kind} block", _line_of(text, blk.start()))
        tables[kind], _ = _parse_block(text, blk.end(), kind)
    for kind in ("bus", "gen", "branch"):
        if kind not in tables:
            raise CaseSyntaxError(f"missing mpc.{kind} block")

    if name is None:
        nm = _NAME.search(text)
        name = nm.group(1) if nm else "case"

    bus = tables["bus"]
    ids = bus[:, BUS_I].astype(int)
    if len(set(ids.tolist())) != len(ids):
        dup = sorted({i for i in ids.tolist() if (ids == i).sum() > 1})
        raise CaseError(f"duplicate bus ids {dup}")
    known = set(ids.tolist())
    for r, b in enumerate(tables["gen"][:, GEN_BUS].astype(int)):
        if b not in known:
            raise CaseError(f"generator row {r + 1} references unknown bus {b}")
    for r, (f, t) in enumerate(tables["branch"][:, [F_BUS, T_BUS]].astype(int)):
        for b in (f, t):
            if b not in known:
                raise CaseError(f"branch row {r + 1} references unknown bus {b}")
    nref = int((bus[:, BUS_TYPE] == 3).sum())
    if nref > 1:
        raise CaseError(f"case designates {nref} reference buses; exactly one is supported")

    return CaseFile(
        name=name,
        base_mva=base,
        bus=_to_pu(bus, "bus", base),
        gen=_to_pu(tables["gen"], "gen", base),
        branch=_to_pu(tables["branch"], "branch", base),
    )


def read_case(path: str | os.PathLike) -> CaseFile:
    path = Path(path)
    return parse_case(path.read_text(), name=path.stem)


def _fmt(v: float) -> str:
    if float(v).is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


def emit_case(case: CaseFile) -> str:
    out = [
        f"function mpc = {case.name}",
        "",
        "%% MATPOWER Case Format : Version 2",
        "mpc.version = '2';",
        "",
        "%% system MVA base",
        f"mpc.baseMVA = {_fmt(case.base_mva)};",
    ]
    for kind in ("bus", "gen", "branch"):
        table = _from_pu(getattr(case, kind), kind, case.base_mva)
        out += ["", f"mpc.{kind} = ["]
        out += ["\t" + "\t".join(_fmt(v) for v in row) + ";" for row in table]
        out.append("];")
    return "\n".join(out) + "\n"


def to_network(case: CaseFile) -> NetworkModel:
    """Merge generation and load into net injections and classify buses.

    A type-2 bus without an in-service generator is treated as PQ, and the
    voltage setpoint of a controlled bus comes from its first in-service
    generator (falling back to the bus Vm).  Isolated (type 4) buses and
    out-of-service branches are dropped.
    """
    bus = case.bus
    if not (bus[:, BUS_TYPE] == 3).any():
        raise CaseError("no reference (slack) bus designated")
    gens: dict[int, list[np.ndarray]] = {}
    for row in case.gen:
        if row[GEN_STATUS] > 0:
            gens.setdefault(int(row[GEN_BUS]), []).append(row)

    buses = []
    for row in bus:
        bid, btype = int(row[BUS_I]), int(row[BUS_TYPE])
        if btype == 4:
            continue
        g = gens.get(bid, [])
        pg = sum(r[PG] for r in g)
        qg = sum(r[QG] for r in g)
        if btype == 3:
            kind = BusKind.SLACK
        elif btype == 2 and g:
            kind = BusKind.PV
        else:
            kind = BusKind.PQ
        v_set = None
        if kind is not BusKind.PQ:
            v_set = float(g[0][VG]) if g else float(row[VM])
        buses.append(
            Bus(
                id=bid,
                kind=kind,
                p_inj=float(pg - row[PD]),
                q_inj=float(qg - row[QD]),
                v_set=v_set,
                shunt_g=float(row[GS]),
                shunt_b=float(row[BS]),
            )
        )
    live = {b.id for b in buses}
    branches = []
    for row in case.branch:
        f, t = int(row[F_BUS]), int(row[T_BUS])
        if row[BR_STATUS] <= 0 or f not in live or t not in live:
            continue
        tap = float(row[TAP]) or 1.0
        branches.append(
            Branch(f, t, r=float(row[BR_R]), x=float(row[BR_X]), b_charging=float(row[BR_B]),
                   tap=tap, phase_shift=float(row[SHIFT]))
        )
    return NetworkModel(tuple(buses), tuple(branches), name=case.name, base_mva=case.base_mva).validate()


def data_dir() -> Path:
    env = os.environ.get("GRIDCERT_DATA_DIR")
    if env:
        return Path(env)
    return Path(str(resources.files("gridcert") / "data"))


def _impedance(g: float, b: float) -> tuple[float, float]:
    mag2 = g * g + b * b
    if mag2 == 0:
        raise ValueError("line admittance g + jb must be nonzero")
    return g / mag2, -b / mag2


def two_bus(g: float = 1.0, b: float = -10.0, v_pv: float = 1.0, v_slack: float = 1.0,
            p_pv: float = 0.0) -> NetworkModel:
    """PV bus 1 tied to slack bus 2 through a single admittance ``g + jb``."""
    if not (v_pv > 0 and v_slack > 0):
        raise ValueError("voltage setpoints must be positive")
    r, x = _impedance(g, b)
    buses = (
        Bus(1, BusKind.PV, p_inj=p_pv, v_set=v_pv),
        Bus(2, BusKind.SLACK, v_set=v_slack),
    )
    return NetworkModel(buses, (Branch(1, 2, r=r, x=x),), name="two_bus").validate()


def three_bus(r13: float = 0.01, x13: float = 0.1, r23: float = 0.01, x23: float = 0.1,
              r12: float = 0.01, x12: float = 0.1, v1: float = 1.0, v2: float = 1.0,
              p1: float = 0.5, load: complex = 1.0 + 0.25j, name: str = "three_bus") -> NetworkModel:
    """Triangle with PV bus 1, slack bus 2 and a PQ load at bus 3."""
    buses = (
        Bus(1, BusKind.PV, p_inj=p1, v_set=v1),
        Bus(2, BusKind.SLACK, v_set=v2),
        Bus(3, BusKind.PQ, p_inj=-load.real, q_inj=-load.imag),
    )
    branches = (
        Branch(1, 3, r=r13, x=x13),
        Branch(2, 3, r=r23, x=x23),
        Branch(1, 2, r=r12, x=x12),
    )
    return NetworkModel(buses, branches, name=name).validate()


def three_bus_gap() -> NetworkModel:
    """Lossless triangle whose last two solution pairs vanish together.

    With x13 = 0.3, x23 = 0.1 and a series-compensated 1-2 tie (x12 = -0.8)
    the two local minima of the controlled voltage over the solution set sit
    at the same scale (about 0.6228), so the dual LMI has a four-dimensional
    nullspace.  Swap-symmetric triangles cannot do this: their symmetric fold
    is always the unique lowest point.
    """
    return three_bus(r13=0.0, x13=0.3, r23=0.0, x23=0.1, r12=0.0, x12=-0.8, name="three_bus_gap")


def builtin_case(name: str, **params) -> NetworkModel:
    if name == "two_bus":
        return two_bus(**params)
    if name == "three_bus":
        return three_bus(**params)
    if name == "three_bus_gap":
        return three_bus_gap(**params)
    if name in ("ieee14", "ieee118"):
        if params:
            raise TypeError(f"{name} takes no parameters")
        path = data_dir() / f"case{name[4:]}.m"
        return to_network(read_case(path))
    raise KeyError(f"unknown builtin case {name!r}; choose from {', '.join(BUILTIN_NAMES)}")


def load_case(source: str, multiplier: float | None = None) -> NetworkModel:
    """Builtin name or path to a case file, optionally with scaled injections."""
    if source in BUILTIN_NAMES:
        model = builtin_case(source)
    else:
        path = Path(source)
        if not path.exists():
            raise FileNotFoundError(f"{source!r} is neither a builtin case nor an existing file")
        model = to_network(read_case(path))
    if multiplier is not None and multiplier != 1.0:
        model = scale_injections(model, multiplier)
    return model

