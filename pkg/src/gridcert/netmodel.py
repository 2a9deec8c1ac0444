"""Network data model and bus admittance matrix.

All quantities are per-unit.  Generation and load are already merged into
signed net injections (generation minus load) by the time a
:class:`NetworkModel` exists.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

__all__ = [
    "BusKind",
    "Bus",
    "Branch",
    "NetworkModel",
    "NetworkError",
    "InvalidNetwork",
    "ZeroImpedanceBranch",
    "DisconnectedNetwork",
    "MissingSetpoint",
    "build_admittance",
    "scale_injections",
    "alpha_ratios",
]


class NetworkError(ValueError):
    pass


class InvalidNetwork(NetworkError):
    pass


class ZeroImpedanceBranch(NetworkError):
    def __init__(self, index: int, branch: "Branch"):
        super().__init__(f"branch {index} ({branch.from_bus}-{branch.to_bus}) has zero series impedance")
        self.index = index


class DisconnectedNetwork(NetworkError):
    def __init__(self, components: list[list[int]]):
        sizes = ", ".join(str(len(c)) for c in components)
        super().__init__(f"network has {len(components)} islands (sizes {sizes}): {components}")
        self.components = components


class MissingSetpoint(NetworkError):
    pass


class BusKind(str, enum.Enum):
    PQ = "PQ"
    PV = "PV"
    SLACK = "Slack"


@dataclass(frozen=True)
class Bus:
    id: int
    kind: BusKind
    p_inj: float = 0.0
    q_inj: float = 0.0
    v_set: float | None = None
    shunt_g: float = 0.0
    shunt_b: float = 0.0


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b_charging: float = 0.0
    tap: float = 1.0
    phase_shift: float = 0.0  # radians

    def __post_init__(self):
        if self.r < 0:
            raise InvalidNetwork(f"branch {self.from_bus}-{self.to_bus}: negative resistance {self.r}")
        if self.tap <= 0:
            raise InvalidNetwork(f"branch {self.from_bus}-{self.to_bus}: tap must be positive, got {self.tap}")


@dataclass(frozen=True)
class NetworkModel:
    """Immutable bus/branch model.

    Bus order is significant: it fixes the row order of the admittance
    matrix and of every vector indexed by bus.
    """

    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    name: str = ""
    base_mva: float = 100.0
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "branches", tuple(self.branches))
        if not self.buses:
            raise InvalidNetwork("network has no buses")
        index = {}
        for i, bus in enumerate(self.buses):
            if bus.id in index:
                raise InvalidNetwork(f"duplicate bus id {bus.id}")
            index[bus.id] = i
        object.__setattr__(self, "_index", index)
        for br in self.branches:
            for end in (br.from_bus, br.to_bus):
                if end not in index:
                    raise InvalidNetwork(f"branch {br.from_bus}-{br.to_bus} references unknown bus {end}")
        slacks = [b.id for b in self.buses if b.kind is BusKind.SLACK]
        if len(slacks) != 1:
            raise InvalidNetwork(f"expected exactly one slack bus, found {len(slacks)}: {slacks}")

    @property
    def n(self) -> int:
        return len(self.buses)

    def index_of(self, bus_id: int) -> int:
        try:
            return self._index[bus_id]
        except KeyError:
            raise KeyError(f"no bus with id {bus_id}") from None

    @cached_property
    def slack(self) -> int:
        return next(i for i, b in enumerate(self.buses) if b.kind is BusKind.SLACK)

    @cached_property
    def pv(self) -> np.ndarray:
        return np.array([i for i, b in enumerate(self.buses) if b.kind is BusKind.PV], dtype=int)

    @cached_property
    def pq(self) -> np.ndarray:
        return np.array([i for i, b in enumerate(self.buses) if b.kind is BusKind.PQ], dtype=int)

    @cached_property
    def non_slack(self) -> np.ndarray:
        return np.array([i for i in range(self.n) if i != self.slack], dtype=int)

    @property
    def p_spec(self) -> np.ndarray:
        return np.array([b.p_inj for b in self.buses])

    @property
    def q_spec(self) -> np.ndarray:
        return np.array([b.q_inj for b in self.buses])

    @property
    def v0(self) -> float:
        """Slack voltage setpoint."""
        return float(self.buses[self.slack].v_set)

    @cached_property
    def y_matrix(self) -> np.ndarray:
        y = build_admittance(self)
        y.flags.writeable = False
        return y

    @property
    def is_lossless(self) -> bool:
        return all(br.r == 0 for br in self.branches) and all(b.shunt_g == 0 for b in self.buses)

    def replace_buses(self, buses) -> "NetworkModel":
        return replace(self, buses=tuple(buses))

    def components(self) -> list[list[int]]:
        """Connected components as lists of bus ids, in bus order."""
        adj: list[list[int]] = [[] for _ in range(self.n)]
        for br in self.branches:
            f, t = self._index[br.from_bus], self._index[br.to_bus]
            adj[f].append(t)
            adj[t].append(f)
        seen = [False] * self.n
        out = []
        for start in range(self.n):
            if seen[start]:
                continue
            seen[start] = True
            comp, queue = [], deque([start])
            while queue:
                i = queue.popleft()
                comp.append(self.buses[i].id)
                for j in adj[i]:
                    if not seen[j]:
                        seen[j] = True
                        queue.append(j)
            out.append(comp)
        return out

    def validate(self) -> "NetworkModel":
        for b in self.buses:
            if b.kind is not BusKind.PQ and (b.v_set is None or not b.v_set > 0):
                raise MissingSetpoint(f"bus {b.id} ({b.kind.value}) needs a positive voltage setpoint, got {b.v_set}")
        comps = self.components()
        if len(comps) > 1:
            raise DisconnectedNetwork(comps)
        return self


def branch_stamp(br: Branch) -> tuple[complex, complex, complex, complex]:
    """(Yff, Yft, Ytf, Ytt) of the pi model, tap on the from side."""
    ys = 1.0 / complex(br.r, br.x)
    t = br.tap * np.exp(1j * br.phase_shift)
    ych = 0.5j * br.b_charging
    yff = (ys + ych) / (br.tap * br.tap)
    yft = -ys / np.conj(t)
    ytf = -ys / t
    ytt = ys + ych
    return yff, yft, ytf, ytt


def build_admittance(model: NetworkModel, check_connected: bool = True) -> np.ndarray:
    """Complex bus admittance matrix Y = G + jB with standard pi-model stamps."""
    if check_connected:
        comps = model.components()
        if len(comps) > 1:
            raise DisconnectedNetwork(comps)
    n = model.n
    y = np.zeros((n, n), dtype=complex)
    for k, br in enumerate(model.branches):
        if br.r == 0 and br.x == 0:
            raise ZeroImpedanceBranch(k, br)
        f, t = model.index_of(br.from_bus), model.index_of(br.to_bus)
        yff, yft, ytf, ytt = branch_stamp(br)
        y[f, f] += yff
        y[f, t] += yft
        y[t, f] += ytf
        y[t, t] += ytt
    for i, bus in enumerate(model.buses):
        y[i, i] += complex(bus.shunt_g, bus.shunt_b)
    return y


def scale_injections(model: NetworkModel, multiplier: float) -> NetworkModel:
    """Uniformly scale PQ (P and Q) and PV (P only) injections."""
    if not multiplier > 0:
        raise ValueError(f"injection multiplier must be positive, got {multiplier}")
    buses = []
    for b in model.buses:
        if b.kind is BusKind.PQ:
            b = replace(b, p_inj=b.p_inj * multiplier, q_inj=b.q_inj * multiplier)
        elif b.kind is BusKind.PV:
            b = replace(b, p_inj=b.p_inj * multiplier)
        buses.append(b)
    return model.replace_buses(buses)


def alpha_ratios(model: NetworkModel) -> dict[int, float]:
    """Map PV bus id to the ratio of its setpoint to the slack setpoint."""
    slack = model.buses[model.slack]
    if slack.v_set is None or not slack.v_set > 0:
        raise MissingSetpoint(f"slack bus {slack.id} has no positive voltage setpoint")
    out = {}
    for i in model.pv:
        b = model.buses[i]
        if b.v_set is None or not b.v_set > 0:
            raise MissingSetpoint(f"PV bus {b.id} has no positive voltage setpoint")
        out[b.id] = b.v_set / slack.v_set
    return out
