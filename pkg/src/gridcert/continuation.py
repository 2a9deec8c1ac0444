"""Pseudo-arclength continuation of the power flow in the injection multiplier."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .linalg import Singular, solve_linear
from .netmodel import BusKind, NetworkModel, scale_injections
from .powerflow import PowerFlowState, SingularJacobian, _jacobian, _residual, flat_start, nr_solve

__all__ = [
    "ContinuationTrace",
    "TracePoint",
    "BaseCaseUnsolvable",
    "trace_pv_curve",
    "scale_controlled_voltages",
    "default_monitored_bus",
]

# PQ buses shown in the published PV curves.
DEFAULT_MONITORS = {"case14": 5, "case118": 44}


class BaseCaseUnsolvable(RuntimeError):
    pass


@dataclass(frozen=True)
class TracePoint:
    multiplier: float
    state: PowerFlowState
    branch: str  # "upper" or "lower"


@dataclass(frozen=True)
class ContinuationTrace:
    points: tuple[TracePoint, ...]
    nose_multiplier: float
    monitored_bus: int
    step_underflow: bool = False
    nose_state: PowerFlowState | None = None

    def monitored_voltages(self, model: NetworkModel) -> np.ndarray:
        k = model.index_of(self.monitored_bus)
        return np.array([p.state.v[k] for p in self.points])

    @property
    def multipliers(self) -> np.ndarray:
        return np.array([p.multiplier for p in self.points])


def scale_controlled_voltages(model: NetworkModel, factor: float) -> NetworkModel:
    """Multiply the slack and every PV setpoint by ``factor`` (ratios unchanged)."""
    if not factor > 0:
        raise ValueError(f"voltage scale factor must be positive, got {factor}")
    buses = [replace(b, v_set=b.v_set * factor) if b.kind is not BusKind.PQ else b for b in model.buses]
    return model.replace_buses(buses)


def default_monitored_bus(model: NetworkModel) -> int:
    bid = DEFAULT_MONITORS.get(model.name)
    if bid is not None:
        return bid
    if model.pq.size == 0:
        raise ValueError("model has no PQ bus to monitor")
    return model.buses[int(model.pq[0])].id


class _System:
    """F(x, lam) = S(x) - lam * S_spec over x = (angles at non-slack, |V| at PQ)."""

    def __init__(self, model: NetworkModel, template: PowerFlowState):
        self.model = model
        self.ns, self.pq = model.non_slack, model.pq
        self.nd = self.ns.size
        self.vm = np.array(template.v, dtype=float)
        self.va = np.array(template.delta, dtype=float)
        self.dlam = -np.concatenate([model.p_spec[self.ns], model.q_spec[self.pq]])
        # residual at lam = 0 is evaluated on a model with zero specified injections
        self.zero = model.replace_buses(
            [replace(b, p_inj=0.0, q_inj=0.0) if b.kind is not BusKind.SLACK else b for b in model.buses]
        )

    def unpack(self, x: np.ndarray) -> np.ndarray:
        va, vm = self.va.copy(), self.vm.copy()
        va[self.ns] = x[: self.nd]
        vm[self.pq] = x[self.nd:]
        return vm * np.exp(1j * va)

    def pack(self, state: PowerFlowState) -> np.ndarray:
        return np.concatenate([state.delta[self.ns], state.v[self.pq]])

    def state(self, x: np.ndarray) -> PowerFlowState:
        return PowerFlowState.from_complex(self.unpack(x))

    def f(self, z: np.ndarray) -> np.ndarray:
        return _residual(self.zero, self.unpack(z[:-1])) + z[-1] * self.dlam

    def jac(self, z: np.ndarray) -> np.ndarray:
        return np.hstack([_jacobian(self.model, self.unpack(z[:-1])), self.dlam[:, None]])

    def tangent(self, z: np.ndarray, prev: np.ndarray) -> np.ndarray:
        a = np.vstack([self.jac(z), prev[None, :]])
        rhs = np.zeros(z.size)
        rhs[-1] = 1.0
        t = solve_linear(a, rhs)
        return t / np.linalg.norm(t)

    def correct(self, zp: np.ndarray, t: np.ndarray, tol: float, max_iter: int = 12) -> np.ndarray | None:
        z = zp.copy()
        for _ in range(max_iter):
            r = np.append(self.f(z), t @ (z - zp))
            if np.max(np.abs(r)) <= tol:
                return z
            try:
                dz = solve_linear(np.vstack([self.jac(z), t[None, :]]), -r)
            except Singular:
                return None
            z = z + dz
            if not np.all(np.isfinite(z)):
                return None
        r = np.append(self.f(z), t @ (z - zp))
        return z if np.max(np.abs(r)) <= tol else None


def trace_pv_curve(model: NetworkModel, step: float = 0.1, min_step: float = 1e-4,
                   max_points: int = 2000, monitored_bus: int | None = None,
                   start_multiplier: float = 0.0, tol: float = 1e-9,
                   nose_tol: float = 1e-4) -> ContinuationTrace:
    """Trace the PV curve of uniformly scaled injections through the nose.

    The injection multiplier is an extra unknown and each step is closed by
    a pseudo-arclength constraint, so the nose is passed without special
    handling.  A failed corrector halves the step; a step below ``min_step``
    ends the trace with ``step_underflow`` set.  The nose multiplier is
    refined by bisection on the arclength until the bracketing multipliers
    differ by less than ``nose_tol``.  The lower branch is followed until the
    multiplier drops below 10% of the nose.
    """
    if monitored_bus is None:
        monitored_bus = default_monitored_bus(model)
    model.index_of(monitored_bus)

    base = model if start_multiplier == 1.0 else (
        scale_injections(model, start_multiplier) if start_multiplier > 0 else None
    )
    sys_ = _System(model, flat_start(model))
    if base is None:
        base = sys_.zero
    try:
        rep = nr_solve(base, flat_start(base))
    except SingularJacobian as exc:
        raise BaseCaseUnsolvable(f"base case Jacobian is singular: {exc}") from None
    if not rep.converged:
        raise BaseCaseUnsolvable(f"Newton-Raphson did not converge at multiplier {start_multiplier}")
    sys_ = _System(model, rep.state)

    z = np.append(sys_.pack(rep.state), start_multiplier)
    prev = np.zeros(z.size)
    prev[-1] = 1.0
    t = sys_.tangent(z, prev)

    points = [TracePoint(float(z[-1]), sys_.state(z[:-1]), "upper")]
    h = step
    branch = "upper"
    nose = float(z[-1])
    nose_state = points[0].state
    underflow = False
    while len(points) < max_points:
        zn = sys_.correct(z + h * t, t, tol)
        if zn is None:
            h *= 0.5
            if h < min_step:
                underflow = True
                break
            continue
        try:
            tn = sys_.tangent(zn, t)
        except Singular:
            h *= 0.5
            if h < min_step:
                underflow = True
                break
            continue
        if branch == "upper" and tn[-1] < 0:
            nose, nz = _refine_nose(sys_, z, t, h, tol, nose_tol)
            nose_state = sys_.state(nz[:-1])
            branch = "lower"
        z, t = zn, tn
        points.append(TracePoint(float(z[-1]), sys_.state(z[:-1]), branch))
        if branch == "upper":
            nose = max(nose, float(z[-1]))
            nose_state = points[-1].state if z[-1] >= nose else nose_state
        elif z[-1] < 0.1 * nose:
            break
        h = min(step, 2.0 * h)
    return ContinuationTrace(tuple(points), float(nose), monitored_bus, underflow, nose_state)


def _refine_nose(sys_: _System, z: np.ndarray, t: np.ndarray, h: float, tol: float,
                 nose_tol: float) -> tuple[float, np.ndarray]:
    # The lambda-component of the tangent changes sign inside (0, h).
    lo, hi = 0.0, h
    best = z
    zlo = z
    zhi = sys_.correct(z + h * t, t, tol)
    for _ in range(60):
        if zhi is not None and abs(zhi[-1] - zlo[-1]) < nose_tol * 1e-2 and hi - lo < 1e-6:
            break
        mid = 0.5 * (lo + hi)
        zm = sys_.correct(z + mid * t, t, tol)
        if zm is None:
            break
        try:
            tm = sys_.tangent(zm, t)
        except Singular:
            best = zm
            break
        if tm[-1] > 0:
            lo, zlo = mid, zm
        else:
            hi, zhi = mid, zm
        best = zm if best is None or zm[-1] > best[-1] else best
    cands = [c for c in (zlo, zhi, best) if c is not None]
    top = max(cands, key=lambda c: c[-1])
    return float(top[-1]), top
