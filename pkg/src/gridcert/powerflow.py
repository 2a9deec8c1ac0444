"""Power balance, Newton-Raphson and the zero-injection machinery.

Unknowns follow the usual convention: angles at every non-slack bus, then
magnitudes at PQ buses, both in bus order.  Residual rows are ordered the
same way (P at non-slack buses, then Q at PQ buses).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

import numpy as np

from .linalg import Singular, solve_linear
from .netmodel import BusKind, NetworkModel

__all__ = [
    "PowerFlowState",
    "SolveReport",
    "ZeroInjectionSolution",
    "JacobianCheck",
    "SingularJacobian",
    "ZeroImpedanceAfterReduction",
    "GuardExceeded",
    "injections",
    "mismatch",
    "jacobian",
    "flat_start",
    "nr_solve",
    "zero_injection_solution",
    "two_bus_zero_injection_exists",
    "check_zero_injection_jacobian",
    "irreducibly_diagonally_dominant",
    "enumerate_solutions",
    "MULTISTART_ANGLES_DEG",
    "MULTISTART_MAGNITUDES",
]

MULTISTART_ANGLES_DEG = (-150.0, -90.0, -30.0, 0.0, 30.0, 90.0, 150.0)
MULTISTART_MAGNITUDES = (0.2, 0.6, 1.0)
ENUMERATION_MAX_BUSES = 4
DIVERGED = 1e10


class SingularJacobian(ArithmeticError):
    def __init__(self, iteration: int):
        super().__init__(f"power flow Jacobian is singular at iteration {iteration}")
        self.iteration = iteration


class ZeroImpedanceAfterReduction(ArithmeticError):
    pass


class GuardExceeded(ValueError):
    pass


@dataclass(frozen=True)
class PowerFlowState:
    v: np.ndarray
    delta: np.ndarray

    def __post_init__(self):
        v = np.array(self.v, dtype=float)
        d = np.array(self.delta, dtype=float)
        if v.shape != d.shape or v.ndim != 1:
            raise ValueError("v and delta must be 1-D arrays of equal length")
        v.flags.writeable = False
        d.flags.writeable = False
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "delta", d)

    @classmethod
    def from_complex(cls, voltage, slack: int | None = None) -> "PowerFlowState":
        """Polar state from complex voltages, optionally rotated so the slack angle is 0."""
        voltage = np.asarray(voltage, dtype=complex)
        if slack is not None:
            voltage = voltage * np.exp(-1j * np.angle(voltage[slack]))
        return cls(np.abs(voltage), np.angle(voltage))

    @classmethod
    def from_rect(cls, x) -> "PowerFlowState":
        x = np.asarray(x, dtype=float)
        n = x.size // 2
        return cls.from_complex(x[:n] + 1j * x[n:])

    @property
    def complex(self) -> np.ndarray:
        return self.v * np.exp(1j * self.delta)

    @property
    def rect(self) -> np.ndarray:
        """Rectangular view ``[V cos(delta), V sin(delta)]`` of length 2n."""
        return np.concatenate([self.v * np.cos(self.delta), self.v * np.sin(self.delta)])

    def scaled(self, beta: float) -> "PowerFlowState":
        return PowerFlowState(self.v * beta, self.delta)


@dataclass(frozen=True)
class SolveReport:
    converged: bool
    iterations: int
    final_mismatch: float
    state: PowerFlowState | None
    trace: tuple[float, ...] = field(default=(), repr=False)


def injections(model: NetworkModel, state: PowerFlowState) -> tuple[np.ndarray, np.ndarray]:
    """Computed active and reactive injections at every bus."""
    v = state.complex
    s = v * np.conj(model.y_matrix @ v)
    return s.real, s.imag


def _check_dims(model: NetworkModel, state: PowerFlowState) -> None:
    if state.v.size != model.n:
        raise ValueError(f"state has {state.v.size} buses, model has {model.n}")


def _residual(model: NetworkModel, v: np.ndarray) -> np.ndarray:
    s = v * np.conj(model.y_matrix @ v)
    ns, pq = model.non_slack, model.pq
    return np.concatenate([s.real[ns] - model.p_spec[ns], s.imag[pq] - model.q_spec[pq]])


def mismatch(model: NetworkModel, state: PowerFlowState) -> np.ndarray:
    """Computed minus specified injections: P at non-slack buses, Q at PQ buses."""
    _check_dims(model, state)
    return _residual(model, state.complex)


def _jacobian(model: NetworkModel, v: np.ndarray) -> np.ndarray:
    y = model.y_matrix
    i = y @ v
    vn = v / np.abs(v)
    # Complex power sensitivities with respect to angle and magnitude.
    ds_da = 1j * v[:, None] * np.conj(np.diag(i) - y * v[None, :])
    ds_dm = v[:, None] * np.conj(y * vn[None, :]) + np.diag(np.conj(i) * vn)
    ns, pq = model.non_slack, model.pq
    top = np.hstack([ds_da.real[np.ix_(ns, ns)], ds_dm.real[np.ix_(ns, pq)]])
    bot = np.hstack([ds_da.imag[np.ix_(pq, ns)], ds_dm.imag[np.ix_(pq, pq)]])
    return np.vstack([top, bot])


def jacobian(model: NetworkModel, state: PowerFlowState) -> np.ndarray:
    """Jacobian of :func:`mismatch` with respect to (angles at non-slack, magnitudes at PQ)."""
    _check_dims(model, state)
    return _jacobian(model, state.complex)


def _controlled_magnitudes(model: NetworkModel, v: np.ndarray) -> np.ndarray:
    v = v.copy()
    for i, b in enumerate(model.buses):
        if b.kind is not BusKind.PQ:
            v[i] = b.v_set
    return v


def flat_start(model: NetworkModel) -> PowerFlowState:
    """Zero angles; setpoints at controlled buses and the slack setpoint elsewhere."""
    v = np.full(model.n, model.v0)
    return PowerFlowState(_controlled_magnitudes(model, v), np.zeros(model.n))


def nr_solve(model: NetworkModel, initial: PowerFlowState | None = None, tol: float = 1e-8,
             max_iter: int = 50) -> SolveReport:
    """Full-step Newton-Raphson.

    Controlled magnitudes are taken from the model's setpoints and the slack
    angle from ``initial``, so a state solved at other injections can be
    reused as a warm start.  Running out of iterations (or diverging) gives a
    non-converged report; a singular Jacobian raises :class:`SingularJacobian`.
    """
    if initial is None:
        initial = flat_start(model)
    _check_dims(model, initial)
    ns, pq = model.non_slack, model.pq
    vm = _controlled_magnitudes(model, np.asarray(initial.v, dtype=float))
    va = np.array(initial.delta, dtype=float)
    nd = ns.size

    trace = []
    v = vm * np.exp(1j * va)
    f = _residual(model, v)
    err = float(np.max(np.abs(f))) if f.size else 0.0
    trace.append(err)
    it = 0
    while err > tol and it < max_iter and np.isfinite(err) and err < DIVERGED:
        it += 1
        try:
            dx = solve_linear(_jacobian(model, v), -f)
        except Singular:
            raise SingularJacobian(it) from None
        va[ns] += dx[:nd]
        vm[pq] += dx[nd:]
        v = vm * np.exp(1j * va)
        f = _residual(model, v)
        err = float(np.max(np.abs(f)))
        trace.append(err)

    converged = bool(err <= tol)
    state = None
    if converged:
        # A magnitude that went negative is the same phasor rotated by pi.
        neg = vm < 0
        va = np.where(neg, va + np.pi, va)
        state = PowerFlowState(np.abs(vm), np.angle(np.exp(1j * va)))
    return SolveReport(converged, it, err, state, tuple(trace))


@dataclass(frozen=True)
class ZeroInjectionSolution:
    """Voltage profile with zero active injection everywhere but the slack.

    ``delta_d`` holds, per PV bus (in ``model.pv`` order), the shunt
    susceptance that replaces that bus's reactive injection.  For lossless
    networks all angles are equal; for lossy ones they generally are not.
    """

    state: PowerFlowState
    delta_d: np.ndarray
    method: str


def _zeroed(model: NetworkModel) -> NetworkModel:
    buses = [replace(b, p_inj=0.0, q_inj=0.0) if b.kind is not BusKind.SLACK else b for b in model.buses]
    return model.replace_buses(buses)


def _verify_zero(model: NetworkModel, state: PowerFlowState, delta_d: np.ndarray, tol: float) -> float:
    p, q = injections(model, state)
    q = q.copy()
    q[model.pv] -= delta_d * state.v[model.pv] ** 2
    keep = model.non_slack
    return float(max(np.max(np.abs(p[keep]), initial=0.0), np.max(np.abs(q[keep]), initial=0.0)))


def zero_injection_solution(model: NetworkModel, tol: float = 1e-9) -> ZeroInjectionSolution | None:
    """Zero-injection voltage profile, or ``None`` when none is found.

    Lossless networks use the constructive route: PQ buses carry no current,
    so they are Kron-reduced away, all angles are set equal and the PV
    reactive injections are replaced by the shunts ``delta_d``.  Lossy
    networks fall back to Newton-Raphson on the zero-injection problem from a
    flat start.
    """
    model.validate()
    if model.is_lossless:
        return _zero_injection_lossless(model, tol)
    z = _zeroed(model)
    try:
        rep = nr_solve(z, flat_start(z))
    except SingularJacobian:
        return None
    if not rep.converged:
        return None
    st = rep.state
    _, q = injections(model, st)
    delta_d = q[model.pv] / st.v[model.pv] ** 2
    if _verify_zero(model, st, delta_d, tol) > max(tol, 10 * rep.final_mismatch):
        return None
    return ZeroInjectionSolution(st, delta_d, "newton")


def _zero_injection_lossless(model: NetworkModel, tol: float) -> ZeroInjectionSolution | None:
    b = model.y_matrix.imag
    pq = model.pq
    ctrl = np.array([i for i in range(model.n) if i not in set(pq.tolist())], dtype=int)
    v = np.zeros(model.n)
    v[ctrl] = [model.buses[i].v_set for i in ctrl]
    if pq.size:
        bqq = b[np.ix_(pq, pq)]
        try:
            v[pq] = solve_linear(bqq, -b[np.ix_(pq, ctrl)] @ v[ctrl])
        except Singular:
            raise ZeroImpedanceAfterReduction(
                "eliminating the PQ buses leaves a zero-impedance connection; "
                "perturb the offending line reactances slightly and retry"
            ) from None
    if np.any(v <= 0):
        return None
    # Kron-reduced relation restricted to PV rows: 0 = b2^T Vs + (B3 + diag(dd)) Vpv.
    red = b[np.ix_(ctrl, ctrl)]
    if pq.size:
        red = red - b[np.ix_(ctrl, pq)] @ np.linalg.solve(b[np.ix_(pq, pq)], b[np.ix_(pq, ctrl)])
    pos = {bus: k for k, bus in enumerate(ctrl.tolist())}
    pv_r = np.array([pos[i] for i in model.pv], dtype=int)
    s_r = pos[model.slack]
    vpv = v[model.pv]
    delta_d = (-red[pv_r, s_r] * v[model.slack] - red[np.ix_(pv_r, pv_r)] @ vpv) / vpv
    st = PowerFlowState(v, np.zeros(model.n))
    if _verify_zero(model, st, delta_d, tol) > tol * max(1.0, float(np.max(np.abs(b)))):
        return None
    return ZeroInjectionSolution(st, delta_d, "kron")


def two_bus_zero_injection_exists(g: float, b: float, v_pv: float, v_slack: float) -> bool:
    """Existence test for a zero-injection solution of the two-bus system.

    Holds iff ``(v_pv / v_slack)**2 <= 1 + (b / g)**2``; equality counts as
    existing (with a relative slack of 1e-12 for rounding).
    """
    if not v_slack > 0:
        raise ValueError("v_slack must be positive")
    if g == 0 and b == 0:
        raise ValueError("line admittance must be nonzero")
    if g == 0:
        return True
    lhs = (v_pv / v_slack) ** 2
    rhs = 1.0 + (b / g) ** 2
    return lhs <= rhs * (1.0 + 1e-12)


def irreducibly_diagonally_dominant(m: np.ndarray) -> bool:
    """Weak row dominance everywhere, strict in one row, irreducible pattern."""
    m = np.asarray(m, dtype=float)
    n = m.shape[0]
    if n == 0:
        return False
    diag = np.abs(np.diag(m))
    off = np.sum(np.abs(m), axis=1) - diag
    scale = max(float(np.max(np.abs(m))), 1.0)
    eps = 1e-12 * scale
    if np.any(diag < off - eps) or not np.any(diag > off + eps):
        return False
    # Irreducible iff the directed graph of off-diagonal nonzeros is strongly connected.
    adj = (np.abs(m) > eps) & ~np.eye(n, dtype=bool)
    for graph in (adj, adj.T):
        seen = np.zeros(n, dtype=bool)
        seen[0] = True
        stack = [0]
        while stack:
            i = stack.pop()
            for j in np.flatnonzero(graph[i] & ~seen):
                seen[j] = True
                stack.append(j)
        if not seen.all():
            return False
    return True


@dataclass(frozen=True)
class JacobianCheck:
    nonsingular: bool
    min_singular_value: float
    diagnostics: dict


def check_zero_injection_jacobian(model: NetworkModel, z: ZeroInjectionSolution) -> JacobianCheck:
    """Smallest singular value of the Jacobian at a zero-injection solution.

    Shunts standing in for PV reactive injections only enter Q rows at PV
    buses, which the Jacobian does not have, so the check runs on the model
    as given.
    """
    j = jacobian(model, z.state)
    sv = np.linalg.svd(j, compute_uv=False) if j.size else np.zeros(0)
    smax = float(sv[0]) if sv.size else 0.0
    smin = float(sv[-1]) if sv.size else 0.0
    nd = model.non_slack.size
    diag: dict = {"max_singular_value": smax, "size": int(j.shape[0])}
    if model.is_lossless:
        # Equal angles make the P-V and Q-delta blocks vanish; the angle block
        # is then irreducibly diagonally dominant for inductive networks.
        diag["offdiag_block_norm"] = float(max(np.max(np.abs(j[:nd, nd:]), initial=0.0),
                                               np.max(np.abs(j[nd:, :nd]), initial=0.0)))
        diag["j11_irreducibly_dominant"] = irreducibly_diagonally_dominant(j[:nd, :nd])
    nonsingular = bool(sv.size and smin > 1e-8 * smax)
    return JacobianCheck(nonsingular, smin, diag)


def _lattice(model: NetworkModel, angles_deg, magnitudes):
    ns, pq = model.non_slack, model.pq
    base = flat_start(model)
    for combo in itertools.product(np.deg2rad(angles_deg), repeat=ns.size):
        for mags in itertools.product(magnitudes, repeat=pq.size):
            d = np.zeros(model.n)
            d[ns] = combo
            v = np.array(base.v)
            v[pq] = np.asarray(mags) * model.v0
            yield PowerFlowState(v, d)


def enumerate_solutions(model: NetworkModel, angles_deg=MULTISTART_ANGLES_DEG,
                        magnitudes=MULTISTART_MAGNITUDES, tol: float = 1e-10,
                        max_iter: int = 50) -> list[PowerFlowState]:
    """Distinct power flow solutions reached by Newton-Raphson from a lattice.

    Starting angles range over ``angles_deg`` at every non-slack bus and
    starting magnitudes over ``magnitudes`` (times the slack setpoint) at
    every PQ bus.  Solutions closer than 1e-6 in complex voltage are merged;
    the result is sorted by slack reactive injection.
    """
    if model.n > ENUMERATION_MAX_BUSES:
        raise GuardExceeded(f"multistart enumeration is limited to {ENUMERATION_MAX_BUSES} buses, model has {model.n}")
    found: list[PowerFlowState] = []
    for start in _lattice(model, angles_deg, magnitudes):
        try:
            rep = nr_solve(model, start, tol=tol, max_iter=max_iter)
        except SingularJacobian:
            continue
        if not rep.converged:
            continue
        v = rep.state.complex
        if all(np.max(np.abs(v - s.complex)) >= 1e-6 for s in found):
            found.append(rep.state)
    s = model.slack
    return sorted(found, key=lambda st: (float(injections(model, st)[1][s]), tuple(st.delta)))
