"""Dual program of the minimum-slack-voltage problem and the certificates built on it."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..continuation import scale_controlled_voltages
from ..linalg import eig_sym
from ..netmodel import BusKind, NetworkModel, alpha_ratios, scale_injections
from ..powerflow import (
    GuardExceeded,
    PowerFlowState,
    SingularJacobian,
    enumerate_solutions,
    flat_start,
    nr_solve,
    ENUMERATION_MAX_BUSES,
)
from .barrier import BarrierOptions, LmiProblem, Status, barrier_solve, phase_one
from .matrices import DualPoint, _mk, _yk_blocks, lowrank_stamp

__all__ = [
    "DualProblem",
    "SdpSolution",
    "CertificateResult",
    "InconclusiveCertificate",
    "SweepRow",
    "RankStudy",
    "BifurcationCheck",
    "RANK_TOL",
    "dual_problem",
    "solve_dual",
    "v_slack_lower_bound",
    "certify",
    "injection_margin_at",
    "sweep",
    "rank_study",
    "nullspace_rank",
    "bisect_vanishing_scales",
]

RANK_TOL = 1e-6


class InconclusiveCertificate(RuntimeError):
    def __init__(self, solution: "SdpSolution"):
        super().__init__(f"dual solve ended with status {solution.status.value}; no certificate issued")
        self.solution = solution


@dataclass(frozen=True)
class DualProblem:
    """The LMI of one network in solver form, plus the variable bookkeeping.

    Variables are ordered per non-slack bus (in bus order): ``lam`` then, for
    a PQ bus, ``gamma`` or, for a PV bus, ``mu``.  Only the objective depends
    on the injections, so :meth:`for_injections` reuses the stamps.
    """

    lmi: LmiProblem
    labels: tuple[tuple[str, int], ...]   # ("lam" | "gamma" | "mu", bus id)
    v0: float
    fingerprint: bytes

    def for_injections(self, model: NetworkModel) -> "DualProblem":
        return DualProblem(self.lmi.with_objective(_objective(model, self.labels)), self.labels,
                           self.v0, self.fingerprint)

    def point(self, y: np.ndarray) -> DualPoint:
        lam, gamma, mu = {}, {}, {}
        for (kind, bid), val in zip(self.labels, y):
            {"lam": lam, "gamma": gamma, "mu": mu}[kind][bid] = float(val)
        return DualPoint(lam, gamma, mu)


def _objective(model: NetworkModel, labels) -> np.ndarray:
    p, q = model.p_spec, model.q_spec
    b = []
    for kind, bid in labels:
        k = model.index_of(bid)
        b.append(p[k] if kind == "lam" else q[k] if kind == "gamma" else 0.0)
    return np.array(b)


def _fingerprint(model: NetworkModel) -> bytes:
    alphas = alpha_ratios(model)
    kinds = "".join(b.kind.value[0] for b in model.buses).encode()
    return model.y_matrix.tobytes() + np.array(sorted(alphas.items())).tobytes() + kinds


def dual_problem(model: NetworkModel) -> DualProblem:
    model.validate()
    n, s = model.n, model.slack
    y = model.y_matrix
    alphas = alpha_ratios(model)
    lf, ds, labels = [], [], []
    for k in model.non_slack:
        bus = model.buses[k]
        ymat, ybar = _yk_blocks(y, k)
        l_, d_ = lowrank_stamp(ymat, k, n)
        lf.append(l_), ds.append(d_), labels.append(("lam", bus.id))
        if bus.kind is BusKind.PQ:
            l_, d_ = lowrank_stamp(ybar, k, n)
            lf.append(l_), ds.append(d_), labels.append(("gamma", bus.id))
        else:
            a2 = alphas[bus.id] ** 2
            l_ = np.zeros((2 * n, 4))
            l_[[k, n + k, s, n + s], [0, 1, 2, 3]] = 1.0
            lf.append(l_), ds.append(np.diag([1.0, 1.0, -a2, -a2])), labels.append(("mu", bus.id))
    lmi = LmiProblem(_mk(n, s), np.array(lf), np.array(ds), np.zeros(len(labels)))
    prob = DualProblem(lmi, tuple(labels), model.v0, _fingerprint(model))
    return prob.for_injections(model)


_PHASE_ONE_CACHE: dict[bytes, np.ndarray] = {}


def _feasible_start(prob: DualProblem) -> np.ndarray:
    y0 = _PHASE_ONE_CACHE.get(prob.fingerprint)
    if y0 is None:
        y0 = phase_one(prob.lmi)
        _PHASE_ONE_CACHE[prob.fingerprint] = y0
    return y0.copy()


def nullspace_rank(eigenvalues: np.ndarray, rank_tol: float = RANK_TOL) -> int:
    top = float(np.max(np.abs(eigenvalues)))
    return int(np.sum(eigenvalues <= rank_tol * top))


@dataclass(frozen=True)
class SdpSolution:
    point: DualPoint
    objective: float
    a_matrix: np.ndarray
    a_eigenvalues: np.ndarray
    nullspace_rank: int
    status: Status
    newton_steps: int
    stage_objectives: tuple[float, ...] = field(default=(), repr=False)


def _solve(prob: DualProblem, opts: BarrierOptions) -> SdpSolution:
    res = barrier_solve(prob.lmi, _feasible_start(prob), opts)
    a = prob.lmi.matrix(res.y)
    w, _ = eig_sym(a)
    return SdpSolution(prob.point(res.y), res.objective, a, w, nullspace_rank(w), res.status,
                       res.newton_steps, tuple(res.stage_objectives))


def solve_dual(model: NetworkModel, opts: BarrierOptions = BarrierOptions()) -> SdpSolution:
    """Maximize the dual objective subject to A >= 0.

    The returned point always has a Cholesky-factorable A, so its objective
    is a valid lower bound on the squared slack voltage whatever the status.
    """
    return _solve(dual_problem(model), opts)


def v_slack_lower_bound(sol: SdpSolution) -> float:
    """Square root of the dual objective (which bounds the squared slack voltage)."""
    return math.sqrt(max(sol.objective, 0.0))


@dataclass(frozen=True)
class CertificateResult:
    v_lower: float
    v0: float
    insolvable_certified: bool
    sigma: float
    eta: float
    nullspace_rank: int
    solution_indicator: bool
    status: Status
    a_eigenvalues: tuple[float, ...] = field(default=(), repr=False)

    @property
    def verdict(self) -> str:
        if self.insolvable_certified:
            return "certified insolvable: no power flow solution exists"
        if self.solution_indicator:
            return "not certified insolvable; rank-2 nullspace strongly indicates a solution exists"
        return "not certified insolvable; the condition is necessary only, existence is not implied"


def _certificate(sol: SdpSolution, v0: float) -> CertificateResult:
    if sol.status is Status.NUMERICAL_TROUBLE:
        raise InconclusiveCertificate(sol)
    v_lower = v_slack_lower_bound(sol)
    sigma = v0 / v_lower if v_lower > 0 else math.inf
    eta = sigma * sigma
    return CertificateResult(
        v_lower=v_lower,
        v0=v0,
        insolvable_certified=bool(v_lower > v0),
        sigma=sigma,
        eta=eta,
        nullspace_rank=sol.nullspace_rank,
        solution_indicator=bool(sigma >= 1.0 and sol.nullspace_rank <= 2),
        status=sol.status,
        a_eigenvalues=tuple(float(x) for x in sol.a_eigenvalues),
    )


def certify(model: NetworkModel, opts: BarrierOptions = BarrierOptions()) -> CertificateResult:
    """Insolvability certificate with voltage margin sigma and injection margin eta.

    Raises :class:`InconclusiveCertificate` when the solver hit numerical
    trouble; no insolvability claim is ever made from such a run.
    """
    return _certificate(solve_dual(model, opts), model.v0)


def injection_margin_at(model: NetworkModel, multiplier: float,
                        opts: BarrierOptions = BarrierOptions()) -> float:
    """eta at the given injection multiplier: (V0 / V_lower(multiplier))**2."""
    return certify(scale_injections(model, multiplier), opts).eta


@dataclass(frozen=True)
class SweepRow:
    multiplier: float
    nr_converged: bool | None
    v_lower: float | None
    sigma: float | None
    eta: float | None
    certified_insolvable: bool | None
    nullspace_rank: int | None = None
    status: str = ""
    error: str = ""


def _sweep_sdp(args) -> tuple:
    prob, multiplier, opts = args
    sol = _solve(prob, opts)
    try:
        cert = _certificate(sol, prob.v0)
    except InconclusiveCertificate as exc:
        return (None, str(exc), sol.status.value)
    return (cert, "", sol.status.value)


def sweep(model: NetworkModel, multipliers, with_nr: bool = True,
          opts: BarrierOptions = BarrierOptions(), jobs: int = 1,
          nr_max_iter: int = 50) -> list[SweepRow]:
    """One row per multiplier: warm-started NR (optional) and the dual bound.

    NR at each multiplier starts from the last converged solution (flat start
    for the first row).  Dual solves are independent of each other, so with
    ``jobs > 1`` they run in worker processes; rows come back in input order
    and are identical to a serial run.
    """
    mults = [float(m) for m in multipliers]
    if any(m <= 0 for m in mults):
        raise ValueError("multipliers must be positive")
    if any(b < a for a, b in zip(mults, mults[1:])):
        raise ValueError("multipliers must be ascending")
    if not mults:
        return []

    nr_col: list[bool | None] = [None] * len(mults)
    if with_nr:
        warm: PowerFlowState | None = None
        for i, m in enumerate(mults):
            scaled = scale_injections(model, m)
            try:
                rep = nr_solve(scaled, warm if warm is not None else flat_start(scaled), max_iter=nr_max_iter)
                ok = rep.converged
            except SingularJacobian:
                ok, rep = False, None
            nr_col[i] = ok
            if ok:
                warm = rep.state

    base = dual_problem(model)
    _feasible_start(base)
    tasks = [(base.for_injections(scale_injections(model, m)), m, opts) for m in mults]
    if jobs > 1:
        # ship the phase-one point along so workers do not redo it
        y0 = _PHASE_ONE_CACHE[base.fingerprint]
        with ProcessPoolExecutor(max_workers=jobs, initializer=_seed_cache,
                                 initargs=(base.fingerprint, y0)) as ex:
            results = list(ex.map(_sweep_sdp, tasks))
    else:
        results = [_sweep_sdp(t) for t in tasks]

    rows = []
    for m, nr, (cert, err, status) in zip(mults, nr_col, results):
        if cert is None:
            rows.append(SweepRow(m, nr, None, None, None, None, None, status, err))
        else:
            rows.append(SweepRow(m, nr, cert.v_lower, cert.sigma, cert.eta, cert.insolvable_certified,
                                 cert.nullspace_rank, status))
    return rows


def _seed_cache(fingerprint: bytes, y0: np.ndarray) -> None:
    _PHASE_ONE_CACHE[fingerprint] = y0


@dataclass(frozen=True)
class BifurcationCheck:
    """Controlled-voltage scales at which solutions disappear.

    ``events`` lists ``(scale, count_above, count_below)`` from the largest
    scale down; ``scale`` is the bisected upper end of the bracket.
    """

    events: tuple[tuple[float, int, int], ...]
    nominal_count: int
    scale_tol: float

    @property
    def last_scale(self) -> float | None:
        return self.events[-1][0] if self.events else None

    @property
    def pairs_at_last(self) -> int:
        """Solution pairs lost within ``scale_tol`` of the last disappearance."""
        if not self.events:
            return 0
        last = self.last_scale
        return sum((hi - lo) // 2 for s, hi, lo in self.events if abs(s - last) <= self.scale_tol)

    @property
    def multiple_pairs_coincide(self) -> bool:
        return self.pairs_at_last >= 2


@dataclass(frozen=True)
class RankStudy:
    nullspace_rank: int
    eigenvalues: np.ndarray
    v_lower: float
    status: Status
    cross_check: BifurcationCheck | None


def _count(model: NetworkModel, scale: float) -> int:
    return len(enumerate_solutions(scale_controlled_voltages(model, scale)))


def bisect_vanishing_scales(model: NetworkModel, scan_step: float = 0.05, scale_tol: float = 1e-4,
                            floor: float = 0.02) -> BifurcationCheck:
    """Scan the controlled-voltage scale down from 1 and bisect every drop in the solution count."""
    if model.n > ENUMERATION_MAX_BUSES:
        raise GuardExceeded(f"bifurcation cross-check needs at most {ENUMERATION_MAX_BUSES} buses")
    nominal = _count(model, 1.0)
    events = []
    hi, c_hi = 1.0, nominal
    while c_hi > 0 and hi > floor:
        lo = max(hi - scan_step, floor)
        c_lo = _count(model, lo)
        if c_lo < c_hi:
            a, b, ca = lo, hi, c_lo
            while b - a > scale_tol * 1e-2:
                mid = 0.5 * (a + b)
                c = _count(model, mid)
                if c >= c_hi:
                    b = mid
                else:
                    a, ca = mid, c
            events.append((b, c_hi, ca))
            hi, c_hi = a, ca
            continue
        hi, c_hi = lo, c_lo
    return BifurcationCheck(tuple(events), nominal, scale_tol)


def rank_study(model: NetworkModel, cross_check: bool | None = None,
               opts: BarrierOptions = BarrierOptions()) -> RankStudy:
    """Nullspace rank of A at the dual optimum, with a multistart cross-check on tiny systems."""
    if cross_check is None:
        cross_check = model.n <= ENUMERATION_MAX_BUSES
    check = bisect_vanishing_scales(model) if cross_check else None
    sol = solve_dual(model, opts)
    return RankStudy(sol.nullspace_rank, sol.a_eigenvalues, v_slack_lower_bound(sol), sol.status, check)
