"""Log-det barrier path following for ``max b^T y  s.t.  C - sum_i y_i A_i >= 0``.

Every coefficient matrix is given in factored form ``A_i = L_i D_i L_i^T``
with a common rank r (``L_i`` is N x r).  With ``S = A(y)^{-1}`` and
``K = L^T S L`` (all factors side by side), the barrier gradient and Hessian
need only r x r blocks of K::

    g_i  = tr(S A_i)       = tr(D_i K_ii)
    H_ij = tr(S A_i S A_j) = tr(D_i K_ij D_j K_ji)
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg
import scipy.sparse

__all__ = ["LmiProblem", "BarrierOptions", "BarrierResult", "Status", "barrier_solve", "phase_one"]


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    MAX_ITER = "MaxIter"
    NUMERICAL_TROUBLE = "NumericalTrouble"


@dataclass(frozen=True)
class LmiProblem:
    c: np.ndarray      # N x N
    lf: np.ndarray     # m x N x r factors L_i
    d: np.ndarray      # m x r x r cores D_i
    b: np.ndarray      # m

    @property
    def size(self) -> int:
        return self.c.shape[0]

    @property
    def m(self) -> int:
        return self.b.size

    @property
    def r(self) -> int:
        return self.d.shape[1]

    @cached_property
    def lmat(self) -> np.ndarray:
        """All factors side by side, N x (m r)."""
        return self.lf.transpose(1, 0, 2).reshape(self.size, -1)

    @cached_property
    def lsparse(self) -> scipy.sparse.csr_matrix:
        return scipy.sparse.csr_matrix(self.lmat)

    def matrix(self, y: np.ndarray) -> np.ndarray:
        m, r = self.m, self.r
        core = scipy.sparse.bsr_matrix((y[:, None, None] * self.d, np.arange(m), np.arange(m + 1)),
                                       shape=(m * r, m * r))
        lsp = self.lsparse
        a = self.c - (lsp @ (core @ lsp.T)).toarray()
        return 0.5 * (a + a.T)

    def with_objective(self, b: np.ndarray) -> "LmiProblem":
        return LmiProblem(self.c, self.lf, self.d, np.asarray(b, dtype=float))


@dataclass(frozen=True)
class BarrierOptions:
    t0: float = 1.0
    ratio: float = 5.0
    gap_tol: float = 1e-7
    center_tol: float = 1e-6
    max_outer: int = 60
    max_inner: int = 100
    armijo: float = 0.25
    max_backtracks: int = 60


@dataclass
class BarrierResult:
    y: np.ndarray
    objective: float
    status: Status
    t: float
    newton_steps: int
    stage_objectives: list[float] = field(default_factory=list)


def _chol(a: np.ndarray) -> np.ndarray | None:
    try:
        return scipy.linalg.cholesky(a, lower=True, check_finite=False)
    except (np.linalg.LinAlgError, ValueError):
        return None


def _logdet(lc: np.ndarray) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(lc))))


def _inverse(lc: np.ndarray) -> np.ndarray:
    return scipy.linalg.cho_solve((lc, True), np.eye(lc.shape[0]), check_finite=False)


def _grad_hess(prob: LmiProblem, sinv: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Barrier gradient and Hessian at ``S = A^{-1}``; also returns ``S L``."""
    m, r = prob.m, prob.r
    lsp = prob.lsparse
    sl = np.asarray(lsp.T @ sinv).T                        # S L, dense N x (m r)
    k = np.asarray(lsp.T @ sl)
    mr = m * r
    dk = np.matmul(prob.d, k.reshape(m, r, mr)).reshape(mr, mr)            # D_i K_ij
    dkd = np.matmul(prob.d, dk.T.reshape(m, r, mr)).reshape(mr, mr).T      # D_i K_ij D_j
    # tr(D_i K_ij D_j K_ji) is the blockwise sum of dkd * K since K_ji = K_ij^T
    h = (dkd * k).reshape(m, r, m, r).sum(axis=(1, 3))
    kd = k.reshape(m, r, m, r)[np.arange(m), :, np.arange(m), :]
    g = np.einsum("iab,iba->i", prob.d, kd)
    return g, 0.5 * (h + h.T), sl


def _newton_direction(h: np.ndarray, rhs: np.ndarray) -> np.ndarray | None:
    try:
        cf = scipy.linalg.cho_factor(h, lower=True, check_finite=False)
        dy = scipy.linalg.cho_solve(cf, rhs, check_finite=False)
    except (np.linalg.LinAlgError, ValueError):
        dy = np.linalg.lstsq(h, rhs, rcond=None)[0]
    return dy if np.all(np.isfinite(dy)) else None


def barrier_solve(prob: LmiProblem, y0: np.ndarray, opts: BarrierOptions = BarrierOptions()) -> BarrierResult:
    """Follow the central path from a strictly feasible ``y0``.

    Each stage maximizes ``b^T y + t logdet A(y)`` by damped Newton steps
    with an Armijo backtracking search in which a failed Cholesky counts as
    infeasible, until the Newton decrement drops below ``opts.center_tol``;
    ``t`` then shrinks by ``opts.ratio``.  The loop stops once
    the gap bound ``N t`` is below ``gap_tol (1 + |b^T y|)``.  Only points
    whose ``A(y)`` passed a Cholesky factorization are ever accepted.
    """
    y = np.array(y0, dtype=float)
    lc = _chol(prob.matrix(y))
    if lc is None:
        raise ValueError("starting point is not strictly feasible")
    n = prob.size
    t = opts.t0
    steps = 0
    history: list[float] = []
    status = Status.MAX_ITER
    for _ in range(opts.max_outer):
        centered = False
        for _ in range(opts.max_inner):
            g, h, _ = _grad_hess(prob, _inverse(lc))
            grad = prob.b - t * g
            dy = _newton_direction(t * h, grad)
            if dy is None:
                return BarrierResult(y, float(prob.b @ y), Status.NUMERICAL_TROUBLE, t, steps, history)
            dec = float(grad @ dy)
            steps += 1
            # dec / t is the squared Newton decrement of the scale-free merit b^T y / t + logdet A;
            # the n t gap bound below only holds once it is small
            if dec / (2 * t) < opts.center_tol:
                centered = True
                break
            f0 = float(prob.b @ y) + t * _logdet(lc)
            step = 1.0
            for _ in range(opts.max_backtracks):
                yn = y + step * dy
                ln = _chol(prob.matrix(yn))
                if ln is not None and float(prob.b @ yn) + t * _logdet(ln) >= f0 + opts.armijo * step * dec:
                    break
                step *= 0.5
            else:
                # No acceptable step: the Newton system has lost accuracy.
                return BarrierResult(y, float(prob.b @ y), Status.NUMERICAL_TROUBLE, t, steps, history)
            y, lc = yn, ln
        obj = float(prob.b @ y)
        history.append(obj)
        if not centered:
            status = Status.MAX_ITER
            break
        if n * t <= opts.gap_tol * (1.0 + abs(obj)):
            status = Status.OPTIMAL
            break
        t /= opts.ratio
    return BarrierResult(y, float(prob.b @ y), status, t, steps, history)


def phase_one(prob: LmiProblem, t0: float = 1.0, max_iter: int = 500) -> np.ndarray:
    """A strictly feasible point, found by maximizing s subject to A(y) - s I >= 0.

    Starts from ``y = 0, s = -1`` (feasible whenever C is semidefinite) and
    returns as soon as ``s > 0``.
    """
    m, n, r = prob.m, prob.size, prob.r
    eye = np.eye(n)
    y = np.zeros(m)
    s = -1.0
    t = t0

    def merit(yv, sv):
        lc = _chol(prob.matrix(yv) - sv * eye)
        return None if lc is None else (sv + t * _logdet(lc), lc)

    cur = merit(y, s)
    if cur is None:
        raise ValueError("C + I is not positive definite; phase one cannot start")
    for _ in range(max_iter):
        f0, lc = cur
        sinv = _inverse(lc)
        g, h, sl = _grad_hess(prob, sinv)
        # Extra variable s enters as -s I: its derivatives need tr(D_i (L^T S^2 L)_ii).
        blocks = sl.reshape(n, m, r)
        hs = np.einsum("iab,nib,nia->i", prob.d, blocks, blocks)
        hh = np.block([[h, hs[:, None]], [hs[None, :], np.array([[np.sum(sinv * sinv)]])]])
        grad = np.append(-t * g, 1.0 - t * np.trace(sinv))
        d = _newton_direction(t * hh, grad)
        if d is None:
            break
        dec = float(grad @ d)
        step = 1.0
        nxt = None
        for _ in range(60):
            cand = merit(y + step * d[:m], s + step * d[m])
            if cand is not None and cand[0] >= f0 + 0.25 * step * dec:
                nxt = cand
                break
            step *= 0.5
        if nxt is None:
            break
        y, s, cur = y + step * d[:m], s + step * d[m], nxt
        if s > 0:
            return y
        if dec / 2 < 1e-6:
            t /= 5.0
            cur = merit(y, s)
    raise RuntimeError("phase one did not reach a strictly feasible point")
