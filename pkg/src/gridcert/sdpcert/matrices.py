"""Quadratic-form matrices of the power balance equations.

For a rectangular voltage vector ``x = [Re V; Im V]`` of length 2n:

* ``x @ Yk @ x`` is the active injection at bus k,
* ``x @ Ykbar @ x`` is the reactive injection at bus k,
* ``x @ Mk @ x`` is the squared voltage magnitude at bus k.

Each matrix only touches rows and columns ``k`` and ``n + k`` plus their
neighbours, so besides dense constructors this module produces low-rank
factors ``A = L D L^T`` (``L`` is 2n x 4) used by the barrier solver.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..netmodel import NetworkModel, alpha_ratios

__all__ = ["ConstraintMatrices", "DualPoint", "build_matrices", "assemble_lmi", "lowrank_stamp"]


def _yk_blocks(y: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    n = y.shape[0]
    yk = np.zeros((n, n), dtype=complex)
    yk[k, :] = y[k, :]
    s = yk + yk.T
    d = yk - yk.T
    ymat = 0.5 * np.block([[s.real, -d.imag], [d.imag, s.real]])
    ybar = -0.5 * np.block([[s.imag, d.real], [-d.real, s.imag]])
    return ymat, ybar


def _mk(n: int, k: int) -> np.ndarray:
    m = np.zeros((2 * n, 2 * n))
    m[k, k] = m[n + k, n + k] = 1.0
    return m


@dataclass(frozen=True)
class ConstraintMatrices:
    """Lazy access to Y_k, Ybar_k and M_k for one admittance matrix.

    Dense 2n x 2n matrices are built on request; storing all of them for the
    118-bus case would take over 150 MB.
    """

    y: np.ndarray
    slack: int

    @property
    def n(self) -> int:
        return self.y.shape[0]

    def Yk(self, k: int) -> np.ndarray:
        return _yk_blocks(self.y, k)[0]

    def Ykbar(self, k: int) -> np.ndarray:
        return _yk_blocks(self.y, k)[1]

    def Mk(self, k: int) -> np.ndarray:
        return _mk(self.n, k)

    @property
    def M_slack(self) -> np.ndarray:
        return _mk(self.n, self.slack)


def build_matrices(model: NetworkModel) -> ConstraintMatrices:
    return ConstraintMatrices(np.array(model.y_matrix), model.slack)


def lowrank_stamp(a: np.ndarray, k: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Factor a matrix supported on rows/columns {k, n+k} as ``L D L^T``.

    With ``E`` the identity columns of that support, ``F = A E`` and
    ``C = E^T A E``: ``A = E F^T + F E^T - E C E^T``.
    """
    cols = [k, n + k]
    e = np.zeros((2 * n, 2))
    e[cols, [0, 1]] = 1.0
    f = a[:, cols]
    c = a[np.ix_(cols, cols)]
    lmat = np.hstack([e, f])
    d = np.block([[-c, np.eye(2)], [np.eye(2), np.zeros((2, 2))]])
    return lmat, d


@dataclass(frozen=True)
class DualPoint:
    """Multipliers of the dual program, keyed by bus id.

    ``lam`` covers PQ and PV buses, ``gamma`` PQ buses and ``mu`` PV buses.
    """

    lam: dict[int, float]
    gamma: dict[int, float]
    mu: dict[int, float]

    @classmethod
    def zero(cls, model: NetworkModel) -> "DualPoint":
        ids = lambda idx: [model.buses[i].id for i in idx]  # noqa: E731
        return cls({b: 0.0 for b in ids(model.non_slack)}, {b: 0.0 for b in ids(model.pq)},
                   {b: 0.0 for b in ids(model.pv)})


def assemble_lmi(model: NetworkModel, point: DualPoint, mats: ConstraintMatrices | None = None,
                 alphas: dict[int, float] | None = None) -> np.ndarray:
    """Dense ``A = M_s - sum_PQ(lam Yk + gamma Ykbar) - sum_PV(lam Yk + mu (Mk - alpha_k^2 M_s))``.

    ``alphas`` are the plain setpoint ratios from :func:`alpha_ratios`; the
    voltage-ratio constraint ``V_k = alpha_k V_s`` is quadratic in ``x`` as
    ``x^T Mk x = alpha_k^2 x^T M_s x``, hence the square.
    """
    if mats is None:
        mats = build_matrices(model)
    if alphas is None:
        alphas = alpha_ratios(model)
    ms = mats.M_slack
    a = ms.copy()
    for bid, lam in point.lam.items():
        k = model.index_of(bid)
        ymat, ybar = _yk_blocks(mats.y, k)
        a -= lam * ymat
        if bid in point.gamma:
            a -= point.gamma[bid] * ybar
    for bid, mu in point.mu.items():
        k = model.index_of(bid)
        a -= mu * (_mk(mats.n, k) - alphas[bid] ** 2 * ms)
    return 0.5 * (a + a.T)
