"""Semidefinite dual of the minimum slack voltage problem and its certificates."""

from .barrier import BarrierOptions, BarrierResult, LmiProblem, Status, barrier_solve, phase_one
from .certificate import (
    RANK_TOL,
    BifurcationCheck,
    CertificateResult,
    DualProblem,
    InconclusiveCertificate,
    RankStudy,
    SdpSolution,
    SweepRow,
    bisect_vanishing_scales,
    certify,
    dual_problem,
    injection_margin_at,
    nullspace_rank,
    rank_study,
    solve_dual,
    sweep,
    v_slack_lower_bound,
)
from .matrices import ConstraintMatrices, DualPoint, assemble_lmi, build_matrices, lowrank_stamp

__all__ = [
    "BarrierOptions", "BarrierResult", "LmiProblem", "Status", "barrier_solve", "phase_one",
    "RANK_TOL", "BifurcationCheck", "CertificateResult", "DualProblem", "InconclusiveCertificate",
    "RankStudy", "SdpSolution", "SweepRow", "bisect_vanishing_scales", "certify", "dual_problem",
    "injection_margin_at", "nullspace_rank", "rank_study", "solve_dual", "sweep", "v_slack_lower_bound",
    "ConstraintMatrices", "DualPoint", "assemble_lmi", "build_matrices", "lowrank_stamp",
]
