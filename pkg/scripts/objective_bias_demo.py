"""Biasing the dual objective toward one solution pair on the three-bus gap case.

Without a bias the dual optimum of ``three_bus_gap`` has a rank-4 nullspace
because two solution pairs bifurcate at the same controlled-voltage scale.
Adding ``eps * Ybar_slack`` to the cost (a small reward or penalty on the
slack reactive injection) picks one of the pairs and the nullspace drops to
rank 2.  This is an experiment only: no bias is known that does the same for
larger systems, so it is not part of the library.

    python3 scripts/objective_bias_demo.py [--eps 1e-3]
"""

import argparse

from gridcert.caseio import builtin_case
from gridcert.linalg import eig_sym
from gridcert.sdpcert import LmiProblem, barrier_solve, dual_problem, nullspace_rank, phase_one
from gridcert.sdpcert.matrices import _yk_blocks


def solve_biased(eps: float):
    model = builtin_case("three_bus_gap")
    prob = dual_problem(model).lmi
    ybar_slack = _yk_blocks(model.y_matrix, model.slack)[1]
    lmi = LmiProblem(prob.c + eps * ybar_slack, prob.lf, prob.d, prob.b)
    res = barrier_solve(lmi, phase_one(lmi))
    w, _ = eig_sym(lmi.matrix(res.y))
    return res, w


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--eps", type=float, default=1e-3)
    args = ap.parse_args()
    print(f"{'bias':>10} {'objective':>20} {'rank':>5}  smallest eigenvalues / largest")
    for eps in (0.0, args.eps, -args.eps):
        res, w = solve_biased(eps)
        profile = " ".join(f"{x:.2e}" for x in w[:4] / w[-1])
        print(f"{eps:>10.1e} {res.objective:>20.12f} {nullspace_rank(w):>5}  {profile}")


if __name__ == "__main__":
    main()
