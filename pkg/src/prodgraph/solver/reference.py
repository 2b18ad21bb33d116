"""High-accuracy interior-point reference for small sparse-commutant problems.

Formulated directly on the matrix variable with cvxpy and solved by Clarabel;
it shares no code with the ADMM path so it can serve as an oracle for it.
"""

from __future__ import annotations

import time

import cvxpy as cp
import numpy as np

from ..graph import NormMode, validate_gso
from .estimators import InfeasibleError, SolveReport, SolverOptions

__all__ = ["reference_solve_small", "REFERENCE_MAX_N"]

REFERENCE_MAX_N = 6
_CLARABEL = dict(tol_gap_abs=1e-11, tol_gap_rel=1e-11, tol_feas=1e-11, tol_infeas_abs=1e-10, tol_infeas_rel=1e-10)


def reference_solve_small(C, opts: SolverOptions | None = None) -> SolveReport:
    opts = opts or SolverOptions()
    C = np.asarray(C, dtype=float)
    n = C.shape[0]
    if n > REFERENCE_MAX_N:
        raise ValueError(f"reference solver is limited to n <= {REFERENCE_MAX_N}, got {n}")
    t0 = time.perf_counter()
    eps = opts.radius(C)
    scale = float(np.linalg.norm(C)) or 1.0
    Cn = C / scale

    S = cp.Variable((n, n), symmetric=True)
    cons = [S >= 0, cp.diag(S) == 0]
    if opts.norm_mode is NormMode.FIRST_ROW_UNIT:
        cons.append(cp.sum(S[0, :]) == 1)
    else:
        cons.append(cp.sum(S, axis=1) == 1)
    comm = Cn @ S - S @ Cn
    if eps == 0:
        cons.append(comm == 0)
    else:
        cons.append(cp.norm(comm, "fro") <= eps / scale)
    prob = cp.Problem(cp.Minimize(cp.sum(S)), cons)
    prob.solve(solver=cp.CLARABEL, **_CLARABEL)

    report = SolveReport(options=opts, details={"epsilon_abs": eps, "solver": "clarabel"})
    report.wall_time_s = time.perf_counter() - t0
    if prob.status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
        report.status = "infeasible"
        raise InfeasibleError(f"reference solver: {prob.status}", report)
    if prob.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
        report.status = "max_iter"
        return report
    W = np.array(S.value)
    W = 0.5 * (W + W.T)
    np.fill_diagonal(W, 0.0)
    W = np.maximum(W, 0.0)
    report.objective = float(W.sum())
    report.commut_residual = float(np.linalg.norm(C @ W - W @ C))
    report.iterations = int(prob.solver_stats.num_iters or 0)
    report.s_full = validate_gso(W, opts.norm_mode, atol=1e-8, norm_atol=1e-7)
    return report
