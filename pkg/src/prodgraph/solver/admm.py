"""Operator-splitting solver for the sparse-commutant programs.

Every estimator reduces to the conic program::

    minimize    q'x + 1/2 x'Px
    subject to  ||M x||_2 <= eps        (commutator ball, may have no rows)
                E x = b                 (normalization)
                G x >= 0                (edge weights; G = I on the edge vector)

solved by ADMM on the stacked constraint ``A = [M; E; G]`` with a cached
Cholesky factor and adaptive step size. Iterates are periodically polished on
their active set into exact KKT points. Infeasibility is decided by a phase-1
problem once the dual iterates start to diverge. Badly scaled instances on
which ADMM stalls are handed to cvxopt's interior-point cone solver and then
polished the same way.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy.optimize import brentq, lsq_linear

SIGMA = 1e-6
ALPHA = 1.6
EQ_SCALE = 1e3
RHO_MIN, RHO_MAX = 1e-6, 1e6
CHECK_EVERY = 5
ADAPT_EVERY = 25
POLISH_FIRST = 100
CERT_TOL = 1e-3
INFEAS_MARGIN = 1e-7
PHASE1_MAX_ITER = 20000


@dataclass
class ConeResult:
    x: np.ndarray
    status: str  # "optimal", "infeasible", "max_iter"
    iterations: int
    polished: bool
    prim_res: float
    dual_res: float
    fallback: bool = False


def compress_rows(M: np.ndarray) -> np.ndarray:
    """Triangular ``R`` with ``||R x|| == ||M x||`` for all x (fewer rows when M is tall)."""
    if M.shape[0] <= M.shape[1]:
        return M
    return sla.qr(M, mode="r", check_finite=False)[0][: M.shape[1]]


def null_space(M: np.ndarray, rtol: float) -> np.ndarray:
    """Orthonormal basis of the numerical null space (singular values <= rtol * max(1, s_max))."""
    if M.shape[0] == 0:
        return np.eye(M.shape[1])
    _, s, Vt = np.linalg.svd(M, full_matrices=True)
    thr = rtol * max(1.0, s[0])
    rank = int(np.count_nonzero(s > thr))
    return Vt[rank:].T


def _project(v: np.ndarray, k: int, e: int, eps: float, b: np.ndarray) -> np.ndarray:
    out = np.empty_like(v)
    vm = v[:k]
    if eps == 0.0:
        out[:k] = 0.0
    else:
        nrm = np.linalg.norm(vm)
        out[:k] = vm if nrm <= eps else vm * (eps / nrm)
    out[k : k + e] = b
    out[k + e :] = np.maximum(v[k + e :], 0.0)
    return out


def solve_cone(
    M: np.ndarray,
    E: np.ndarray,
    b: np.ndarray,
    eps: float,
    q: np.ndarray,
    P: np.ndarray | None = None,
    G: np.ndarray | None = None,
    *,
    tol: float = 1e-6,
    max_iter: int = 5000,
    polish: bool = True,
    detect_infeasible: bool = True,
    fallback: bool = True,
) -> ConeResult:
    m = q.size
    M = compress_rows(M)
    G = np.eye(m) if G is None else G
    k, e = M.shape[0], E.shape[0]
    A = np.vstack([M, E, G])
    Pm = np.zeros((m, m)) if P is None else P
    eps = float(eps)
    eps_admm = tol * 1e-2
    prob = _Problem(M, E, b, eps, q, Pm, G, tol)

    rho = 0.1
    ball_scale = EQ_SCALE if eps == 0.0 else 1.0

    def rho_vec(r):
        return np.concatenate([np.full(k, r * ball_scale), np.full(e, r * EQ_SCALE), np.full(G.shape[0], r)])

    def factor(rv):
        K = Pm + SIGMA * np.eye(m) + (A.T * rv) @ A
        return sla.cho_factor(K, check_finite=False)

    rv = rho_vec(rho)
    chol = factor(rv)
    x = np.zeros(m)
    z = _project(A @ x, k, e, eps, b)
    y = np.zeros(A.shape[0])
    y_prev = y.copy()
    status = "max_iter"
    it = 0
    prim = dual = math.inf
    next_polish = POLISH_FIRST
    phase1_done = False

    for it in range(1, max_iter + 1):
        rhs = SIGMA * x - q + A.T @ (rv * z - y)
        xt = sla.cho_solve(chol, rhs, check_finite=False)
        zt = A @ xt
        x = ALPHA * xt + (1 - ALPHA) * x
        zh = ALPHA * zt + (1 - ALPHA) * z
        z_new = _project(zh + y / rv, k, e, eps, b)
        y = y + rv * (zh - z_new)
        z = z_new

        if it % CHECK_EVERY:
            continue
        Ax = A @ x
        Px = Pm @ x
        ATy = A.T @ y
        prim = np.abs(Ax - z).max()
        dual = np.abs(Px + q + ATy).max()
        scale_p = max(np.abs(Ax).max(), np.abs(z).max())
        scale_d = max(np.abs(Px).max(), np.abs(ATy).max(), np.abs(q).max())
        if prim <= eps_admm * (1 + scale_p) and dual <= eps_admm * (1 + scale_d):
            status = "optimal"
            break
        if detect_infeasible and not phase1_done and _dual_ray(A, y - y_prev, k, e, eps, b):
            phase1_done = True
            if prob.certify_infeasible():
                return ConeResult(x, "infeasible", it, False, prim, dual)
        y_prev = y.copy()

        if polish and it >= next_polish:
            next_polish *= 2
            xp = prob.polish(x, y)
            if xp is not None:
                return ConeResult(xp, "optimal", it, True, prim, dual)

        if it % ADAPT_EVERY == 0:
            ratio = math.sqrt((prim / (scale_p + 1e-30)) / (dual / (scale_d + 1e-30) + 1e-30))
            new_rho = min(max(rho * ratio, RHO_MIN), RHO_MAX)
            if new_rho > 5 * rho or new_rho < 0.2 * rho:
                rho = new_rho
                rv = rho_vec(rho)
                chol = factor(rv)

    xp = prob.polish(x, y) if polish else None
    if xp is not None:
        return ConeResult(xp, "optimal", it, True, prim, dual)
    if status == "max_iter" and detect_infeasible and not phase1_done and prob.certify_infeasible():
        return ConeResult(x, "infeasible", it, False, prim, dual)
    if status == "max_iter" and fallback and not Pm.any():
        ip = prob.interior_point()
        if ip is not None:
            xi, ok, polished = ip
            return ConeResult(xi, "optimal" if ok else "max_iter", it, polished, prim, dual, fallback=True)
    return ConeResult(x, status, it, False, prim, dual)


def min_radius(M: np.ndarray, E: np.ndarray, b: np.ndarray, G=None, tol: float = 1e-6) -> ConeResult:
    """Phase 1: smallest ``||M x||`` over ``E x = b, G x >= 0``."""
    M = compress_rows(M)
    m = M.shape[1]
    return solve_cone(
        np.zeros((0, m)), E, b, 0.0, np.zeros(m), M.T @ M, G,
        tol=tol, max_iter=PHASE1_MAX_ITER, detect_infeasible=False,
    )


def _dual_ray(A, dy, k, e, eps, b) -> bool:
    """Loose test for a diverging dual; a hit only triggers the phase-1 check."""
    nrm = np.abs(dy).max()
    if nrm < 1e-12:
        return False
    d = dy / nrm
    if np.abs(A.T @ d).max() > CERT_TOL or d[k + e :].max() > CERT_TOL:
        return False
    return eps * np.linalg.norm(d[:k]) + b @ d[k : k + e] < -CERT_TOL


class _Problem:
    def __init__(self, M, E, b, eps, q, P, G, tol):
        self.M, self.E, self.b, self.eps = M, E, b, eps
        self.q, self.P, self.G, self.tol = q, P, G, tol

    def certify_infeasible(self) -> bool:
        """True only when a converged phase-1 problem has a strictly positive minimum."""
        M, E, b, G = self.M, self.E, self.b, self.G
        m = self.q.size
        if M.shape[0]:
            res = min_radius(M, E, b, G, self.tol)
            gap = np.linalg.norm(M @ res.x) - self.eps
        else:
            res = solve_cone(
                np.zeros((0, m)), np.zeros((0, m)), np.zeros(0), 0.0, -E.T @ b, E.T @ E, G,
                tol=self.tol, max_iter=PHASE1_MAX_ITER, detect_infeasible=False,
            )
            gap = np.linalg.norm(E @ res.x - b)
        return res.status == "optimal" and gap > INFEAS_MARGIN * (1 + self.eps)

    def interior_point(self):
        """Solve the linear-objective program with cvxopt; returns (x, converged, polished) or None."""
        from cvxopt import matrix, solvers

        M, E, b, eps, q, G = self.M, self.E, self.b, self.eps, self.q, self.G
        k, e, m = M.shape[0], E.shape[0], q.size
        if eps == 0.0 and k:
            return None
        rows, rhs = [-G], [np.zeros(G.shape[0])]
        if k:
            rows.append(np.vstack([np.zeros((1, m)), -M]))
            rhs.append(np.concatenate([[eps], np.zeros(k)]))
        dims = {"l": G.shape[0], "q": [k + 1] if k else [], "s": []}
        args = (matrix(q), matrix(np.vstack(rows)), matrix(np.concatenate(rhs)), dims, matrix(E), matrix(b))
        # a degenerate dual can break cvxopt's scaling update late in the run;
        # shorter runs still return a usable primal iterate for the polish
        for cap in (200, 40, 20, 10):
            opts = {"show_progress": False, "abstol": 1e-11, "reltol": 1e-11, "feastol": 1e-11, "maxiters": cap}
            try:
                sol = solvers.conelp(*args, options=opts)
                break
            except (ValueError, ArithmeticError):
                continue
        else:
            return None
        if sol["x"] is None:
            return None
        x = np.array(sol["x"]).ravel()
        z = np.array(sol["z"]).ravel()
        nl = G.shape[0]
        y = np.concatenate([z[nl + 1 :], np.zeros(e), -z[:nl]])
        xp = self.polish(x, y)
        if xp is not None:
            return xp, True, True
        if sol["status"] != "optimal":
            return x, False, False
        feasible = (
            (G @ x).min(initial=0.0) >= -self.tol
            and np.abs(E @ x - b).max(initial=0.0) <= self.tol
            and (not k or np.linalg.norm(M @ x) <= eps + self.tol)
        )
        return x, feasible, False

    def polish(self, x, y):
        """Re-solve on the active set implied by the ADMM iterate; None unless KKT checks pass."""
        M, E, b, eps, q, P, G, tol = self.M, self.E, self.b, self.eps, self.q, self.P, self.G, self.tol
        k, e = M.shape[0], E.shape[0]
        act = G @ x < -y[k + e :]
        GA = G[act]
        ball_active = (
            eps > 0 and k > 0 and np.linalg.norm(M @ x) >= eps * (1 - 1e-4) and np.linalg.norm(y[:k]) > 1e-12
        )
        eq_rows, eq_rhs = [E, GA], [b, np.zeros(GA.shape[0])]
        if eps == 0.0 and k:
            eq_rows.insert(0, M)
            eq_rhs.insert(0, np.zeros(k))
        Aeq = np.vstack(eq_rows)
        beq = np.concatenate(eq_rhs)
        n_pre = Aeq.shape[0] - GA.shape[0]

        if ball_active:
            sol = _ball_path(M, Aeq, beq, eps, q, P, np.linalg.norm(y[:k]) / eps)
        else:
            sol = _eq_qp(P, q, Aeq, beq)
        if sol is None:
            return None
        xn, lam = sol[0], sol[1]
        scale = 1.0 + np.abs(q).max()
        if lam[n_pre:].max(initial=0.0) > tol * scale:
            # degenerate vertex: certify with every constraint tight at xn
            Gx = G @ xn
            tight = Gx <= 1e-9 * (1.0 + np.abs(Gx).max())
            grad = q + P @ xn
            if ball_active:
                grad = grad + sol[2] * (M.T @ (M @ xn))
            if not _signed_multipliers(np.vstack([Aeq[:n_pre], G[tight]]), grad, n_pre, tol * scale):
                return None
        if (G @ xn).min(initial=0.0) < -1e-10:
            return None
        if np.abs(E @ xn - b).max(initial=0.0) > 1e-10:
            return None
        if k and np.linalg.norm(M @ xn) > eps + 1e-9 * (1 + eps):
            return None
        return xn


def _signed_multipliers(Aeq, grad, n_free, atol) -> bool:
    """Whether ``grad + Aeq' lam = 0`` has a solution with the trailing multipliers <= 0."""
    lb = np.full(Aeq.shape[0], -np.inf)
    ub = np.concatenate([np.full(n_free, np.inf), np.zeros(Aeq.shape[0] - n_free)])
    res = lsq_linear(Aeq.T, -grad, bounds=(lb, ub), method="bvls", tol=1e-12)
    return np.abs(Aeq.T @ res.x + grad).max() <= atol


def _eq_qp(P, q, Aeq, beq):
    """KKT point of min q'x + 1/2 x'Px s.t. Aeq x = beq, multipliers signed so q + Px + Aeq'lam = 0."""
    m, c = q.size, Aeq.shape[0]
    K = np.block([[P, Aeq.T], [Aeq, np.zeros((c, c))]])
    rhs = np.concatenate([-q, beq])
    sol, *_ = np.linalg.lstsq(K, rhs, rcond=1e-12)
    if np.abs(K @ sol - rhs).max() > 1e-9 * (1 + np.abs(rhs).max()):
        return None
    return sol[:m], sol[m:]


def _ball_path(M, Aeq, beq, eps, q, P, t0):
    """KKT point with the ball held active, found along the penalty path.

    For fixed ``t`` the minimizer ``x(t)`` of ``q'x + 1/2 x'(P + t M'M)x`` on
    ``Aeq x = beq`` has ``||M x(t)||`` nonincreasing in ``t``; the multiplier is
    the root of ``||M x(t)|| = eps``, bracketed and refined in ``log t``.
    """
    H = M.T @ M

    def at(log_t):
        return _eq_qp(P + math.exp(log_t) * H, q, Aeq, beq)

    def gap(log_t):
        sol = at(log_t)
        return math.inf if sol is None else float(np.linalg.norm(M @ sol[0])) - eps

    lo = hi = math.log(max(t0, 1e-8))
    g_lo = g_hi = gap(lo)
    for _ in range(60):
        if g_lo > 0:
            break
        lo -= 2.0
        g_lo = gap(lo)
    for _ in range(60):
        if g_hi <= 0:
            break
        hi += 2.0
        g_hi = gap(hi)
    if not (g_lo > 0 >= g_hi) or math.isinf(g_lo):
        return None
    root = brentq(gap, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=200)
    sol = at(root)
    if sol is None:
        return None
    return sol[0], sol[1], math.exp(root)
