"""ST, K-ST and SepK-ST estimators over the shared sparse-commutant program."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field, replace
from typing import Any

import numpy as np

from ..graph import Gso, NormMode, validate_gso
from ..signals import partial_traces
from .admm import ConeResult, compress_rows, null_space, solve_cone

__all__ = [
    "SolverOptions",
    "SolveReport",
    "InfeasibleError",
    "solve_l1_commute",
    "solve_st",
    "solve_kst",
    "solve_sepkst",
    "commutator_operator",
    "commutant_edges",
    "kron_commutator_operator",
    "edges_to_matrix",
    "normalization_rows",
]

STATUSES = ("optimal", "max_iter", "infeasible")


@dataclass(frozen=True)
class SolverOptions:
    """Solver settings.

    ``epsilon`` is the radius of the commutator ball ``||CS - SC||_F <= epsilon``.
    With ``relative_epsilon`` it is read as a fraction of ``||C||_F`` instead,
    which lets one setting serve covariances of different scale.
    ``escalate`` allows that many doublings of a positive radius when a
    problem is infeasible; the radius actually used is reported.
    """

    epsilon: float = 0.0
    norm_mode: NormMode = NormMode.FIRST_ROW_UNIT
    beta: float = 1.0
    tol: float = 1e-6
    max_iter: int = 5000
    alt_max_rounds: int = 20
    alt_rel_change: float = 1e-4
    relative_epsilon: bool = False
    escalate: int = 0

    def __post_init__(self):
        object.__setattr__(self, "norm_mode", NormMode(self.norm_mode))
        if self.norm_mode is NormMode.BINARY:
            raise ValueError("solver norm_mode must be first-row-unit or row-stochastic")
        if not self.epsilon >= 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        for name in ("beta", "tol", "alt_rel_change"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if int(self.escalate) < 0:
            raise ValueError("escalate must be >= 0")
        for name in ("max_iter", "alt_max_rounds"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")

    def radius(self, C: np.ndarray) -> float:
        """Absolute commutator radius for covariance ``C``."""
        return self.epsilon * np.linalg.norm(C) if self.relative_epsilon else self.epsilon

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["norm_mode"] = self.norm_mode.value
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SolverOptions":
        return cls(**d)


@dataclass
class SolveReport:
    s_p: Gso | None = None
    s_q: Gso | None = None
    s_full: Gso | None = None
    objective: float = float("nan")
    commut_residual: float = float("nan")
    iterations: int = 0
    alt_rounds: int | None = None
    wall_time_s: float = 0.0
    status: str = "optimal"
    options: SolverOptions = field(default_factory=SolverOptions)
    details: dict[str, Any] = field(default_factory=dict)

    def to_dict(self, timing: bool = True) -> dict[str, Any]:
        return {
            "status": self.status,
            "objective": self.objective,
            "commut_residual": self.commut_residual,
            "iterations": self.iterations,
            "alt_rounds": self.alt_rounds,
            "wall_time_s": self.wall_time_s if timing else None,
            "options": self.options.to_dict(),
            "details": self.details,
        }


class InfeasibleError(RuntimeError):
    """The commutator constraint cannot be met inside the GSO set; ``report`` holds what was computed."""

    def __init__(self, message: str, report: SolveReport):
        super().__init__(message)
        self.report = report


def _triu(n: int):
    return np.triu_indices(n, 1)


def edges_to_matrix(x: np.ndarray, n: int) -> np.ndarray:
    S = np.zeros((n, n))
    S[_triu(n)] = x
    return S + S.T


def normalization_rows(n: int, norm_mode: NormMode) -> tuple[np.ndarray, np.ndarray]:
    """Linear rows ``E x = b`` encoding the normalization on the edge vector."""
    i, j = _triu(n)
    if norm_mode is NormMode.FIRST_ROW_UNIT:
        return (i == 0).astype(float)[None, :], np.ones(1)
    E = np.zeros((n, i.size))
    cols = np.arange(i.size)
    E[i, cols] = 1.0
    E[j, cols] = 1.0
    return E, np.ones(n)


def commutator_operator(C: np.ndarray) -> np.ndarray:
    """Matrix ``M`` with ``||M x|| == ||C S(x) - S(x) C||_F`` for the edge vector ``x``.

    Rows are the strictly upper entries of the (antisymmetric) commutator,
    scaled by sqrt(2); columns follow ``np.triu_indices(n, 1)``.
    """
    n = C.shape[0]
    i, j = _triu(n)
    m = i.size
    ar = np.arange(m)
    K = np.zeros((m, n, n))
    K[ar, :, j] += C[:, i].T
    K[ar, :, i] += C[:, j].T
    K[ar, i, :] -= C[j, :]
    K[ar, j, :] -= C[i, :]
    return np.sqrt(2.0) * K[:, i, j].T


def kron_commutator_operator(c_y: np.ndarray, fixed: np.ndarray, P: int, Q: int, free: str) -> np.ndarray:
    """Commutator operator of ``c_y`` against ``S_Q (x) S_P`` with one factor fixed.

    ``free`` names the factor carried by the edge vector ("p" or "q").
    """
    n = P if free == "p" else Q
    i, j = _triu(n)
    basis = np.zeros((i.size, n, n))
    ar = np.arange(i.size)
    basis[ar, i, j] = 1.0
    basis[ar, j, i] = 1.0
    if free == "p":
        G = np.einsum("ab,kcd->kacbd", fixed, basis).reshape(i.size, P * Q, P * Q)
    else:
        G = np.einsum("kab,cd->kacbd", basis, fixed).reshape(i.size, P * Q, P * Q)
    K = c_y @ G - G @ c_y
    N = P * Q
    I, J = _triu(N)
    return np.sqrt(2.0) * K[:, I, J].T


def _check_cov(C: np.ndarray, name: str = "C") -> np.ndarray:
    C = np.asarray(C, dtype=float)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise ValueError(f"{name} must be square, got shape {C.shape}")
    if C.shape[0] < 2:
        raise ValueError(f"{name} must be at least 2x2")
    scale = max(np.abs(C).max(), 1.0)
    if np.abs(C - C.T).max() > 1e-8 * scale:
        raise ValueError(f"{name} is not symmetric")
    return 0.5 * (C + C.T)


def _fro(C: np.ndarray) -> float:
    f = float(np.linalg.norm(C))
    return f if f > 0 else 1.0


def _commut(C: np.ndarray, S: np.ndarray) -> float:
    return float(np.linalg.norm(C @ S - S @ C))


def commutant_edges(C: np.ndarray, gap_tol: float) -> np.ndarray:
    """Edge-vector basis of the hollow symmetric matrices commuting with ``C``.

    Eigenvalues closer than ``gap_tol`` are treated as one eigenspace; the
    commutant is then block diagonal in the eigenbasis and hollowness is a
    linear condition on the block coordinates. Columns are orthogonal.
    """
    n = C.shape[0]
    vals, V = np.linalg.eigh(C)
    cuts = np.flatnonzero(np.diff(vals) > gap_tol) + 1
    mats = []
    for g in np.split(np.arange(n), cuts):
        for ia, a in enumerate(g):
            for b in g[ia:]:
                B = np.outer(V[:, a], V[:, b])
                mats.append(B if a == b else (B + B.T) / np.sqrt(2.0))
    B = np.array(mats)
    ar = np.arange(n)
    Z = null_space(B[:, ar, ar].T, gap_tol)
    i, j = _triu(n)
    return B[:, i, j].T @ Z


def _program(M: np.ndarray, n: int, eps: float, opts: SolverOptions, C: np.ndarray | None = None):
    """Solve the l1 program on the edge vector of an ``n``-node GSO.

    With ``eps == 0`` the feasible edge vectors form a subspace; it is built
    explicitly (from the eigenspaces of ``C`` when given, otherwise as the
    numerical null space of ``M``) and the remaining LP runs in its coordinates.
    """
    E, b = normalization_rows(n, opts.norm_mode)
    m = n * (n - 1) // 2
    if eps > 0:
        res = solve_cone(M, E, b, eps, np.ones(m), tol=opts.tol, max_iter=opts.max_iter)
        return edges_to_matrix(np.maximum(res.x, 0.0), n), res
    zero_tol = opts.tol * 0.1
    G = commutant_edges(C, zero_tol) if C is not None else null_space(compress_rows(M), zero_tol)
    if G.shape[1] == 0:
        return np.zeros((n, n)), ConeResult(np.zeros(m), "infeasible", 0, False, np.inf, np.inf)
    res = solve_cone(
        np.zeros((0, G.shape[1])), E @ G, b, 0.0, G.T @ np.ones(m), G=G, tol=opts.tol, max_iter=opts.max_iter
    )
    x = np.maximum(G @ res.x, 0.0)
    res.x = x
    return edges_to_matrix(x, n), res


def _as_gso(S: np.ndarray, opts: SolverOptions) -> Gso:
    return validate_gso(S, opts.norm_mode, atol=opts.tol, norm_atol=max(opts.tol, 1e-9))


def _solve_single(C: np.ndarray, eps: float, opts: SolverOptions):
    """Solve one sparse-commutant problem; returns (matrix, cone result)."""
    scale = _fro(C)
    Cn = C / scale
    if eps > 0:
        return _program(commutator_operator(Cn), C.shape[0], eps / scale, opts)
    return _program(np.zeros((0, 0)), C.shape[0], 0.0, opts, C=Cn)


def solve_l1_commute(C, opts: SolverOptions | None = None) -> SolveReport:
    """Sparsest GSO (in l1) whose commutator with ``C`` lies in the epsilon ball.

    Raises :class:`InfeasibleError` when no GSO in the normalized set fits;
    an iteration cap yields the last iterate with status ``max_iter``.
    """
    opts = opts or SolverOptions()
    t0 = time.perf_counter()
    C = _check_cov(C)
    eps = opts.radius(C)
    iterations = 0
    for attempt in range(opts.escalate + 1):
        if attempt:
            eps *= 2.0
        S, res = _solve_single(C, eps, opts)
        iterations += res.iterations
        if res.status != "infeasible" or eps == 0.0:
            break
    report = SolveReport(
        objective=float(np.abs(S).sum()),
        commut_residual=_commut(C, S),
        iterations=iterations,
        status=res.status,
        options=opts,
        details={
            "epsilon_abs": eps,
            "escalations": attempt,
            "polished": res.polished,
            "fallback": res.fallback,
            "norm_mode": opts.norm_mode.value,
        },
    )
    report.wall_time_s = time.perf_counter() - t0
    if res.status == "infeasible":
        raise InfeasibleError(f"no GSO within commutator radius {eps:.3g}", report)
    report.s_full = _as_gso(S, opts) if res.status == "optimal" else _loose_gso(S, opts)
    return report


def _loose_gso(S: np.ndarray, opts: SolverOptions) -> Gso | None:
    try:
        return validate_gso(S, opts.norm_mode, atol=np.inf, norm_atol=np.inf)
    except ValueError:
        return None


def solve_st(c_y, opts: SolverOptions | None = None) -> SolveReport:
    """Unstructured estimate of the full product-graph GSO from the vectorized covariance."""
    return solve_l1_commute(c_y, opts)


def _rel_change(new: np.ndarray, old: np.ndarray) -> float:
    return float(np.linalg.norm(new - old) / max(np.linalg.norm(old), 1e-300))


def _uniform_gso(n: int) -> np.ndarray:
    S = np.ones((n, n)) - np.eye(n)
    return S / (n - 1)


def solve_kst(
    c_y, P: int, Q: int, opts: SolverOptions | None = None, init_q: np.ndarray | None = None
) -> SolveReport:
    """Alternating estimate of ``(S_P, S_Q)`` under ``c_y (S_Q (x) S_P) == (S_Q (x) S_P) c_y``.

    Each half-step is the convex program in one factor with the other fixed.
    Unless ``init_q`` is given, ``S_Q`` starts from the dimension-wise problem
    on the partial trace of ``c_y`` (for a sample covariance that partial
    trace is exactly the dimension-wise sample covariance), falling back to
    the uniform complete graph if that problem is infeasible.
    """
    opts = opts or SolverOptions()
    t0 = time.perf_counter()
    c_y = _check_cov(c_y, "c_y")
    if c_y.shape[0] != P * Q:
        raise ValueError(f"c_y is {c_y.shape[0]}x{c_y.shape[0]}, expected P*Q = {P * Q}")
    eps = opts.radius(c_y)
    iterations = 0
    for attempt in range(opts.escalate + 1):
        if attempt:
            eps *= 2.0
        try:
            report = _kst(c_y, P, Q, opts, eps, init_q)
            break
        except InfeasibleError as exc:
            iterations += exc.report.iterations
            if attempt == opts.escalate or eps == 0.0:
                exc.report.iterations = iterations
                exc.report.details["escalations"] = attempt
                exc.report.wall_time_s = time.perf_counter() - t0
                raise
    report.iterations += iterations
    report.details["escalations"] = attempt
    report.wall_time_s = time.perf_counter() - t0
    return report


def _kst(c_y, P, Q, opts: SolverOptions, eps: float, init_q) -> SolveReport:
    scale = _fro(c_y)
    Cn = c_y / scale
    eps_n = eps / scale
    iterations = 0
    statuses: list[str] = []
    init = "given"

    if init_q is None:
        _, c_q0 = partial_traces(c_y, P, Q)
        try:
            sq_rep = solve_l1_commute(c_q0, replace(opts, epsilon=eps_n, relative_epsilon=True, escalate=0))
            S_Q = np.asarray(sq_rep.s_full)
            iterations += sq_rep.iterations
            init = "partial-trace"
        except InfeasibleError as exc:
            iterations += exc.report.iterations
            S_Q = _uniform_gso(Q)
            init = "uniform"
    else:
        S_Q = np.asarray(init_q, dtype=float)

    def report(S_P, S_Q, status, rounds, extra=None):
        r = SolveReport(
            objective=float(np.abs(S_P).sum() + opts.beta * np.abs(S_Q).sum()),
            commut_residual=_commut(c_y, np.kron(S_Q, S_P)),
            iterations=iterations,
            alt_rounds=rounds,
            status=status,
            options=opts,
            details={"epsilon_abs": eps, "init": init, "norm_mode": opts.norm_mode.value, **(extra or {})},
        )
        good = status == "optimal"
        r.s_p = _as_gso(S_P, opts) if good else _loose_gso(S_P, opts)
        r.s_q = _as_gso(S_Q, opts) if good else _loose_gso(S_Q, opts)
        return r

    S_P = None
    rounds = 0
    converged = False
    for rounds in range(1, opts.alt_max_rounds + 1):
        S_P_new, res = _program(kron_commutator_operator(Cn, S_Q, P, Q, "p"), P, eps_n, opts)
        iterations += res.iterations
        statuses.append(res.status)
        if res.status == "infeasible":
            raise InfeasibleError(
                f"S_P subproblem infeasible in round {rounds}",
                report(S_P if S_P is not None else np.zeros((P, P)), S_Q, "infeasible", rounds),
            )
        S_Q_new, res = _program(kron_commutator_operator(Cn, S_P_new, P, Q, "q"), Q, eps_n, opts)
        iterations += res.iterations
        statuses.append(res.status)
        if res.status == "infeasible":
            raise InfeasibleError(
                f"S_Q subproblem infeasible in round {rounds}",
                report(S_P_new, S_Q, "infeasible", rounds),
            )
        change = _rel_change(S_Q_new, S_Q)
        if S_P is not None:
            change = max(change, _rel_change(S_P_new, S_P))
        S_P, S_Q = S_P_new, S_Q_new
        if change < opts.alt_rel_change:
            converged = True
            break

    status = "optimal" if converged and all(s == "optimal" for s in statuses[-2:]) else "max_iter"
    return report(S_P, S_Q, status, rounds, {"converged": converged})


def solve_sepkst(c_p, c_q, opts: SolverOptions | None = None) -> SolveReport:
    """Two independent dimension-wise problems; beta only weights the reported objective.

    A failing factor does not prevent the other from being returned: the
    combined status is the worse of the two and ``details`` records each.
    """
    opts = opts or SolverOptions()
    t0 = time.perf_counter()
    c_p = _check_cov(c_p, "c_p")
    c_q = _check_cov(c_q, "c_q")
    parts: dict[str, SolveReport] = {}
    factor_status = {}
    for name, C in (("p", c_p), ("q", c_q)):
        try:
            parts[name] = solve_l1_commute(C, opts)
            factor_status[name] = parts[name].status
        except InfeasibleError as exc:
            parts[name] = exc.report
            factor_status[name] = "infeasible"

    rank = {s: i for i, s in enumerate(STATUSES)}
    status = max(factor_status.values(), key=rank.__getitem__)
    s_p, s_q = parts["p"].s_full, parts["q"].s_full
    norm = lambda S: float(np.abs(np.asarray(S)).sum()) if S is not None else float("nan")
    report = SolveReport(
        s_p=s_p,
        s_q=s_q,
        objective=norm(s_p) + opts.beta * norm(s_q),
        commut_residual=max(parts["p"].commut_residual, parts["q"].commut_residual),
        iterations=parts["p"].iterations + parts["q"].iterations,
        status=status,
        options=opts,
        details={
            "factor_status": factor_status,
            "commut_residual_p": parts["p"].commut_residual,
            "commut_residual_q": parts["q"].commut_residual,
            "epsilon_abs_p": parts["p"].details.get("epsilon_abs"),
            "epsilon_abs_q": parts["q"].details.get("epsilon_abs"),
            "norm_mode": opts.norm_mode.value,
        },
    )
    report.wall_time_s = time.perf_counter() - t0
    return report
