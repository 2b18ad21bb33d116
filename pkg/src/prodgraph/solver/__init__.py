from .estimators import (
    InfeasibleError,
    SolveReport,
    SolverOptions,
    commutator_operator,
    kron_commutator_operator,
    solve_kst,
    solve_l1_commute,
    solve_sepkst,
    solve_st,
)

__all__ = [
    "InfeasibleError",
    "SolveReport",
    "SolverOptions",
    "commutator_operator",
    "kron_commutator_operator",
    "reference_solve_small",
    "solve_kst",
    "solve_l1_commute",
    "solve_sepkst",
    "solve_st",
]


def __getattr__(name):
    # cvxpy is slow to import; load the reference solver on first use
    if name == "reference_solve_small":
        from .reference import reference_solve_small

        return reference_solve_small
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
