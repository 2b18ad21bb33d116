"""``prodgraph generate|solve|eval|bench|summarize``.

Exit codes: 0 success, 2 usage error, 3 input-format error, 4 solver
infeasible or iteration cap (the report is still written).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .bench import (
    ANALYTIC,
    SUMMARY_FIELDS,
    ConfigError,
    ExperimentConfig,
    SchemaMismatch,
    default_solver,
    read_results,
    rows_to_csv,
    run_experiment,
    summarize,
)
from .graph import GsoError, NormMode, erdos_renyi, normalize, product
from .io import (
    FormatError,
    jsonable,
    read_gso,
    read_json,
    read_matrix,
    write_gso,
    write_json,
    write_matrix,
    write_tensor,
)
from .metrics import DimensionMismatch, binarize, commutativity, fscore
from .signals import analytic_cov, generate_2d, random_filter, sample_cov
from .solver import InfeasibleError, SolverOptions, solve_kst, solve_sepkst, solve_st

EXIT_OK, EXIT_USAGE, EXIT_FORMAT, EXIT_SOLVER = 0, 2, 3, 4


class UsageError(Exception):
    pass


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="prodgraph", description="Product-graph topology inference from 2-D signals.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="random graphs, covariances and signal tensors")
    mode = g.add_mutually_exclusive_group(required=True)
    mode.add_argument("--er", nargs=2, metavar=("N", "P"), help="one ER graph with N nodes and edge probability P")
    mode.add_argument("--pair", nargs=2, type=int, metavar=("P", "Q"), help="factor graphs plus their covariances")
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--er-p", type=float, default=0.3, help="edge probability for --pair")
    g.add_argument("--L", type=int, default=3, help="filter taps for --pair")
    g.add_argument("--R", default=ANALYTIC, help="sample count for --pair, or 'analytic'")
    g.add_argument("--norm-mode", default=NormMode.BINARY.value, choices=[m.value for m in NormMode])
    g.add_argument("--out-dir", default=".")

    s = sub.add_parser("solve", help="estimate GSOs from covariance CSVs")
    s.add_argument("method", choices=["st", "kst", "sepkst"])
    s.add_argument("--cp")
    s.add_argument("--cq")
    s.add_argument("--cy")
    s.add_argument("--P", type=int)
    s.add_argument("--Q", type=int)
    s.add_argument("--eps", type=float, help="commutator radius (default: 0, or 0.05 relative with --sample)")
    s.add_argument("--relative-eps", action="store_true", help="read --eps as a fraction of ||C||_F")
    s.add_argument("--sample", action="store_true", help="inputs are sample covariances")
    s.add_argument("--norm-mode", default=NormMode.FIRST_ROW_UNIT.value)
    s.add_argument("--tol", type=float, default=1e-6)
    s.add_argument("--max-iter", type=int, default=5000)
    s.add_argument("--escalate", type=int, default=0)
    s.add_argument("--no-timing", action="store_true", help="omit wall time from the report")
    s.add_argument("--out-dir", default=".")

    e = sub.add_parser("eval", help="score an estimate against a ground truth")
    e.add_argument("--pred", required=True)
    e.add_argument("--truth", required=True)
    e.add_argument("--tau", type=float, default=0.1)
    e.add_argument("--cov", help="covariance for the commutativity residual")
    e.add_argument("--out")

    b = sub.add_parser("bench", help="run an experiment config")
    b.add_argument("--config", required=True)
    b.add_argument("--output-dir", help="override the config's output_dir")

    m = sub.add_parser("summarize", help="aggregate a results CSV")
    m.add_argument("--results", required=True)
    m.add_argument("--out")
    return p


def _read_any_gso(path: str) -> np.ndarray:
    if path.endswith(".gso.csv"):
        return np.asarray(read_gso(path, atol=1e-6, norm_atol=1e-6))
    return read_matrix(path)


def cmd_generate(a) -> int:
    out = Path(a.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if a.er is not None:
        try:
            n, p = int(a.er[0]), float(a.er[1])
        except ValueError as exc:
            raise UsageError(f"--er expects an integer and a probability: {exc}") from exc
        G = normalize(erdos_renyi(n, p, a.seed), a.norm_mode)
        path = write_gso(out, f"er{n}_seed{a.seed}", G)
        print(path)
        return EXIT_OK

    P, Q = a.pair
    R = a.R if a.R == ANALYTIC else _int(a.R, "--R")
    gp = erdos_renyi(P, a.er_p, 2 * a.seed)
    gq = erdos_renyi(Q, a.er_p, 2 * a.seed + 1)
    hp = random_filter(gp, a.L, 2 * a.seed)
    hq = random_filter(gq, a.L, 2 * a.seed + 1)
    write_gso(out, "truth_p", gp)
    write_gso(out, "truth_q", gq)
    write_gso(out, "truth_prod", product(gp, gq))
    if R == ANALYTIC:
        cov = analytic_cov(hp, hq)
    else:
        t = generate_2d(hp, hq, R, a.seed)
        write_tensor(out / "tensor", t)
        cov = sample_cov(t)
    write_matrix(out / "cp.csv", cov.c_p)
    write_matrix(out / "cq.csv", cov.c_q)
    write_matrix(out / "cy.csv", cov.c_y)
    print(out)
    return EXIT_OK


def _int(v: str, flag: str) -> int:
    try:
        return int(v)
    except ValueError as exc:
        raise UsageError(f"{flag} must be an integer or '{ANALYTIC}'") from exc


def cmd_solve(a) -> int:
    base = default_solver(a.sample)
    try:
        opts = SolverOptions(
            epsilon=base.epsilon if a.eps is None else a.eps,
            relative_epsilon=base.relative_epsilon if a.eps is None else a.relative_eps,
            norm_mode=a.norm_mode,
            tol=a.tol,
            max_iter=a.max_iter,
            escalate=a.escalate,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if a.method == "sepkst":
        if not (a.cp and a.cq):
            raise UsageError("sepkst needs --cp and --cq")
        run = lambda: solve_sepkst(read_matrix(a.cp), read_matrix(a.cq), opts)
    elif a.method == "kst":
        if not (a.cy and a.P and a.Q):
            raise UsageError("kst needs --cy, --P and --Q")
        run = lambda: solve_kst(read_matrix(a.cy), a.P, a.Q, opts)
    else:
        if not a.cy:
            raise UsageError("st needs --cy")
        run = lambda: solve_st(read_matrix(a.cy), opts)

    out = Path(a.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        rep = run()
    except InfeasibleError as exc:
        rep = exc.report
        rep.status = "infeasible"
    for stem, S in (("s_p", rep.s_p), ("s_q", rep.s_q), ("s_full", rep.s_full)):
        if S is not None:
            write_gso(out, f"{a.method}_{stem}", S)
    write_json(out / f"{a.method}_report.json", rep.to_dict(timing=not a.no_timing))
    summary = {"status": rep.status, "objective": rep.objective, "commut_residual": rep.commut_residual}
    print(json.dumps(jsonable(summary), sort_keys=True))
    return EXIT_OK if rep.status == "optimal" else EXIT_SOLVER


def cmd_eval(a) -> int:
    pred = binarize(_read_any_gso(a.pred), a.tau)
    truth = (_read_any_gso(a.truth) != 0).astype(np.int8)
    res = fscore(pred, truth).to_dict()
    if a.cov:
        res["commutativity"] = commutativity(read_matrix(a.cov), _read_any_gso(a.pred))
    text = json.dumps(jsonable(res), sort_keys=True)
    if a.out:
        write_json(a.out, res)
    print(text)
    return EXIT_OK


def cmd_bench(a) -> int:
    raw = read_json(a.config)
    if a.output_dir is not None:
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        raw = {**raw, "output_dir": a.output_dir}
    cfg = ExperimentConfig.from_dict(raw)
    run_experiment(cfg)
    print(Path(cfg.output_dir) / "results.csv")
    return EXIT_OK


def cmd_summarize(a) -> int:
    text = rows_to_csv(summarize(read_results(a.results)), SUMMARY_FIELDS)
    if a.out:
        Path(a.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "solve": cmd_solve,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "summarize": cmd_summarize,
}


def main(argv: list[str] | None = None) -> int:
    parser = _parser()
    try:
        a = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[a.command](a)
    except (UsageError, ConfigError) as exc:
        print(f"prodgraph: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, GsoError, SchemaMismatch, DimensionMismatch, FileNotFoundError) as exc:
        print(f"prodgraph: input error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except ValueError as exc:
        print(f"prodgraph: input error: {exc}", file=sys.stderr)
        return EXIT_FORMAT


if __name__ == "__main__":
    sys.exit(main())
