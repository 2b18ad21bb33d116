"""Seeded multi-trial experiment sweeps with CSV/JSON outputs."""

from __future__ import annotations

import csv
import dataclasses
import io as _io
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .graph import ProductKind, erdos_renyi, is_connected, product
from .io import FormatError, fmt_float, write_json
from .metrics import TAU_DEFAULT, binarize, commutativity, eval_product, fscore
from .signals import (
    CovarianceSet,
    ExhaustedRetries,
    analytic_cov,
    generate_2d,
    generate_mrf,
    generate_polycov,
    mrf_covariance,
    partial_traces,
    poly_covariance_filter,
    random_filter,
    sample_cov,
)
from .solver import InfeasibleError, SolveReport, SolverOptions, solve_kst, solve_sepkst, solve_st

__all__ = [
    "ANALYTIC",
    "METHOD_IDS",
    "RESULT_FIELDS",
    "SUMMARY_FIELDS",
    "ConfigError",
    "SchemaMismatch",
    "ExperimentConfig",
    "RunRecord",
    "trial_seed",
    "run_experiment",
    "summarize",
    "read_results",
    "default_solver",
]

ANALYTIC = "analytic"
# stable registry ids: adding a method never shifts another method's seeds
METHOD_IDS = {"st": 0, "kst": 1, "sepkst": 2}
EXPERIMENTS = ("accuracy_vs_size", "accuracy_vs_samples", "baseline_models")
GENERATORS = ("assumption1", "mrf", "poly")
SAMPLE_EPSILON = 0.05
MAX_CONNECT_DRAWS = 1000

RESULT_FIELDS = [
    "method", "P", "Q", "R", "seed", "tau", "precision", "recall",
    "fscore_p", "fscore_q", "fscore_prod", "commutativity", "wall_time_s",
]
SUMMARY_METRICS = ["fscore_prod", "fscore_p", "fscore_q", "commutativity", "wall_time_s"]
SUMMARY_FIELDS = ["method", "P", "Q", "R", "n"] + [f"{m}_{s}" for m in SUMMARY_METRICS for s in ("mean", "std")]


class ConfigError(ValueError):
    pass


class SchemaMismatch(ValueError):
    pass


def default_solver(sample: bool) -> SolverOptions:
    """Exact commutativity for analytic covariances, a 5% relative ball for sample ones."""
    if sample:
        return SolverOptions(epsilon=SAMPLE_EPSILON, relative_epsilon=True)
    return SolverOptions()


@dataclass(frozen=True)
class ExperimentConfig:
    """Sweep definition; JSON configs use exactly these field names.

    ``solver`` left unset picks :func:`default_solver` per covariance type.
    ``product_kind`` left unset means kronecker for filtered-noise signals and
    cartesian for the mrf/poly generators. ``record_timing = False`` drops wall
    times and the timestamp so repeated runs are byte-identical.
    """

    experiment: str
    sizes: tuple[tuple[int, int], ...]
    sample_counts: tuple[int | str, ...] = (ANALYTIC,)
    trials: int = 100
    er_p: float = 0.3
    filter_L: int = 3
    methods: tuple[str, ...] = ("sepkst",)
    generator: str = "assumption1"
    solver: SolverOptions | None = None
    tau: float = TAU_DEFAULT
    master_seed: int = 0
    output_dir: str = "results"
    product_kind: str | None = None
    connected: bool = False
    record_timing: bool = True
    workers: int = 1

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {self.experiment!r}")
        if not self.sizes:
            raise ConfigError("sizes must be nonempty")
        for pq in self.sizes:
            if len(pq) != 2 or min(pq) < 2:
                raise ConfigError(f"sizes entries must be [P, Q] with P, Q >= 2, got {pq!r}")
        if not self.sample_counts:
            raise ConfigError("sample_counts must be nonempty")
        for R in self.sample_counts:
            if R != ANALYTIC and not (isinstance(R, int) and R >= 1):
                raise ConfigError(f"sample counts must be positive integers or {ANALYTIC!r}, got {R!r}")
        if not self.methods:
            raise ConfigError("methods must be nonempty")
        for m in self.methods:
            if m not in METHOD_IDS:
                raise ConfigError(f"unknown method {m!r}; choose from {sorted(METHOD_IDS)}")
        if len(set(self.methods)) != len(self.methods):
            raise ConfigError("methods must not repeat")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if not 0.0 <= self.er_p <= 1.0:
            raise ConfigError("er_p must lie in [0, 1]")
        if self.filter_L < 1:
            raise ConfigError("filter_L must be >= 1")
        if self.generator not in GENERATORS:
            raise ConfigError(f"generator must be one of {GENERATORS}")
        if not 0.0 < self.tau < 1.0:
            raise ConfigError("tau must lie in (0, 1)")
        if self.master_seed < 0:
            raise ConfigError("master_seed must be non-negative")
        if self.product_kind is not None:
            ProductKind(self.product_kind)
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    @property
    def kind(self) -> ProductKind:
        if self.product_kind is not None:
            return ProductKind(self.product_kind)
        return ProductKind.KRONECKER if self.generator == "assumption1" else ProductKind.CARTESIAN

    def solver_for(self, R) -> SolverOptions:
        return self.solver if self.solver is not None else default_solver(R != ANALYTIC)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        d = dict(d)
        try:
            d["sizes"] = tuple(tuple(int(v) for v in pq) for pq in d.get("sizes", ()))
            if "sample_counts" in d:
                d["sample_counts"] = tuple(r if r == ANALYTIC else _as_int(r) for r in d["sample_counts"])
            if "methods" in d:
                d["methods"] = tuple(d["methods"])
            if d.get("solver") is not None:
                d["solver"] = SolverOptions.from_dict(d["solver"])
            return cls(**d)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["sizes"] = [list(pq) for pq in self.sizes]
        d["sample_counts"] = list(self.sample_counts)
        d["methods"] = list(self.methods)
        d["solver"] = self.solver.to_dict() if self.solver is not None else None
        return d


def _as_int(v) -> int:
    if isinstance(v, bool) or not float(v).is_integer():
        raise ConfigError(f"sample count {v!r} is not an integer")
    return int(v)


@dataclass
class RunRecord:
    config: ExperimentConfig
    rows: list[dict[str, Any]]
    reports: dict[str, dict[str, Any]] = field(default_factory=dict)
    environment: dict[str, Any] = field(default_factory=dict)


def trial_seed(master: int, size_idx: int, trial: int, *extra: int) -> int:
    """63-bit seed, a pure function of its integer arguments."""
    ss = np.random.SeedSequence([master, size_idx, trial, *extra])
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


# stream tags for trial_seed(..., tag); nonzero because SeedSequence ignores trailing zeros
_GRAPH_P, _GRAPH_Q, _FILTER_P, _FILTER_Q, _NOISE, _COEFFS = range(1, 7)


def _draw_graph(n: int, p: float, seed: int, connected: bool):
    if not connected:
        return erdos_renyi(n, p, seed)
    for k in range(MAX_CONNECT_DRAWS):
        G = erdos_renyi(n, p, trial_seed(seed, k, 1))
        if is_connected(G):
            return G
    raise ExhaustedRetries(f"no connected ER({n}, {p}) graph in {MAX_CONNECT_DRAWS} draws")


def _covariances(cfg: ExperimentConfig, P, Q, gp, gq, seeds, R) -> tuple[CovarianceSet, dict[str, Any]]:
    """Covariances seen by the solvers plus generation flags for the reports."""
    flags: dict[str, Any] = {}
    if cfg.generator == "assumption1":
        hp = random_filter(gp, cfg.filter_L, seeds[_FILTER_P])
        hq = random_filter(gq, cfg.filter_L, seeds[_FILTER_Q])
        if R == ANALYTIC:
            return analytic_cov(hp, hq), flags
        return sample_cov(generate_2d(hp, hq, R, seeds[_NOISE])), flags

    S = product(gp, gq, cfg.kind)
    if cfg.generator == "mrf":
        if R == ANALYTIC:
            c_y = mrf_covariance(S)
        else:
            return sample_cov(generate_mrf(S, P, Q, R, seeds[_NOISE])), flags
    else:
        coeffs = np.random.default_rng(seeds[_COEFFS]).uniform(-1.0, 1.0, cfg.filter_L)
        F = poly_covariance_filter(S, coeffs, allow_singular=True)
        s = np.abs(np.linalg.eigvalsh(F))
        flags["singular_filter"] = bool(s.max() == 0 or s.min() < 1e-8 * s.max())
        if R == ANALYTIC:
            c_y = F @ F
        else:
            t = generate_polycov(S, coeffs, P, Q, R, seeds[_NOISE], allow_singular=True)
            return sample_cov(t), flags
    c_p, c_q = partial_traces(c_y, P, Q)
    return CovarianceSet(c_p, c_q, c_y, ANALYTIC, None), flags


def _solve(method: str, cov: CovarianceSet, P: int, Q: int, opts: SolverOptions) -> SolveReport:
    if method == "sepkst":
        return solve_sepkst(cov.c_p, cov.c_q, opts)
    if method == "kst":
        return solve_kst(cov.c_y, P, Q, opts)
    return solve_st(cov.c_y, opts)


def _nan() -> float:
    return float("nan")


def _score(method, rep: SolveReport | None, gp, gq, cov, cfg, P, Q):
    """(precision, recall, fscore_p, fscore_q, fscore_prod, commutativity) for one solve."""
    tp, tq = np.asarray(gp), np.asarray(gq)
    true_prod = (np.asarray(product(gp, gq, cfg.kind)) != 0).astype(np.int8)
    if method == "st":
        S = None if rep is None or rep.s_full is None else np.asarray(rep.s_full)
        pred = binarize(S, cfg.tau) if S is not None else np.zeros_like(true_prod)
        r = fscore(pred, true_prod)
        com = commutativity(cov.c_y, S) if S is not None else _nan()
        return r.precision, r.recall, _nan(), _nan(), r.fscore, com
    sp = None if rep is None or rep.s_p is None else np.asarray(rep.s_p)
    sq = None if rep is None or rep.s_q is None else np.asarray(rep.s_q)
    ev = eval_product(
        sp if sp is not None else np.zeros((P, P)),
        sq if sq is not None else np.zeros((Q, Q)),
        tp,
        tq,
        cfg.kind,
        tau=cfg.tau,
    )
    com = commutativity(cov.c_y, np.kron(sq, sp)) if sp is not None and sq is not None else _nan()
    return ev.prod.precision, ev.prod.recall, ev.p.fscore, ev.q.fscore, ev.prod.fscore, com


def _run_cell(cfg: ExperimentConfig, size_idx: int, trial: int):
    """All (R, method) runs for one ground-truth draw; returns (rows, reports) keyed for sorting."""
    P, Q = cfg.sizes[size_idx]
    seed = trial_seed(cfg.master_seed, size_idx, trial)
    seeds = {tag: trial_seed(cfg.master_seed, size_idx, trial, tag) for tag in range(1, 7)}
    out_rows, out_reports = [], []
    try:
        gp = _draw_graph(P, cfg.er_p, seeds[_GRAPH_P], cfg.connected)
        gq = _draw_graph(Q, cfg.er_p, seeds[_GRAPH_Q], cfg.connected)
    except ExhaustedRetries as exc:
        gp = gq = None
        setup_error = str(exc)
    else:
        setup_error = None

    for r_idx, R in enumerate(cfg.sample_counts):
        cov, flags, error = None, {}, setup_error
        if error is None:
            try:
                cov, flags = _covariances(cfg, P, Q, gp, gq, seeds, R)
            except (ExhaustedRetries, ValueError) as exc:
                error = f"{type(exc).__name__}: {exc}"
        for method in cfg.methods:
            key = (size_idx, r_idx, cfg.methods.index(method), trial)
            name = f"{method}_P{P}_Q{Q}_R{R}_t{trial:04d}"
            rep, status = None, "error"
            wall = _nan()
            if error is None:
                opts = cfg.solver_for(R)
                t0 = time.perf_counter()
                try:
                    rep = _solve(method, cov, P, Q, opts)
                    status = rep.status
                except InfeasibleError as exc:
                    rep, status = exc.report, "infeasible"
                wall = time.perf_counter() - t0
                scores = _score(method, rep, gp, gq, cov, cfg, P, Q)
            else:
                factor = _nan() if method == "st" else 0.0
                scores = (0.0, 0.0, factor, factor, 0.0, _nan())
            row = dict(zip(RESULT_FIELDS, (method, P, Q, R, seed, cfg.tau, *scores, wall)))
            if not cfg.record_timing:
                row["wall_time_s"] = _nan()
            report = {
                "method": method,
                "P": P,
                "Q": Q,
                "R": R,
                "trial": trial,
                "seed": seed,
                "status": status,
                "generation": flags,
            }
            if rep is not None:
                report["solve"] = rep.to_dict(timing=cfg.record_timing)
            if error is not None:
                report["error"] = error
            out_rows.append((key, row))
            out_reports.append((key, name, report))
    return out_rows, out_reports


def _worker_count(cfg: ExperimentConfig) -> int:
    env = os.environ.get("PRODGRAPH_WORKERS")
    if env is None:
        return cfg.workers
    try:
        n = int(env)
    except ValueError as exc:
        raise ConfigError(f"PRODGRAPH_WORKERS must be an integer, got {env!r}") from exc
    if n < 1:
        raise ConfigError("PRODGRAPH_WORKERS must be >= 1")
    return n


def _cell_job(args):
    return _run_cell(*args)


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> RunRecord:
    """Run every (size, R, method, trial) combination.

    Cells (one ground truth per size and trial) may run in parallel; rows are
    sorted by (size, R, method, trial) afterwards so the outputs do not depend
    on the worker count.
    """
    jobs = [(cfg, s, t) for s in range(len(cfg.sizes)) for t in range(cfg.trials)]
    workers = _worker_count(cfg)
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_cell_job, jobs))
    else:
        results = [_cell_job(j) for j in jobs]
    rows = sorted((r for res in results for r in res[0]), key=lambda kr: kr[0])
    reports = sorted((r for res in results for r in res[1]), key=lambda kr: kr[0])
    env = {"version": __version__}
    if cfg.record_timing:
        env["timestamp"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    record = RunRecord(cfg, [r for _, r in rows], {name: rep for _, name, rep in reports}, env)
    if write:
        write_record(record, Path(cfg.output_dir))
    return record


def _cell(v) -> str:
    if isinstance(v, float):
        return fmt_float(v)
    return str(v)


def rows_to_csv(rows: list[dict[str, Any]], fields: list[str]) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    for r in rows:
        w.writerow([_cell(r[f]) for f in fields])
    return buf.getvalue()


def write_record(record: RunRecord, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "reports").mkdir(exist_ok=True)
    (out / "results.csv").write_text(rows_to_csv(record.rows, RESULT_FIELDS), encoding="utf-8")
    for name, rep in record.reports.items():
        write_json(out / "reports" / f"{name}.json", rep)
    (out / "summary.csv").write_text(rows_to_csv(summarize(record.rows), SUMMARY_FIELDS), encoding="utf-8")
    write_json(out / "run.json", {"config": record.config.to_dict(), "environment": record.environment})


def read_results(path) -> list[dict[str, Any]]:
    """Load a results CSV, converting numeric columns."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != RESULT_FIELDS:
            raise SchemaMismatch(f"{path}: columns {reader.fieldnames} != {RESULT_FIELDS}")
        rows = []
        for i, raw in enumerate(reader, start=2):
            try:
                row = {"method": raw["method"], "P": int(raw["P"]), "Q": int(raw["Q"])}
                row["R"] = raw["R"] if raw["R"] == ANALYTIC else int(raw["R"])
                row["seed"] = int(raw["seed"])
                for f in RESULT_FIELDS[5:]:
                    row[f] = float(raw[f])
            except (TypeError, ValueError) as exc:
                raise FormatError(f"{path}:{i}: {exc}") from exc
            rows.append(row)
    return rows


def _r_key(R) -> tuple[int, int]:
    return (1, 0) if R == ANALYTIC else (0, int(R))


def summarize(rows: list[dict[str, Any]]) -> list[dict[str, Any]]:
    """Mean and population std per (method, P, Q, R); NaN entries (failed solves) are skipped."""
    groups: dict[tuple, list[dict[str, Any]]] = {}
    for r in rows:
        if set(r) != set(RESULT_FIELDS):
            raise SchemaMismatch(f"row fields {sorted(r)} != {sorted(RESULT_FIELDS)}")
        groups.setdefault((r["method"], r["P"], r["Q"], r["R"]), []).append(r)
    out = []
    for (method, P, Q, R), rs in sorted(
        groups.items(), key=lambda kv: (METHOD_IDS.get(kv[0][0], 99), kv[0][0], kv[0][1], kv[0][2], _r_key(kv[0][3]))
    ):
        s: dict[str, Any] = {"method": method, "P": P, "Q": Q, "R": R, "n": len(rs)}
        for m in SUMMARY_METRICS:
            v = np.array([float(r[m]) for r in rs])
            v = v[~np.isnan(v)]
            s[f"{m}_mean"] = float(v.mean()) if v.size else math.nan
            s[f"{m}_std"] = float(v.std()) if v.size else math.nan
        out.append(s)
    return out
