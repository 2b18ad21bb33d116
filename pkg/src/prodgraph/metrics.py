"""Binarization, edge F-scores and the commutativity residual."""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np

from .graph import ProductKind, product, validate_gso

__all__ = [
    "TAU_DEFAULT",
    "DimensionMismatch",
    "EvalResult",
    "ProductEval",
    "binarize",
    "fscore",
    "commutativity",
    "eval_product",
]

TAU_DEFAULT = 0.1


class DimensionMismatch(ValueError):
    pass


@dataclass(frozen=True)
class EvalResult:
    precision: float
    recall: float
    fscore: float
    tp: int
    fp: int
    fn: int
    commutativity: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ProductEval:
    p: EvalResult
    q: EvalResult
    prod: EvalResult


def binarize(S, tau: float = TAU_DEFAULT) -> np.ndarray:
    """0/1 adjacency keeping entries ``>= tau * max(S)``; the zero matrix stays zero."""
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must lie in (0, 1), got {tau}")
    W = np.asarray(S, dtype=float)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {W.shape}")
    if (W < 0).any():
        raise ValueError("binarize expects a nonnegative matrix")
    top = W.max(initial=0.0)
    if top <= 0:
        return np.zeros(W.shape, dtype=np.int8)
    B = W >= tau * top
    B = B | B.T
    np.fill_diagonal(B, False)
    return B.astype(np.int8)


def _edges(A: np.ndarray) -> np.ndarray:
    return np.triu(np.asarray(A) != 0, 1)


def fscore(pred, truth) -> EvalResult:
    """Edge precision, recall and F-score, counting each unordered pair once.

    With no predicted edges precision is 0 by convention.
    """
    pred, truth = np.asarray(pred), np.asarray(truth)
    if pred.shape != truth.shape:
        raise DimensionMismatch(f"pred {pred.shape} vs truth {truth.shape}")
    for name, A in (("pred", pred), ("truth", truth)):
        validate_gso(A, atol=0.0)
        if not np.isin(A, (0, 1)).all():
            raise ValueError(f"{name} must be binary")
    ep, et = _edges(pred), _edges(truth)
    tp = int(np.count_nonzero(ep & et))
    fp = int(np.count_nonzero(ep & ~et))
    fn = int(np.count_nonzero(~ep & et))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return EvalResult(precision, recall, f, tp, fp, fn)


def commutativity(C, S) -> float:
    """Squared Frobenius norm of ``CS - SC``."""
    C, S = np.asarray(C, dtype=float), np.asarray(S, dtype=float)
    if C.shape != S.shape or C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise DimensionMismatch(f"C {C.shape} vs S {S.shape}")
    K = C @ S - S @ C
    return float(np.sum(K * K))


def eval_product(
    s_p,
    s_q,
    truth_p,
    truth_q,
    kind: ProductKind | str = ProductKind.KRONECKER,
    C=None,
    tau: float = TAU_DEFAULT,
) -> ProductEval:
    """Score both factors and the product graph built from the binarized factors.

    When ``C`` is given, every result carries the commutativity of ``C``
    against the weighted Kronecker product of the raw estimates.
    """
    bp, bq = binarize(s_p, tau), binarize(s_q, tau)
    rp = fscore(bp, truth_p)
    rq = fscore(bq, truth_q)
    pred_prod = np.asarray(product(bp, bq, kind))
    true_prod = np.asarray(product(np.asarray(truth_p, float), np.asarray(truth_q, float), kind))
    rprod = fscore((pred_prod != 0).astype(np.int8), (true_prod != 0).astype(np.int8))
    if C is not None:
        c = commutativity(C, np.kron(np.asarray(s_q, float), np.asarray(s_p, float)))
        rp, rq, rprod = (replace(r, commutativity=c) for r in (rp, rq, rprod))
    return ProductEval(rp, rq, rprod)
