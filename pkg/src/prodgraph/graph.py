"""Graph shift operators: validation, random generation, products, eigendecomposition."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.sparse.csgraph import connected_components

__all__ = [
    "NormMode",
    "ProductKind",
    "Gso",
    "EigPair",
    "GsoError",
    "AsymmetricMatrix",
    "NonzeroDiagonal",
    "NegativeEntry",
    "NormalizationViolated",
    "ConvergenceFailure",
    "validate_gso",
    "erdos_renyi",
    "product",
    "eig_sym",
    "is_connected",
    "normalize",
]

NORM_ATOL = 1e-9


class NormMode(str, enum.Enum):
    ROW_STOCHASTIC = "row-stochastic"
    FIRST_ROW_UNIT = "first-row-unit"
    BINARY = "binary-unnormalized"


class ProductKind(str, enum.Enum):
    KRONECKER = "kronecker"
    CARTESIAN = "cartesian"
    STRONG = "strong"


class GsoError(ValueError):
    """Base class for invalid shift operators; ``index`` is the first offending entry."""

    def __init__(self, message: str, index: tuple[int, ...]):
        super().__init__(message)
        self.index = index


class AsymmetricMatrix(GsoError):
    pass


class NonzeroDiagonal(GsoError):
    pass


class NegativeEntry(GsoError):
    pass


class NormalizationViolated(GsoError):
    pass


class ConvergenceFailure(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class Gso:
    """A validated graph shift operator. Build through :func:`validate_gso`."""

    weights: np.ndarray
    norm_mode: NormMode = NormMode.BINARY

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.weights, dtype=dtype)

    def edge_count(self) -> int:
        return int(np.count_nonzero(np.triu(self.weights, 1)))


@dataclass(frozen=True, eq=False)
class EigPair:
    vectors: np.ndarray
    values: np.ndarray


def _first(mask: np.ndarray) -> tuple[int, ...]:
    return tuple(int(i) for i in np.argwhere(mask)[0])


def validate_gso(
    M, norm_mode: NormMode | str = NormMode.BINARY, atol: float = 0.0, norm_atol: float = NORM_ATOL
) -> Gso:
    """Check ``M`` against the GSO invariants and wrap it.

    Checks run in a fixed order: symmetry, diagonal, sign, normalization.
    ``atol`` loosens the first three (use the solver tolerance for estimates)
    and ``norm_atol`` the row sums. Nothing is ever rescaled here.
    """
    norm_mode = NormMode(norm_mode)
    W = np.array(M, dtype=float)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise ValueError(f"GSO must be square, got shape {W.shape}")
    if W.shape[0] < 1:
        raise ValueError("GSO must have at least one node")

    bad = np.abs(W - W.T) > atol
    if bad.any():
        i, j = _first(bad)
        raise AsymmetricMatrix(f"weights[{i}][{j}] != weights[{j}][{i}]", (i, j))
    bad = np.abs(np.diag(W)) > atol
    if bad.any():
        (i,) = _first(bad)
        raise NonzeroDiagonal(f"weights[{i}][{i}] = {W[i, i]!r} is not zero", (i, i))
    bad = W < -atol
    if bad.any():
        i, j = _first(bad)
        raise NegativeEntry(f"weights[{i}][{j}] = {W[i, j]!r} is negative", (i, j))

    if norm_mode is NormMode.ROW_STOCHASTIC:
        bad = np.abs(W.sum(axis=1) - 1.0) > norm_atol
        if bad.any():
            (i,) = _first(bad)
            raise NormalizationViolated(f"row {i} sums to {W[i].sum()!r}, expected 1", (i,))
    elif norm_mode is NormMode.FIRST_ROW_UNIT:
        if abs(W[0].sum() - 1.0) > norm_atol:
            raise NormalizationViolated(f"row 0 sums to {W[0].sum()!r}, expected 1", (0,))

    W.setflags(write=False)
    return Gso(W, norm_mode)


def normalize(S: Gso, norm_mode: NormMode | str) -> Gso:
    """Rescale a binary GSO into ``norm_mode`` (row-stochastic divides each row by its degree)."""
    norm_mode = NormMode(norm_mode)
    W = np.array(S.weights, dtype=float)
    if norm_mode is NormMode.FIRST_ROW_UNIT:
        s = W[0].sum()
        if s <= 0:
            raise NormalizationViolated("node 0 is isolated; first row cannot sum to 1", (0,))
        W = W / s
    elif norm_mode is NormMode.ROW_STOCHASTIC:
        deg = W.sum(axis=1)
        if np.any(deg <= 0):
            (i,) = _first(deg <= 0)
            raise NormalizationViolated(f"node {i} is isolated", (i,))
        W = W / deg[:, None]
    return validate_gso(W, norm_mode, atol=1e-12)


def erdos_renyi(n: int, p: float, seed: int) -> Gso:
    """Binary ER graph; every unordered pair is kept independently with probability ``p``."""
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    rng = np.random.default_rng(seed)
    iu = np.triu_indices(n, 1)
    A = np.zeros((n, n))
    A[iu] = rng.random(iu[0].size) < p
    return validate_gso(A + A.T, NormMode.BINARY)


def is_connected(S: Gso | np.ndarray) -> bool:
    W = np.asarray(S)
    n_comp, _ = connected_components(W != 0, directed=False)
    return n_comp == 1


def product(Sp: Gso, Sq: Gso, kind: ProductKind | str = ProductKind.KRONECKER) -> Gso:
    """Product graph on ``P*Q`` nodes, indexed by column-major vectorization (node ``p + P*q``)."""
    kind = ProductKind(kind)
    A, B = np.asarray(Sp), np.asarray(Sq)
    kron = np.kron(B, A)
    if kind is ProductKind.KRONECKER:
        W = kron
    else:
        cart = np.kron(B, np.eye(A.shape[0])) + np.kron(np.eye(B.shape[0]), A)
        W = cart if kind is ProductKind.CARTESIAN else kron + cart
    return validate_gso(W, NormMode.BINARY)


def eig_sym(M) -> EigPair:
    """Symmetric eigendecomposition, ascending values, sign-canonical eigenvectors.

    Each eigenvector is flipped so that its first entry with magnitude above
    1e-10 is positive.
    """
    M = np.asarray(M, dtype=float)
    scale = max(np.abs(M).max(initial=0.0), 1.0)
    if np.abs(M - M.T).max(initial=0.0) > 1e-9 * scale:
        raise ValueError("eig_sym requires a symmetric matrix")
    try:
        values, vectors = np.linalg.eigh(M)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceFailure(str(exc)) from exc
    lead = np.argmax(np.abs(vectors) > 1e-10, axis=0)
    signs = np.sign(vectors[lead, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return EigPair(vectors * signs, values)
