"""Polynomial graph filters, two-dimensional signal synthesis, covariances.

Vectorization is column-major throughout: ``vec(Y) = Y.flatten(order="F")``,
so ``vec(A @ X @ B) == kron(B.T, A) @ vec(X)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import Gso, eig_sym

__all__ = [
    "COND_MAX",
    "IllConditioned",
    "ExhaustedRetries",
    "SingularFilter",
    "PolyFilter",
    "TensorMeta",
    "SignalTensor",
    "CovarianceSet",
    "make_filter",
    "random_filter",
    "generate_2d",
    "noise_slabs",
    "analytic_cov",
    "sample_cov",
    "mrf_covariance",
    "poly_covariance_filter",
    "generate_mrf",
    "generate_polycov",
    "vec",
    "unvec",
    "partial_traces",
]

COND_MAX = 1e6
MAX_REDRAWS = 100
SINGULAR_RTOL = 1e-8
# slabs are drawn in fixed-size blocks, one Philox counter per block
_BLOCK = 256


class IllConditioned(ValueError):
    pass


class ExhaustedRetries(RuntimeError):
    pass


class SingularFilter(ValueError):
    pass


def vec(Y: np.ndarray) -> np.ndarray:
    return np.asarray(Y).flatten(order="F")


def unvec(y: np.ndarray, P: int, Q: int) -> np.ndarray:
    return np.asarray(y).reshape((P, Q), order="F")


def _poly(S: np.ndarray, coeffs, start: int = 0) -> np.ndarray:
    n = S.shape[0]
    H = np.zeros((n, n))
    power = np.linalg.matrix_power(S, start) if start else np.eye(n)
    for c in coeffs:
        H += c * power
        power = power @ S
    return H


def _cond(H: np.ndarray) -> float:
    s = np.abs(np.linalg.eigvalsh(H))
    return float(s.max() / s.min()) if s.min() > 0 else float("inf")


@dataclass(frozen=True, eq=False)
class PolyFilter:
    """``H = sum_l coeffs[l] * S**l`` with the matrix cached at construction."""

    shift: Gso
    coeffs: np.ndarray
    matrix: np.ndarray

    @property
    def n(self) -> int:
        return self.shift.n


def make_filter(shift: Gso, coeffs) -> PolyFilter:
    coeffs = np.asarray(coeffs, dtype=float).ravel()
    if coeffs.size == 0:
        raise ValueError("filter needs at least one coefficient")
    H = _poly(np.asarray(shift), coeffs)
    H = 0.5 * (H + H.T)
    cond = _cond(H)
    if cond > COND_MAX:
        raise IllConditioned(f"filter condition number {cond:.3g} exceeds {COND_MAX:g}")
    H.setflags(write=False)
    coeffs.setflags(write=False)
    return PolyFilter(shift, coeffs, H)


def random_filter(shift: Gso, L: int, seed: int) -> PolyFilter:
    """Random degree ``L-1`` filter with coefficients uniform on [-1, 1].

    Ill-conditioned draws are replaced from a fresh substream (up to 100 times).
    The accepted filter is rescaled to ``||H||_F = sqrt(n)``.
    """
    if L < 1:
        raise ValueError(f"L must be >= 1, got {L}")
    S = np.asarray(shift)
    for attempt in range(MAX_REDRAWS):
        rng = np.random.default_rng([seed, attempt])
        coeffs = rng.uniform(-1.0, 1.0, L)
        H = _poly(S, coeffs)
        norm = np.linalg.norm(H)
        if norm == 0 or _cond(H) > COND_MAX:
            continue
        return make_filter(shift, coeffs * (np.sqrt(shift.n) / norm))
    raise ExhaustedRetries(f"no filter with condition number <= {COND_MAX:g} in {MAX_REDRAWS} draws")


@dataclass(frozen=True)
class TensorMeta:
    generator: str
    seed: int | None
    P: int
    Q: int
    R: int


@dataclass(frozen=True, eq=False)
class SignalTensor:
    """``R`` observations stored as an ``(R, P, Q)`` array."""

    slabs: np.ndarray
    meta: TensorMeta

    def __post_init__(self):
        if self.slabs.ndim != 3 or self.slabs.shape[0] < 1:
            raise ValueError(f"slabs must have shape (R, P, Q) with R >= 1, got {self.slabs.shape}")
        R, P, Q = self.slabs.shape
        if (self.meta.R, self.meta.P, self.meta.Q) != (R, P, Q):
            raise ValueError("metadata dimensions disagree with the slabs")

    @property
    def vectors(self) -> np.ndarray:
        """``(R, P*Q)`` array of column-major vectorized slabs."""
        R, P, Q = self.slabs.shape
        return self.slabs.transpose(0, 2, 1).reshape(R, P * Q)


def noise_slabs(seed: int, R: int, shape: tuple[int, ...], start: int = 0) -> np.ndarray:
    """Standard normal draws for slabs ``start .. start+R-1``.

    Slab ``r`` depends only on ``(seed, r, shape)``: block ``r // 256`` is the
    Philox counter, so any split of the range reproduces the same values.
    """
    if seed < 0:
        raise ValueError("seeds must be non-negative")
    size = int(np.prod(shape))
    out = np.empty((R, size))
    stop = start + R
    b = start // _BLOCK
    while b * _BLOCK < stop:
        gen = np.random.Generator(np.random.Philox(key=seed, counter=[0, b, 0, 0]))
        block = gen.standard_normal((_BLOCK, size))
        lo, hi = max(start, b * _BLOCK), min(stop, (b + 1) * _BLOCK)
        out[lo - start : hi - start] = block[lo - b * _BLOCK : hi - b * _BLOCK]
        b += 1
    return out.reshape((R, *shape))


def generate_2d(hp: PolyFilter, hq: PolyFilter, R: int, seed: int, return_noise: bool = False):
    """Slabs ``Y_r = H_P W_r H_Q`` with i.i.d. standard normal ``W_r``."""
    if R < 1:
        raise ValueError("R must be >= 1")
    P, Q = hp.n, hq.n
    W = noise_slabs(seed, R, (P, Q))
    Y = hp.matrix @ W @ hq.matrix
    tensor = SignalTensor(Y, TensorMeta("assumption1", seed, P, Q, R))
    return (tensor, W) if return_noise else tensor


@dataclass(frozen=True, eq=False)
class CovarianceSet:
    c_p: np.ndarray
    c_q: np.ndarray
    c_y: np.ndarray | None = None
    provenance: str = "analytic"
    samples: int | None = field(default=None)


def analytic_cov(hp: PolyFilter, hq: PolyFilter, include_full: bool = True) -> CovarianceSet:
    HP2 = hp.matrix @ hp.matrix
    HQ2 = hq.matrix @ hq.matrix
    c_p = np.trace(HQ2) * HP2
    c_q = np.trace(HP2) * HQ2
    c_y = np.kron(HQ2, HP2) if include_full else None
    return CovarianceSet(c_p, c_q, c_y, "analytic", None)


def _sym(C: np.ndarray) -> np.ndarray:
    return 0.5 * (C + C.T)


def sample_cov(t: SignalTensor, include_full: bool = True) -> CovarianceSet:
    """Sample covariances, all normalized by ``1/R``."""
    Y = t.slabs
    R = Y.shape[0]
    c_p = _sym(np.einsum("rpq,rsq->ps", Y, Y) / R)
    c_q = _sym(np.einsum("rpq,rps->qs", Y, Y) / R)
    c_y = None
    if include_full:
        V = t.vectors
        c_y = _sym(V.T @ V / R)
    return CovarianceSet(c_p, c_q, c_y, "sample", R)


def partial_traces(c_y: np.ndarray, P: int, Q: int) -> tuple[np.ndarray, np.ndarray]:
    """Dimension-wise covariances obtained from a full ``PQ x PQ`` covariance.

    For a sample covariance these equal ``sample_cov``'s ``c_p`` and ``c_q``.
    """
    C4 = np.asarray(c_y).reshape(Q, P, Q, P)
    c_p = np.einsum("qaqb->ab", C4)
    c_q = np.einsum("apbp->ab", C4)
    return _sym(c_p), _sym(c_q)


def mrf_covariance(S: Gso) -> np.ndarray:
    """``(alpha I + S)^{-1}`` with ``alpha = |lambda_min(S)| + 0.1``."""
    eig = eig_sym(np.asarray(S))
    alpha = abs(eig.values[0]) + 0.1
    lam = 1.0 / (alpha + eig.values)
    return _sym((eig.vectors * lam) @ eig.vectors.T)


def _sqrt_psd(C: np.ndarray) -> np.ndarray:
    eig = eig_sym(C)
    root = np.sqrt(np.clip(eig.values, 0.0, None))
    return _sym((eig.vectors * root) @ eig.vectors.T)


def _vector_tensor(F: np.ndarray, P: int, Q: int, R: int, seed: int, generator: str) -> SignalTensor:
    w = noise_slabs(seed, R, (P * Q,))
    y = w @ F.T
    slabs = y.reshape(R, Q, P).transpose(0, 2, 1)
    return SignalTensor(np.ascontiguousarray(slabs), TensorMeta(generator, seed, P, Q, R))


def _check_product_dims(S: Gso, P: int, Q: int) -> None:
    if S.n != P * Q:
        raise ValueError(f"product GSO has {S.n} nodes, expected P*Q = {P * Q}")


def generate_mrf(S: Gso, P: int, Q: int, R: int, seed: int) -> SignalTensor:
    _check_product_dims(S, P, Q)
    return _vector_tensor(_sqrt_psd(mrf_covariance(S)), P, Q, R, seed, "mrf")


def poly_covariance_filter(S: Gso, coeffs, allow_singular: bool = False) -> np.ndarray:
    """``sum_{l>=1} h_l S^l``; its square is the polynomial covariance."""
    coeffs = np.asarray(coeffs, dtype=float).ravel()
    if coeffs.size == 0:
        raise ValueError("need at least one coefficient h_1")
    F = _sym(_poly(np.asarray(S), coeffs, start=1))
    s = np.abs(np.linalg.eigvalsh(F))
    if not allow_singular and (s.max() == 0 or s.min() < SINGULAR_RTOL * s.max()):
        raise SingularFilter(
            f"smallest singular value {s.min():.3g} < {SINGULAR_RTOL:g} x largest {s.max():.3g}"
        )
    return F


def generate_polycov(
    S: Gso, coeffs, P: int, Q: int, R: int, seed: int, allow_singular: bool = False
) -> SignalTensor:
    """Signals with covariance ``(sum_{l=1}^{L} h_l S^l)^2``.

    Raises :class:`SingularFilter` for a numerically singular filter unless
    ``allow_singular`` is set.
    """
    _check_product_dims(S, P, Q)
    F = poly_covariance_filter(S, coeffs, allow_singular)
    return _vector_tensor(F, P, Q, R, seed, "poly")
