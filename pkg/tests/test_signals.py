import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prodgraph.graph import erdos_renyi, is_connected, product, validate_gso
from prodgraph.signals import (
    COND_MAX,
    IllConditioned,
    SignalTensor,
    SingularFilter,
    TensorMeta,
    analytic_cov,
    generate_2d,
    generate_mrf,
    generate_polycov,
    make_filter,
    mrf_covariance,
    noise_slabs,
    partial_traces,
    poly_covariance_filter,
    random_filter,
    sample_cov,
    unvec,
    vec,
)

SWAP = validate_gso([[0.0, 1.0], [1.0, 0.0]])


def _rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def _path(n):
    A = np.zeros((n, n))
    i = np.arange(n - 1)
    A[i, i + 1] = A[i + 1, i] = 1
    return validate_gso(A)


def test_vec_roundtrip():
    Y = np.arange(6.0).reshape(2, 3)
    np.testing.assert_array_equal(vec(Y), [0, 3, 1, 4, 2, 5])
    np.testing.assert_array_equal(unvec(vec(Y), 2, 3), Y)


def test_degree_zero_filter_is_identity():
    S = erdos_renyi(5, 0.5, 0)
    np.testing.assert_array_equal(make_filter(S, [1]).matrix, np.eye(5))


def test_linear_filter_is_shift():
    S = erdos_renyi(5, 1.0, 0)
    np.testing.assert_array_equal(make_filter(S, [0, 1]).matrix, np.asarray(S))


def test_singular_filter_rejected():
    with pytest.raises(IllConditioned):
        make_filter(SWAP, [1, 1])


def test_filter_matches_polynomial():
    S = np.asarray(erdos_renyi(6, 0.5, 3))
    c = [0.3, -0.7, 0.2]
    H = make_filter(erdos_renyi(6, 0.5, 3), c).matrix
    ref = c[0] * np.eye(6) + c[1] * S + c[2] * S @ S
    assert _rel(H, ref) < 1e-10
    np.testing.assert_array_equal(H, H.T)


def test_random_filter_degree_zero():
    H = random_filter(erdos_renyi(5, 0.4, 1), 1, 9).matrix
    np.testing.assert_allclose(np.abs(H), np.eye(5), atol=1e-12)
    assert abs(H[0, 0]) == pytest.approx(1.0)


def test_random_filter_deterministic():
    S = erdos_renyi(7, 0.4, 1)
    a, b = random_filter(S, 3, 42), random_filter(S, 3, 42)
    np.testing.assert_array_equal(a.coeffs, b.coeffs)
    assert np.linalg.norm(a.matrix) == pytest.approx(np.sqrt(7))


def test_random_filter_conditioning():
    seed = 0
    while not is_connected(S := erdos_renyi(8, 0.3, seed)):
        seed += 1
    for k in range(1000):
        s = np.abs(np.linalg.eigvalsh(random_filter(S, 3, k).matrix))
        assert s.max() / s.min() <= COND_MAX


def test_identity_filters_give_white_noise():
    I4 = make_filter(erdos_renyi(4, 0.5, 0), [1])
    I5 = make_filter(erdos_renyi(5, 0.5, 0), [1])
    t = generate_2d(I4, I5, 5000, 3)
    x = t.slabs.ravel()
    n = x.size
    # variance of the sample second moment of a standard normal is 2/n
    assert abs(np.mean(x**2) - 1.0) < 3 * np.sqrt(2.0 / n)


def test_vectorization_identity():
    hp = random_filter(erdos_renyi(3, 0.6, 1), 3, 1)
    hq = random_filter(erdos_renyi(4, 0.6, 2), 3, 2)
    t, W = generate_2d(hp, hq, 5, 7, return_noise=True)
    K = np.kron(hq.matrix, hp.matrix)
    for r in range(5):
        np.testing.assert_allclose(vec(t.slabs[r]), K @ vec(W[r]), atol=1e-12)


def test_generate_deterministic():
    hp = random_filter(erdos_renyi(3, 0.6, 1), 2, 1)
    hq = random_filter(erdos_renyi(3, 0.6, 2), 2, 2)
    a, b = generate_2d(hp, hq, 3, 11), generate_2d(hp, hq, 3, 11)
    assert a.slabs.tobytes() == b.slabs.tobytes()


def test_noise_slabs_prefix_stable():
    full = noise_slabs(5, 600, (2, 3))
    part = noise_slabs(5, 100, (2, 3), start=300)
    np.testing.assert_array_equal(full[300:400], part)
    np.testing.assert_array_equal(noise_slabs(5, 10, (2, 3)), full[:10])


def test_analytic_identity_filters():
    hp = make_filter(erdos_renyi(3, 0.5, 0), [1])
    hq = make_filter(erdos_renyi(4, 0.5, 0), [1])
    c = analytic_cov(hp, hq)
    np.testing.assert_array_equal(c.c_p, 4 * np.eye(3))
    np.testing.assert_array_equal(c.c_q, 3 * np.eye(4))
    np.testing.assert_array_equal(c.c_y, np.eye(12))


@settings(max_examples=40, deadline=None)
@given(st.integers(3, 7), st.integers(3, 7), st.integers(1, 3), st.integers(0, 10**6))
def test_kron_covariance_relation(P, Q, L, seed):
    hp = random_filter(erdos_renyi(P, 0.4, seed), L, seed)
    hq = random_filter(erdos_renyi(Q, 0.4, seed + 1), L, seed + 1)
    c = analytic_cov(hp, hq)
    scale = np.linalg.norm(hq.matrix) ** 2 * np.linalg.norm(hp.matrix) ** 2
    assert _rel(np.kron(c.c_q, c.c_p), scale * c.c_y) < 1e-10


def test_analytic_matches_monte_carlo():
    hp = random_filter(erdos_renyi(5, 0.4, 2), 3, 2)
    hq = random_filter(erdos_renyi(4, 0.4, 3), 3, 3)
    est = sample_cov(generate_2d(hp, hq, 100_000, 1), include_full=False)
    ref = analytic_cov(hp, hq)
    assert _rel(est.c_p, ref.c_p) < 0.05
    assert _rel(est.c_q, ref.c_q) < 0.05


def test_sample_cov_single_outer_product():
    Y = np.array([[[1.0, 0.0], [0.0, 0.0]]])
    c = sample_cov(SignalTensor(Y, TensorMeta("test", None, 2, 2, 1)))
    np.testing.assert_array_equal(c.c_p, [[1, 0], [0, 0]])
    np.testing.assert_array_equal(c.c_q, [[1, 0], [0, 0]])


def test_sample_cov_rank_and_partial_traces():
    hp = random_filter(erdos_renyi(3, 0.6, 1), 3, 1)
    hq = random_filter(erdos_renyi(4, 0.6, 2), 3, 2)
    c = sample_cov(generate_2d(hp, hq, 5, 9))
    assert np.linalg.matrix_rank(c.c_y) <= 5
    cp, cq = partial_traces(c.c_y, 3, 4)
    np.testing.assert_allclose(cp, c.c_p, atol=1e-12)
    np.testing.assert_allclose(cq, c.c_q, atol=1e-12)


def test_sample_cov_converges():
    hp = random_filter(erdos_renyi(4, 0.5, 5), 3, 5)
    hq = random_filter(erdos_renyi(4, 0.5, 6), 3, 6)
    est = sample_cov(generate_2d(hp, hq, 100_000, 2), include_full=False)
    assert _rel(est.c_p, analytic_cov(hp, hq).c_p) < 0.05


def test_mrf_empty_graph():
    S = validate_gso(np.zeros((4, 4)))
    np.testing.assert_allclose(mrf_covariance(S), 10 * np.eye(4))
    t = generate_mrf(S, 2, 2, 20_000, 0)
    assert np.mean(t.slabs**2) == pytest.approx(10, rel=0.03)


def test_mrf_monte_carlo():
    S = product(erdos_renyi(4, 0.5, 1), erdos_renyi(4, 0.5, 2), "cartesian")
    ref = mrf_covariance(S)
    lam = np.linalg.eigvalsh(np.asarray(S))
    np.testing.assert_allclose(ref, np.linalg.inv((abs(lam[0]) + 0.1) * np.eye(16) + np.asarray(S)), atol=1e-10)
    est = sample_cov(generate_mrf(S, 4, 4, 100_000, 3)).c_y
    assert _rel(est, ref) < 0.05


def test_mrf_deterministic():
    S = product(erdos_renyi(3, 0.5, 1), erdos_renyi(3, 0.5, 2), "cartesian")
    assert generate_mrf(S, 3, 3, 4, 8).slabs.tobytes() == generate_mrf(S, 3, 3, 4, 8).slabs.tobytes()


def test_polycov_square_of_path():
    S = _path(4)
    est = sample_cov(generate_polycov(S, [1.0], 2, 2, 100_000, 4)).c_y
    ref = np.asarray(S) @ np.asarray(S)
    assert _rel(est, ref) < 0.05


def test_polycov_singular_direction():
    S = _path(3)  # eigenvalues -sqrt2, 0, sqrt2
    with pytest.raises(SingularFilter):
        poly_covariance_filter(S, [1.0])
    t = generate_polycov(S, [1.0], 3, 1, 2000, 5, allow_singular=True)
    v = np.array([1.0, 0.0, -1.0]) / np.sqrt(2)
    C = sample_cov(t).c_y
    assert v @ C @ v < 1e-6


def test_polycov_deterministic():
    S = _path(4)
    a = generate_polycov(S, [1.0, 0.5], 2, 2, 5, 1, allow_singular=True)
    b = generate_polycov(S, [1.0, 0.5], 2, 2, 5, 1, allow_singular=True)
    assert a.slabs.tobytes() == b.slabs.tobytes()


def test_polycov_dimension_check():
    with pytest.raises(ValueError):
        generate_polycov(_path(4), [1.0], 3, 2, 5, 1)


@settings(max_examples=30, deadline=None)
@given(st.integers(3, 8), st.integers(3, 8), st.integers(1, 3), st.integers(0, 10**6))
def test_covariances_commute_with_shifts(P, Q, L, seed):
    gp, gq = erdos_renyi(P, 0.4, seed), erdos_renyi(Q, 0.4, seed + 1)
    c = analytic_cov(random_filter(gp, L, seed), random_filter(gq, L, seed + 1))
    for C, S in ((c.c_p, np.asarray(gp)), (c.c_q, np.asarray(gq))):
        K = C @ S - S @ C
        assert np.linalg.norm(K) <= 1e-8 * np.linalg.norm(C) * max(np.linalg.norm(S), 1.0)


def test_whitening_oracle():
    hq = random_filter(erdos_renyi(4, 0.5, 2), 3, 2).matrix
    B = hq @ hq.T
    W = noise_slabs(3, 100_000, (3, 4))
    mean = np.einsum("rij,jk,rlk->il", W, B, W) / W.shape[0]
    assert _rel(mean, np.trace(hq @ hq) * np.eye(3)) < 0.05


def test_sample_cov_error_decreases_with_R():
    grid = (100, 1000, 10_000)
    errs = np.zeros(len(grid))
    for seed in range(20):
        hp = random_filter(erdos_renyi(4, 0.4, seed), 3, seed)
        hq = random_filter(erdos_renyi(4, 0.4, seed + 100), 3, seed + 100)
        ref = analytic_cov(hp, hq, include_full=False).c_p
        t = generate_2d(hp, hq, grid[-1], seed)
        for i, R in enumerate(grid):
            sub = SignalTensor(t.slabs[:R], TensorMeta("assumption1", seed, 4, 4, R))
            errs[i] += np.linalg.norm(sample_cov(sub, include_full=False).c_p - ref)
    assert errs[0] > errs[1] > errs[2]
