import numpy as np
import pytest

from conftest import als_rank1
from dwdecomp.errors import DegenerateInputError, NumericError
from dwdecomp.linalg import leading_right_singular_vector, rank1_constrained_fit, svd


def _check_factorization(M, res):
    r = min(M.shape)
    assert res.U.shape == (M.shape[0], r) and res.V.shape == (M.shape[1], r) and res.S.shape == (r,)
    assert np.linalg.norm(M - res.U @ np.diag(res.S) @ res.V.T) <= 1e-5 * max(np.linalg.norm(M), 1e-300)
    np.testing.assert_allclose(res.U.T @ res.U, np.eye(r), atol=1e-6)
    np.testing.assert_allclose(res.V.T @ res.V, np.eye(r), atol=1e-6)
    assert np.all(np.diff(res.S) <= 0) and np.all(res.S >= 0)
    idx = np.argmax(np.abs(res.V), axis=0)
    assert np.all(res.V[idx, np.arange(r)] > 0)


def test_svd_identity():
    np.testing.assert_allclose(svd(np.eye(3)).S, [1, 1, 1])


def test_svd_diagonal():
    res = svd(np.diag([3.0, 2.0, 1.0]))
    np.testing.assert_allclose(res.S, [3, 2, 1])
    np.testing.assert_allclose(np.abs(res.V), np.eye(3), atol=1e-12)


def test_svd_matches_gram_eigenvalues(rng):
    M = rng.standard_normal((50, 8))
    res = svd(M)
    _check_factorization(M, res)
    eig = np.sort(np.linalg.eigvalsh(M.T @ M))[::-1]
    np.testing.assert_allclose(res.S, np.sqrt(eig), rtol=1e-6)


def test_svd_invariants_on_many_shapes():
    rng = np.random.default_rng(7)
    for _ in range(200):
        N = int(rng.integers(5, 501))
        n = int(rng.integers(1, 65))
        M = rng.standard_normal((N, n)) * rng.uniform(0.1, 10)
        _check_factorization(M, svd(M))


def test_svd_directions_scale_invariant(rng):
    M = rng.standard_normal((30, 6))
    for alpha in (1e-3, 0.5, 7.0, 1e4):
        np.testing.assert_allclose(svd(alpha * M).V, svd(M).V, atol=1e-6)


def test_svd_rejects_non_finite():
    with pytest.raises(NumericError):
        svd(np.array([[1.0, np.nan], [0.0, 1.0]]))
    with pytest.raises(NumericError):
        svd(np.array([[np.inf]]))


def test_leading_vector_rank_one():
    Y = np.zeros((4, 3))
    Y[0, 0] = -2.5
    v, s = leading_right_singular_vector(Y)
    np.testing.assert_allclose(v, [1, 0, 0])
    assert s == pytest.approx(np.linalg.norm(Y))


def test_leading_vector_dominant_column(rng):
    Y = 1e-3 * rng.standard_normal((100, 5))
    Y[:, 3] += 10 * rng.standard_normal(100)
    v, _ = leading_right_singular_vector(Y)
    assert abs(v[3]) > 0.9999


def test_leading_vector_beats_random_directions(rng):
    Y = rng.standard_normal((200, 6))
    v, s = leading_right_singular_vector(Y)
    assert np.linalg.norm(Y @ v) == pytest.approx(s, rel=1e-12)
    dirs = rng.standard_normal((10_000, 6))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    assert np.max(np.linalg.norm(Y @ dirs.T, axis=0)) <= s + 1e-8


def test_leading_vector_is_first_svd_column(rng):
    for _ in range(20):
        Y = rng.standard_normal((int(rng.integers(2, 60)), int(rng.integers(1, 10))))
        v, _ = leading_right_singular_vector(Y)
        np.testing.assert_array_equal(v, svd(Y).V[:, 0])


def test_leading_vector_all_zero():
    with pytest.raises(DegenerateInputError):
        leading_right_singular_vector(np.zeros((3, 2)))


def test_fit_exact_for_rank_one_target(rng):
    Y = np.outer(rng.standard_normal(20), rng.standard_normal(4))
    fit = rank1_constrained_fit(Y, Y)
    assert fit.objective <= 1e-8 * np.linalg.norm(Y)
    assert np.linalg.norm(fit.u) == pytest.approx(1.0, abs=1e-6)
    z = Y @ fit.u
    # Y u lies in Y's (one-dimensional) column space
    assert np.linalg.matrix_rank(np.column_stack([Y[:, 0], z]), tol=1e-8) == 1


def test_fit_target_orthogonal_to_carrier(rng):
    Y = np.zeros((10, 3))
    Y[:5] = rng.standard_normal((5, 3))
    T = np.zeros((10, 3))
    T[5:] = rng.standard_normal((5, 3))
    fit = rank1_constrained_fit(T, Y)
    np.testing.assert_allclose(fit.p, 0, atol=1e-12)
    assert fit.objective == pytest.approx(np.linalg.norm(T), rel=1e-12)


def test_fit_matches_alternating_oracle(rng):
    T = rng.standard_normal((40, 5))
    Y = rng.standard_normal((40, 5))
    fit = rank1_constrained_fit(T, Y)
    assert fit.objective == pytest.approx(als_rank1(T, Y), abs=1e-6)


def test_fit_eckart_young_for_square_carrier(rng):
    for _ in range(10):
        Y = rng.standard_normal((6, 6))
        T = rng.standard_normal((6, 6))
        fit = rank1_constrained_fit(T, Y, eps_reg=0.0)
        s = np.linalg.svd(T, compute_uv=False)
        assert fit.objective == pytest.approx(np.sqrt(np.sum(s[1:] ** 2)), abs=1e-6)


def test_fit_not_worse_than_leading_direction_candidate(rng):
    for _ in range(20):
        T = rng.standard_normal((30, 5))
        Y = rng.standard_normal((30, 5))
        fit = rank1_constrained_fit(T, Y)
        u, _ = leading_right_singular_vector(T)
        z = Y @ u
        candidate = np.linalg.norm(T - np.outer(z, T.T @ z / (z @ z)))
        assert fit.objective <= candidate + 1e-8
        assert fit.objective <= als_rank1(T, Y, iters=200, restarts=3) + 1e-8


def test_fit_degenerate_carrier():
    with pytest.raises(DegenerateInputError):
        rank1_constrained_fit(np.ones((4, 2)), np.zeros((4, 2)))


def test_fit_is_deterministic(rng):
    T = rng.standard_normal((25, 4))
    Y = rng.standard_normal((25, 4))
    a, b = rank1_constrained_fit(T, Y), rank1_constrained_fit(T, Y)
    assert a.u.tobytes() == b.u.tobytes() and a.p.tobytes() == b.p.tobytes()
