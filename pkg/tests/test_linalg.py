import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sslora.errors import ContractError, NumericalError
from sslora.linalg import (frobenius_norm, gaussian_matrix, matmul, matrix, seeded_rng,
                           svd, transpose, add, sub, scale)

from oracles import loop_matmul


def test_matmul_identity_and_hand_example():
    m = seeded_rng(0).standard_normal((3, 4))
    assert np.array_equal(matmul(np.eye(3), m), m)
    out = matmul(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([[0.0], [1.0]]))
    assert np.array_equal(out, [[2.0], [4.0]])


def test_matmul_against_loop_oracle():
    rng = seeded_rng(7)
    a, b = rng.standard_normal((7, 5)), rng.standard_normal((5, 3))
    assert np.max(np.abs(matmul(a, b) - loop_matmul(a, b))) <= 1e-12


def test_matmul_shape_mismatch():
    with pytest.raises(ContractError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(ContractError):
        add(np.ones((2, 3)), np.ones((3, 2)))
    with pytest.raises(ContractError):
        sub(np.ones((2, 3)), np.ones((3, 2)))


def test_elementwise_helpers():
    a = np.arange(6.0).reshape(2, 3)
    assert np.array_equal(transpose(a), a.T)
    assert np.array_equal(scale(a, 2.0), 2 * a)
    assert np.array_equal(sub(add(a, a), a), a)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.integers(1, 6),
       st.integers(1, 6), st.integers(1, 6))
def test_matmul_associative(seed, n, m, p, q):
    rng = seeded_rng(seed)
    a, b, c = (rng.standard_normal(s) for s in ((n, m), (m, p), (p, q)))
    left, right = matmul(matmul(a, b), c), matmul(a, matmul(b, c))
    assert np.linalg.norm(left - right) <= 1e-10 * max(1.0, np.linalg.norm(left))


def test_matrix_rejects_nonfinite():
    with pytest.raises(ContractError):
        matrix([[1.0, np.nan]])
    with pytest.raises(ContractError):
        matrix([1.0, 2.0])


def test_svd_diagonal():
    res = svd(np.diag([3.0, 1.0]))
    assert np.allclose(res.sigma, [3.0, 1.0])
    assert np.allclose(np.abs(res.u), np.eye(2))
    assert np.allclose(np.abs(res.vt), np.eye(2))


def test_svd_orthogonal_has_unit_sigma():
    q, _ = np.linalg.qr(seeded_rng(1).standard_normal((6, 6)))
    assert np.allclose(svd(q).sigma, 1.0, atol=1e-12)


@pytest.mark.parametrize("shape", [(10, 6), (6, 10), (8, 8)])
def test_svd_invariants(shape):
    w = seeded_rng(2).standard_normal(shape)
    res = svd(w)
    r = min(shape)
    assert res.u.shape == (shape[0], r) and res.vt.shape == (r, shape[1])
    assert np.all(np.diff(res.sigma) <= 0) and np.all(res.sigma >= 0)
    assert np.max(np.abs(res.u.T @ res.u - np.eye(r))) <= 1e-10
    assert np.max(np.abs(res.vt @ res.vt.T - np.eye(r))) <= 1e-10
    assert frobenius_norm(res.reconstruct() - w) <= 1e-10 * frobenius_norm(w)


def test_svd_sign_convention():
    res = svd(seeded_rng(3).standard_normal((9, 5)))
    cols = np.arange(res.u.shape[1])
    assert np.all(res.u[np.argmax(np.abs(res.u), axis=0), cols] >= 0)
    # same input twice: bitwise identical
    res2 = svd(seeded_rng(3).standard_normal((9, 5)))
    assert np.array_equal(res.u, res2.u) and np.array_equal(res.vt, res2.vt)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 8), st.integers(1, 8),
       st.floats(0.01, 100.0))
def test_svd_transpose_and_scaling(seed, n, m, c):
    w = seeded_rng(seed).standard_normal((n, m))
    s = svd(w).sigma
    assert np.allclose(svd(w.T).sigma, s, rtol=0, atol=1e-10 * max(1.0, s[0]))
    assert np.allclose(svd(c * w).sigma, c * s, rtol=1e-10, atol=1e-12 * c)


def test_svd_failure_is_numerical_error(monkeypatch):
    def boom(*args, **kwargs):
        raise np.linalg.LinAlgError("SVD did not converge")

    monkeypatch.setattr(np.linalg, "svd", boom)
    with pytest.raises(NumericalError) as info:
        svd(np.ones((3, 2)))
    assert info.value.iterations == 2


def test_svd_rejects_nan():
    with pytest.raises(ContractError):
        svd(np.array([[np.nan, 1.0]]))


def test_frobenius_norm():
    assert frobenius_norm(np.eye(5)) == pytest.approx(np.sqrt(5), abs=1e-15)
    assert frobenius_norm(np.zeros((3, 4))) == 0.0
    m = seeded_rng(4).standard_normal((6, 7))
    acc = 0.0
    for v in m.ravel():
        acc += v * v
    assert abs(frobenius_norm(m) - np.sqrt(acc)) <= 1e-12


def test_seeded_rng_reproducible():
    a = gaussian_matrix(seeded_rng(11), 4, 5, 0.3)
    b = gaussian_matrix(seeded_rng(11), 4, 5, 0.3)
    c = gaussian_matrix(seeded_rng(12), 4, 5, 0.3)
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a, c)


def test_gaussian_mean_clt_bound():
    std = 2.0
    draws = gaussian_matrix(seeded_rng(5), 100_000, 1, std)
    assert abs(draws.mean()) <= 5 * std / np.sqrt(100_000)


def test_gaussian_requires_positive_std():
    with pytest.raises(ContractError):
        gaussian_matrix(seeded_rng(0), 2, 2, 0.0)
