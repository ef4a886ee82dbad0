import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sslora.errors import ContractError, DegenerateInputError
from sslora.linalg import seeded_rng
from sslora.subspace import contribution_curve, decompose, summary, truncation_rank

from oracles import direct_curve


def test_curve_equal_energies():
    assert np.array_equal(contribution_curve([1, 1, 1, 1]), [0.25, 0.5, 0.75, 1.0])


def test_curve_two_values():
    assert np.allclose(contribution_curve([3.0, 1.0]), [0.9, 1.0], atol=1e-15)


def test_curve_against_direct_sum():
    sigma = np.sort(np.abs(seeded_rng(0).standard_normal(30)))[::-1]
    assert np.max(np.abs(contribution_curve(sigma) - direct_curve(sigma))) <= 1e-12


def test_curve_rejects_zero_spectrum():
    with pytest.raises(DegenerateInputError):
        contribution_curve([0.0, 0.0])


def test_truncation_rank_examples():
    curve = contribution_curve([3.0, 1.0])
    assert truncation_rank(curve, 0.90) == 1
    assert truncation_rank(curve, 0.95) == 2
    assert truncation_rank(contribution_curve(np.ones(20)), 0.95) == 19
    assert truncation_rank(curve, 1.0) == 2


def test_truncation_rank_threshold_domain():
    with pytest.raises(ContractError):
        truncation_rank([0.5, 1.0], 0.0)
    with pytest.raises(ContractError):
        truncation_rank([0.5, 1.0], 1.5)


def test_decompose_rank_one_diagonal():
    dec = decompose(np.array([[1.0, 0.0], [0.0, 0.0]]), 0.95)
    assert (dec.k, dec.s) == (1, 1)
    assert np.allclose(dec.u_m[:, 0], [1.0, 0.0])
    assert np.allclose(np.abs(dec.u_n[:, 0]), [0.0, 1.0])
    assert np.allclose(dec.p_n, [[0.0, 0.0], [0.0, 1.0]])


def test_decompose_identity_keeps_everything():
    dec = decompose(np.eye(4), 0.95)
    assert (dec.k, dec.s) == (4, 0)
    assert np.array_equal(dec.p_n, np.zeros((4, 4)))
    assert dec.u_n.shape == (4, 0)


def test_summary_record():
    dec = decompose(seeded_rng(1).standard_normal((6, 9)), 0.9)
    rec = summary(dec, 3)
    assert rec == {"layer": 3, "d": 6, "d'": 9, "k": dec.k, "s": dec.s, "threshold": 0.9}


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([(12, 12), (8, 16), (16, 8), (5, 3)]),
       st.sampled_from([0.5, 0.8, 0.9, 0.95, 0.99]))
def test_decomposition_invariants(seed, shape, tau):
    w = seeded_rng(seed).standard_normal(shape)
    dec = decompose(w, tau)
    d = shape[0]
    assert dec.k + dec.s == min(shape)
    for p in (dec.p_m, dec.p_n):
        assert np.linalg.norm(p - p.T) <= 1e-10
        assert np.linalg.norm(p @ p - p) <= 1e-10 * d
    assert np.linalg.norm(dec.p_m @ dec.p_n) <= 1e-10 * d
    u = np.hstack([dec.u_m, dec.u_n])
    assert np.linalg.norm(dec.p_m + dec.p_n - u @ u.T) <= 1e-10
    if shape[0] <= shape[1]:
        assert np.linalg.norm(dec.p_m + dec.p_n - np.eye(d)) <= 1e-8
    total = np.sum(w * w)
    assert np.sum((dec.p_m @ w) ** 2) / total >= tau
    assert np.sum((dec.p_n @ w) ** 2) / total <= 1 - tau + 1e-9


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.05, 1.0), st.floats(0.05, 1.0))
def test_threshold_monotone(seed, t1, t2):
    w = seeded_rng(seed).standard_normal((10, 14))
    lo, hi = sorted((t1, t2))
    assert decompose(w, lo).k <= decompose(w, hi).k


def test_threshold_one_keeps_full_rank():
    dec = decompose(seeded_rng(8).standard_normal((7, 9)), 1.0)
    assert (dec.k, dec.s) == (7, 0)


def test_decompose_tall_uses_only_truncated_columns():
    # d > d': U_n covers only the truncated singular directions
    w = seeded_rng(5).standard_normal((12, 5))
    dec = decompose(w, 0.9)
    assert dec.u_n.shape == (12, 5 - dec.k)
    assert np.linalg.matrix_rank(dec.p_m + dec.p_n) == 5
