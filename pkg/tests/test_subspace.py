import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from daeobs import subspace as ss
from daeobs.subspace import Subspace, SubspaceError

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def span(*cols):
    return ss.image(np.array(cols, float).T)


def e(i, n=3):
    v = np.zeros(n)
    v[i] = 1.0
    return v


def test_image_rank_one_diagonal():
    S = ss.image(np.array([[1.0, 0], [0, 0]]), 1e-9)
    assert S.dim == 1
    assert ss.equals(S, span(e(0, 2)))


def test_image_of_zero_matrix_is_trivial():
    S = ss.image(np.zeros((3, 2)), 1e-9)
    assert S.dim == 0 and S.ambient_dim == 3
    assert S.basis.shape == (3, 0)


def test_image_of_dependent_columns():
    S = ss.image(np.array([[1.0, 2], [2, 4], [3, 6]]), 1e-9)
    assert S.dim == 1
    v = np.array([1, 2, 3]) / np.sqrt(14)
    assert abs(abs(S.basis[:, 0] @ v) - 1) < 1e-12


def test_kernel_examples():
    assert ss.kernel(np.eye(3), 1e-9).dim == 0
    K = ss.kernel(np.array([[1.0, -1.0]]), 1e-9)
    assert ss.equals(K, span([1, 1]))


def test_kernel_dimension_matches_pivoted_rank(ex1):
    from scipy.linalg import qr
    sys_ = ex1[0]
    M = np.hstack([sys_.A, sys_.B])
    _, R, _ = qr(M, pivoting=True)
    rk = int(np.sum(np.abs(np.diag(R)) > 1e-9 * abs(R[0, 0])))
    assert ss.kernel(M, 1e-9).dim == M.shape[1] - rk


def test_preimage_examples(rng):
    A = rng.standard_normal((3, 4))
    assert ss.preimage(A, Subspace.full(3)).dim == 4
    S = span([1, 1, 0], [0, 0, 1])
    assert ss.equals(ss.preimage(np.eye(3), S), S)
    P = ss.preimage(np.array([[1.0, 0], [0, 0]]), span(e(0, 2)))
    assert P.dim == 2


def test_intersect_examples():
    S = span([1, 1, 0], e(2))
    assert ss.equals(ss.intersect(S, S), S)
    assert ss.intersect(span(e(0)), span(e(1))).dim == 0
    X = ss.intersect(span([1, 1, 0], e(2)), span([1, 1, 0], e(0)))
    assert ss.equals(X, span([1, 1, 0]))


def test_sum_examples(rng):
    S = span(e(0), e(1))
    assert ss.equals(ss.sum(S, Subspace.zero(3)), S)
    assert ss.equals(ss.sum(span(e(0)), span(e(1))), S)
    a, b = rng.standard_normal(3), rng.standard_normal(3)
    assert ss.sum(span(a), span(b)).dim == 2


def test_equals_examples():
    S = span([1, 2, 3])
    assert ss.equals(S, S)
    assert not ss.equals(span(e(0)), span(e(1)))


def test_ambient_mismatch_raises():
    with pytest.raises(SubspaceError):
        ss.intersect(Subspace.full(2), Subspace.full(3))
    with pytest.raises(SubspaceError):
        ss.preimage(np.eye(2), Subspace.full(3))


def test_non_finite_rejected():
    with pytest.raises(SubspaceError):
        ss.image(np.array([[np.nan, 1.0]]))


@settings(max_examples=60, deadline=None)
@given(arrays(float, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=finite))
def test_rank_nullity_and_orthonormality(M):
    im, ker = ss.image(M), ss.kernel(M)
    assert im.dim + ker.dim == M.shape[1]
    for S in (im, ker):
        assert np.allclose(S.basis.T @ S.basis, np.eye(S.dim), atol=1e-12)
        P = S.basis @ S.basis.T
        assert np.linalg.norm(P @ P - P) <= 1e-10


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_lattice_properties(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 6))
    S1 = ss.image(rng.standard_normal((n, int(rng.integers(0, n + 1)))))
    S2 = ss.image(rng.standard_normal((n, int(rng.integers(0, n + 1)))))
    assert ss.equals(ss.sum(S1, S2), ss.sum(S2, S1))
    assert ss.equals(ss.intersect(S1, S2), ss.intersect(S2, S1))
    T = ss.sum(S1, S2)
    X = ss.intersect(S1, S2)
    for S in (S1, S2):
        assert ss.equals(ss.sum(T, S), T)
        assert ss.equals(ss.intersect(X, S), X)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_preimage_maps_into_target(seed):
    rng = np.random.default_rng(seed)
    l, n = int(rng.integers(1, 6)), int(rng.integers(1, 6))
    A = rng.standard_normal((l, n))
    if rng.random() < 0.5:
        A[:, 0] = 0.0
    S = ss.image(rng.standard_normal((l, int(rng.integers(0, l + 1)))))
    P = ss.preimage(A, S)
    tol = ss.default_tol(A)
    for c in P.basis.T:
        v = A @ c
        dist = np.linalg.norm(v - S.basis @ (S.basis.T @ v))
        assert dist <= 10 * tol * max(np.linalg.norm(A, 2), 1.0) + 1e-12
