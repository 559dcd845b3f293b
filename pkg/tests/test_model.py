import numpy as np
import pytest

from daeobs.model import (DaeSystem, ModelError, ObserverGains, build_augmented,
                          build_augmented_from_L, embed_gains, gains_from_L, necessary_rank_check)


def small_system(**kw):
    args = dict(E=[[1.0, 0], [0, 0]], A=[[-1.0, 1], [1, -1]], C=[[1.0, 0]],
                B_L=[[1.0], [0]], F=[[0.5, 0]], f_L=["sin(x1)"],
                B_M=[[0.0], [1]], J=[[0, 1.0]], f_M=["w1^3"], mu=0.5)
    args.update(kw)
    return DaeSystem(**args)


def test_dims_and_defaults():
    s = small_system()
    assert s.dims == dict(l=2, n=2, m=0, p=1, q_L=1, q_M=1, j=1)
    assert np.array_equal(s.Theta, [[1.0]])
    bare = DaeSystem(E=np.eye(2), A=np.eye(2), C=np.zeros((0, 2)))
    assert bare.dims["q_L"] == 0 and bare.dims["p"] == 0
    assert bare.f(np.ones(2), None, None).size == 0


def test_nonlinearity_evaluation():
    s = small_system()
    x = np.array([0.3, 2.0])
    assert np.allclose(s.f(x, None, None), [np.sin(0.3), 8.0])
    dx, dy, du = s.f_jacobians(x, None, None)
    assert np.allclose(dx, [[np.cos(0.3), 0], [0, 12.0]])
    assert dy.shape == (2, 1) and du.shape == (2, 0)
    assert np.allclose(s.output(x, None), [0.3])


def test_output_offset():
    s = small_system(m=1, h=["2*u1"], f_L=["u1*x1"])
    assert np.allclose(s.output([1.0, 0], np.array([0.5])), [2.0])


@pytest.mark.parametrize("kw,msg", [
    (dict(A=np.eye(3)), "A has shape"),
    (dict(B_L=[[1.0], [0], [0]]), "B_L"),
    (dict(J=[[0.0, 0.0]]), "full row rank"),
    (dict(f_L=["x1", "x2"]), "components"),
    (dict(E=[[np.nan, 0], [0, 0]]), "non-finite"),
    (dict(F=[[1.0, 2, 3]]), "columns"),
])
def test_invalid_systems(kw, msg):
    with pytest.raises((ModelError, ValueError), match=msg):
        small_system(**kw)


def test_matrices_are_read_only():
    s = small_system()
    with pytest.raises(ValueError):
        s.E[0, 0] = 5.0


def test_augmented_blocks():
    s = small_system()
    g = ObserverGains([[1.0], [2.0]], [[3.0]])
    aug = build_augmented(s, g)
    n, k, l, p = 2, 1, 2, 1
    assert aug.calE.shape == (l + p, n + k)
    assert np.array_equal(aug.calE[:l, :n], s.E) and not aug.calE[l:].any() and not aug.calE[:, n:].any()
    assert np.array_equal(aug.calA[:l, :n], s.A) and np.array_equal(aug.calA[l:, :n], s.C)
    assert np.array_equal(aug.calA[:, n:], [[1.0], [2.0], [3.0]])
    assert np.array_equal(aug.calB, np.vstack([s.B, np.zeros((p, 2))]))
    assert np.array_equal(aug.H, np.diag([0, 0, 1.0]))
    assert np.array_equal(aug.Theta_hat[:n, 1:], s.J.T @ s.Theta) and not aug.Theta_hat[:, :1].any()
    assert np.array_equal(aug.calJ[:n, :n], s.J.T @ s.J)
    assert np.array_equal(aug.Lambda_qL, np.diag([1.0, 0]))
    assert aug.l == l and aug.pencil.E.shape == (3, 3)
    assert aug.error_pencil.E.shape == (3, 5)


def test_gain_embedding_round_trip(rng):
    g = ObserverGains(rng.standard_normal((3, 2)), rng.standard_normal((1, 2)))
    L = embed_gains(g, 4)
    assert L.shape == (4, 6) and not L[:, :4].any()
    back = gains_from_L(L, 4, 3)
    assert np.array_equal(back.L1, g.L1) and np.array_equal(back.L2, g.L2)


def test_gain_shape_errors():
    s = small_system()
    with pytest.raises(ModelError):
        build_augmented(s, ObserverGains(np.zeros((3, 1)), np.zeros((1, 1))))
    with pytest.raises(ModelError):
        ObserverGains(np.zeros((2, 1)), np.zeros((1, 2)))
    L = np.zeros((3, 3))
    L[0, 0] = 1.0
    with pytest.raises(ModelError, match="first n columns"):
        build_augmented_from_L(s, L)


def test_zero_gain_has_k_zero():
    s = small_system()
    aug = build_augmented(s, ObserverGains.none(s))
    assert aug.k == 0 and aug.calE.shape == (3, 2)


def test_rank_check(ex1, ex2, counterexample):
    assert necessary_rank_check(ex1[0]).holds
    assert necessary_rank_check(ex2[0]).holds
    r = necessary_rank_check(counterexample[0])
    assert r.holds and r.n_le_l_plus_p
    unobs = DaeSystem(E=np.zeros((1, 2)), A=[[1.0, 0]], C=[[1.0, 0]])
    r = necessary_rank_check(unobs)
    assert not r and r.rational_rank == 1
