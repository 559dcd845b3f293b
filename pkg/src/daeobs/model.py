"""System class, observer candidate and the augmented error-system matrices."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import subspace as ss
from .expr import VectorFunction
from .pencil import MatrixPencil, rational_rank


class ModelError(ValueError):
    pass


def _mat(M, shape=None, name="matrix") -> np.ndarray:
    if M is None:
        if shape is None:
            raise ModelError(f"{name} is required")
        return np.zeros(shape)
    M = np.asarray(M, dtype=float)
    if M.ndim == 1 and shape is not None and M.size == 0:
        M = M.reshape(shape)
    M = np.atleast_2d(M) if M.ndim < 2 else M
    if shape is not None and M.shape != tuple(shape):
        if M.size == 0 and int(np.prod(shape)) == 0:
            return np.zeros(shape)
        raise ModelError(f"{name} has shape {M.shape}, expected {tuple(shape)}")
    if not np.all(np.isfinite(M)):
        raise ModelError(f"{name} has non-finite entries")
    M = M.copy()
    M.flags.writeable = False
    return M


def _vf(f, dims, out, name) -> VectorFunction:
    if f is None:
        f = ["0"] * out
    if not isinstance(f, VectorFunction):
        f = VectorFunction(list(f), dims)
    if f.out_dim != out:
        raise ModelError(f"{name} has {f.out_dim} components, expected {out}")
    return f


@dataclass(eq=False)
class DaeSystem:
    """``d/dt E x = A x + B_L f_L(x,u,y) + B_M f_M(Jx,u,y)``, ``y = C x + h(u)``.

    Nonlinearities may be given as lists of expression strings; ``f_M`` is
    written in the variables ``w1..w_qM`` standing for ``J x``.
    """

    E: np.ndarray
    A: np.ndarray
    C: np.ndarray
    B_L: np.ndarray | None = None
    B_M: np.ndarray | None = None
    J: np.ndarray | None = None
    F: np.ndarray | None = None
    Theta: np.ndarray | None = None
    mu: float = 0.0
    f_L: object = None
    f_M: object = None
    h: object = None
    m: int = 0

    def __post_init__(self):
        self.E = _mat(self.E, name="E")
        l, n = self.E.shape
        self.A = _mat(self.A, (l, n), "A")
        C = np.asarray(self.C, float)
        if C.size == 0:
            C = np.zeros((C.shape[0] if C.ndim == 2 else 0, n))
        self.C = _mat(C, (C.shape[0] if C.ndim == 2 else 1, n), "C")
        p = self.C.shape[0]
        B_L = np.zeros((l, 0)) if self.B_L is None else np.asarray(self.B_L, float)
        B_M = np.zeros((l, 0)) if self.B_M is None else np.asarray(self.B_M, float)
        qL = B_L.shape[1] if B_L.ndim == 2 else 0
        qM = B_M.shape[1] if B_M.ndim == 2 else 0
        self.B_L = _mat(B_L, (l, qL), "B_L")
        self.B_M = _mat(B_M, (l, qM), "B_M")
        self.J = _mat(self.J if self.J is not None else np.zeros((qM, n)), (qM, n), "J")
        if self.F is None:
            self.F = np.zeros((0, n))
        F = np.asarray(self.F, float)
        if F.size and (F.ndim > 2 or F.shape[-1] != n):
            raise ModelError(f"F must have {n} columns, has shape {F.shape}")
        self.F = _mat(F.reshape(-1, n) if F.size else np.zeros((0, n)), None, "F")
        self.Theta = _mat(self.Theta if self.Theta is not None else np.eye(qM), (qM, qM), "Theta")
        self.mu = float(self.mu)
        self.m = int(self.m)
        if qM and ss.rank(self.J, 1e-10) != qM:
            raise ModelError("J must have full row rank q_M")
        self.f_L = _vf(self.f_L, {"x": n, "u": self.m, "y": p}, qL, "f_L")
        self.f_M = _vf(self.f_M, {"w": qM, "u": self.m, "y": p}, qM, "f_M")
        self.h = _vf(self.h, {"u": self.m}, p, "h")

    @property
    def dims(self) -> dict:
        l, n = self.E.shape
        return dict(l=l, n=n, m=self.m, p=self.C.shape[0], q_L=self.B_L.shape[1],
                    q_M=self.B_M.shape[1], j=self.F.shape[0])

    @property
    def B(self) -> np.ndarray:
        return np.hstack([self.B_L, self.B_M])

    def f(self, x, u, y) -> np.ndarray:
        x = np.asarray(x, float)
        return np.concatenate([self.f_L(x=x, u=u, y=y), self.f_M(w=self.J @ x, u=u, y=y)])

    def f_jacobians(self, x, u, y):
        """Partial derivatives of the stacked nonlinearity w.r.t. ``x`` and ``y``."""
        x = np.asarray(x, float)
        w = self.J @ x
        dx = np.vstack([self.f_L.jacobian("x", x=x, u=u, y=y),
                        self.f_M.jacobian("w", w=w, u=u, y=y) @ self.J])
        dy = np.vstack([self.f_L.jacobian("y", x=x, u=u, y=y),
                        self.f_M.jacobian("y", w=w, u=u, y=y)])
        du = np.vstack([self.f_L.jacobian("u", x=x, u=u, y=y),
                        self.f_M.jacobian("u", w=w, u=u, y=y)])
        return dx, dy, du

    def output(self, x, u) -> np.ndarray:
        return self.C @ np.asarray(x, float) + self.h(u=u)


@dataclass(frozen=True, eq=False)
class ObserverGains:
    L1: np.ndarray
    L2: np.ndarray

    def __post_init__(self):
        L1 = np.atleast_2d(np.asarray(self.L1, float))
        L2 = np.atleast_2d(np.asarray(self.L2, float))
        if L1.shape[1] != L2.shape[1]:
            raise ModelError(f"L1 has {L1.shape[1]} columns but L2 has {L2.shape[1]}")
        object.__setattr__(self, "L1", L1)
        object.__setattr__(self, "L2", L2)

    @property
    def k(self) -> int:
        return self.L1.shape[1]

    @classmethod
    def none(cls, sys: DaeSystem) -> "ObserverGains":
        d = sys.dims
        return cls(np.zeros((d["l"], 0)), np.zeros((d["p"], 0)))


@dataclass(frozen=True, eq=False)
class AugmentedSystem:
    calE: np.ndarray
    calA: np.ndarray
    calB: np.ndarray
    A_hat: np.ndarray
    H: np.ndarray
    calF: np.ndarray
    Theta_hat: np.ndarray
    calJ: np.ndarray
    Lambda_qL: np.ndarray
    L_hat: np.ndarray
    mu: float
    n: int
    k: int
    q_L: int
    q_M: int
    p: int

    @property
    def pencil(self) -> MatrixPencil:
        return MatrixPencil(self.calE, self.calA)

    @property
    def error_pencil(self) -> MatrixPencil:
        """``s[calE, 0] - [calA, calB]`` whose Wong limit confines ``(e, d, phi)``."""
        q = self.calB.shape[1]
        return MatrixPencil(np.hstack([self.calE, np.zeros((self.calE.shape[0], q))]),
                            np.hstack([self.calA, self.calB]))

    @property
    def l(self) -> int:  # noqa: E743
        return self.calE.shape[0] - self.p

    @property
    def gains(self) -> ObserverGains:
        return gains_from_L(self.L_hat, self.n, self.l)


def embed_gains(gains: ObserverGains, n: int) -> np.ndarray:
    """``L_hat = [[0, L1], [0, L2]]`` with ``n`` leading zero columns."""
    Lk = np.vstack([gains.L1, gains.L2])
    return np.hstack([np.zeros((Lk.shape[0], n)), Lk])


def gains_from_L(L_hat: np.ndarray, n: int, l: int) -> ObserverGains:
    L_hat = np.asarray(L_hat, float)
    return ObserverGains(L_hat[:l, n:], L_hat[l:, n:])


def build_augmented_from_L(sys: DaeSystem, L_hat) -> AugmentedSystem:
    d = sys.dims
    l, n, p, qL, qM = d["l"], d["n"], d["p"], d["q_L"], d["q_M"]
    L_hat = np.atleast_2d(np.asarray(L_hat, float))
    if L_hat.shape[0] != l + p or L_hat.shape[1] < n:
        raise ModelError(f"L_hat has shape {L_hat.shape}, expected ({l + p}, n+k) with n={n}")
    if np.any(L_hat[:, :n] != 0):
        raise ModelError("the first n columns of L_hat must be zero")
    k = L_hat.shape[1] - n
    q = qL + qM
    calE = np.zeros((l + p, n + k))
    calE[:l, :n] = sys.E
    A_hat = np.zeros((l + p, n + k))
    A_hat[:l, :n] = sys.A
    A_hat[l:, :n] = sys.C
    calA = A_hat + L_hat
    calB = np.vstack([sys.B, np.zeros((p, q))])
    H = np.zeros((n + k, n + k))
    H[n:, n:] = np.eye(k)
    calF = np.hstack([sys.F, np.zeros((sys.F.shape[0], k))])
    Theta_hat = np.zeros((n + k, q))
    Theta_hat[:n, qL:] = sys.J.T @ sys.Theta
    calJ = np.zeros((n + k, n + k))
    calJ[:n, :n] = sys.J.T @ sys.J
    Lam = np.zeros((q, q))
    Lam[:qL, :qL] = np.eye(qL)
    return AugmentedSystem(calE=calE, calA=calA, calB=calB, A_hat=A_hat, H=H, calF=calF,
                           Theta_hat=Theta_hat, calJ=calJ, Lambda_qL=Lam, L_hat=L_hat.copy(),
                           mu=sys.mu, n=n, k=k, q_L=qL, q_M=qM, p=p)


def build_augmented(sys: DaeSystem, gains: ObserverGains) -> AugmentedSystem:
    d = sys.dims
    if gains.L1.shape[0] != d["l"] or gains.L2.shape[0] != d["p"]:
        raise ModelError(
            f"gains have shapes {gains.L1.shape}, {gains.L2.shape}; "
            f"expected ({d['l']}, k) and ({d['p']}, k)")
    return build_augmented_from_L(sys, embed_gains(gains, d["n"]))


@dataclass(frozen=True)
class RankCheck:
    holds: bool
    rational_rank: int
    n: int
    n_le_l_plus_p: bool

    def __bool__(self):
        return self.holds


def necessary_rank_check(sys: DaeSystem) -> RankCheck:
    """Generic rank of ``[sE - A; C]`` must equal ``n`` for any state estimator."""
    d = sys.dims
    p = MatrixPencil(np.vstack([sys.E, np.zeros((d["p"], d["n"]))]),
                     np.vstack([sys.A, sys.C]))
    rr = rational_rank(p)
    return RankCheck(rr == d["n"], rr, d["n"], d["n"] <= d["l"] + d["p"])
