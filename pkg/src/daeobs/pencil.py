"""Matrix pencil analysis: Wong sequences, regularity, index, generic rank and
the quasi-Weierstrass transform of regular index-one pencils."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import subspace as ss
from .subspace import Subspace

# Relative rank tolerance for pencil computations.  Iterated preimages of
# orthonormal bases accumulate rounding well above max(shape)*eps.
PENCIL_TOL = 1e-9
COND_LIMIT = 1e12
SAMPLE_POINTS = (0.718, 1.414, 2.236, 3.141, 5.669)


class PencilError(ValueError):
    """A pencil does not satisfy the structural hypothesis of an operation."""


@dataclass(frozen=True, eq=False)
class MatrixPencil:
    E: np.ndarray
    A: np.ndarray

    def __post_init__(self):
        E = np.atleast_2d(np.array(self.E, dtype=float))
        A = np.atleast_2d(np.array(self.A, dtype=float))
        if E.shape != A.shape:
            raise PencilError(f"E has shape {E.shape} but A has shape {A.shape}")
        if not (np.all(np.isfinite(E)) and np.all(np.isfinite(A))):
            raise PencilError("pencil has non-finite entries")
        E.flags.writeable = False
        A.flags.writeable = False
        object.__setattr__(self, "E", E)
        object.__setattr__(self, "A", A)

    @property
    def shape(self):
        return self.E.shape

    @property
    def is_square(self) -> bool:
        return self.E.shape[0] == self.E.shape[1]

    def at(self, lam: float) -> np.ndarray:
        return lam * self.E - self.A

    def scale(self) -> float:
        return max(float(np.linalg.norm(self.E, 2)) if self.E.size else 0.0,
                   float(np.linalg.norm(self.A, 2)) if self.A.size else 0.0, 1.0)


@dataclass(frozen=True, eq=False)
class WongResult:
    Vstar: Subspace
    Wstar: Subspace
    k_star: int
    l_star: int
    V_chain: tuple = field(default=(), repr=False)
    W_chain: tuple = field(default=(), repr=False)


@dataclass(frozen=True, eq=False)
class QwfTransform:
    M: np.ndarray
    N: np.ndarray
    r: int
    A_r: np.ndarray
    V: np.ndarray
    W: np.ndarray


def _image_of(M: np.ndarray, S: Subspace, tol: float) -> Subspace:
    if S.dim == 0:
        return Subspace.zero(M.shape[0])
    ref = float(np.linalg.norm(M, 2)) if M.size else 0.0
    return ss.image(M @ S.basis, tol, ref=ref)


def wong_limits(p: MatrixPencil, tol: float = PENCIL_TOL) -> WongResult:
    """Iterate ``V <- A^{-1}(E V)`` from R^n and ``W <- E^{-1}(A W)`` from {0}
    until both stabilise.  The cap of n+1 steps guards against numerical
    cycling; theory guarantees termination within n."""
    E, A = p.E, p.A
    n = E.shape[1]

    V = Subspace.full(n)
    V_chain = [V]
    k_star = None
    for i in range(n + 1):
        V_next = ss.preimage(A, _image_of(E, V, tol), tol)
        if ss.equals(V_next, V, tol=1e-6):
            k_star = i
            break
        V = V_next
        V_chain.append(V)
    if k_star is None:
        raise PencilError("V-chain of the Wong sequence did not terminate")

    W = Subspace.zero(n)
    W_chain = [W]
    l_star = None
    for i in range(n + 1):
        W_next = ss.preimage(E, _image_of(A, W, tol), tol)
        if ss.equals(W_next, W, tol=1e-6):
            l_star = i
            break
        W = W_next
        W_chain.append(W)
    if l_star is None:
        raise PencilError("W-chain of the Wong sequence did not terminate")

    return WongResult(V, W, k_star, l_star, tuple(V_chain), tuple(W_chain))


def _sample_points(n_samples: int, seed: int = 0):
    pts = list(SAMPLE_POINTS[: max(n_samples - 1, 1)])
    rng = np.random.default_rng(seed)
    pts.append(float(rng.uniform(-3.0, 3.0)))
    return pts


def rational_rank(p: MatrixPencil, n_samples: int = 6, seed: int = 0,
                  tol: float = PENCIL_TOL) -> int:
    """Rank of ``sE - A`` over the rational functions, taken as the maximum
    numerical rank over deterministic sample points."""
    if p.E.size == 0:
        return 0
    scale = p.scale()
    best = 0
    for lam in _sample_points(n_samples, seed):
        M = p.at(lam)
        best = max(best, ss.rank(M, tol, ref=(1.0 + abs(lam)) * scale))
    return best


def is_regular(p: MatrixPencil, n_samples: int = 6, seed: int = 0,
               tol: float = PENCIL_TOL) -> bool:
    if not p.is_square:
        return False
    n = p.shape[0]
    if n == 0:
        return True
    return rational_rank(p, n_samples, seed, tol) == n


def pencil_index(p: MatrixPencil, tol: float = PENCIL_TOL) -> int:
    """Index of a regular pencil, read off as the termination step of the
    W-chain (zero exactly when E is invertible)."""
    if not is_regular(p, tol=tol):
        raise PencilError("index is only defined for regular pencils")
    return wong_limits(p, tol).l_star


def qwf_transform(p: MatrixPencil, wong: WongResult | None = None,
                  tol: float = PENCIL_TOL, cond_limit: float = COND_LIMIT) -> QwfTransform:
    """Build ``N = [V, W]`` and ``M = [E V, A W]^{-1}`` so that
    ``M E N = diag(I_r, 0)`` and ``M A N = diag(A_r, I)``."""
    if not is_regular(p, tol=tol):
        raise PencilError("pencil is not regular")
    if wong is None:
        wong = wong_limits(p, tol)
    if wong.l_star > 1:
        raise PencilError(f"pencil has index {wong.l_star} > 1")
    V, W = wong.Vstar.basis, wong.Wstar.basis
    n = p.shape[1]
    if V.shape[1] + W.shape[1] != n:
        raise PencilError("Wong limits do not span the state space")
    T = np.hstack([p.E @ V, p.A @ W])
    c = np.linalg.cond(T) if T.size else 1.0
    if not np.isfinite(c) or c > cond_limit:
        raise PencilError(f"[EV, AW] is numerically singular (cond={c:.3g})")
    M = np.linalg.inv(T) if T.size else T.copy()
    N = np.hstack([V, W])
    r = V.shape[1]
    A_r = (M @ p.A @ N)[:r, :r]
    return QwfTransform(M=M, N=N, r=r, A_r=A_r, V=V, W=W)
