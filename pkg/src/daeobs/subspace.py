"""Numerical subspace arithmetic on orthonormal bases.

Every subspace is stored as an immutable ``ambient_dim x dim`` matrix with
orthonormal columns.  Ranks are decided from singular values relative to a
reference scale, so that results of (I - BB^T) A style products are judged
against the size of ``A`` and not against their own rounding residue.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

EPS = np.finfo(float).eps


class SubspaceError(ValueError):
    """Invalid input to a subspace operation (shape mismatch, non-finite data)."""


def default_tol(M: np.ndarray) -> float:
    return max(M.shape) * EPS


def _as_matrix(M) -> np.ndarray:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.ndim != 2:
        raise SubspaceError(f"expected a matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise SubspaceError("matrix has non-finite entries")
    return M


@dataclass(frozen=True, eq=False)
class Subspace:
    basis: np.ndarray
    tol: float = field(default=1e-12)

    def __post_init__(self):
        b = np.array(self.basis, dtype=float, copy=True)
        if b.ndim != 2:
            raise SubspaceError("basis must be a 2-d array")
        b.flags.writeable = False
        object.__setattr__(self, "basis", b)

    @property
    def ambient_dim(self) -> int:
        return self.basis.shape[0]

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    @property
    def projector(self) -> np.ndarray:
        return self.basis @ self.basis.T

    @classmethod
    def full(cls, n: int) -> "Subspace":
        return cls(np.eye(n))

    @classmethod
    def zero(cls, n: int) -> "Subspace":
        return cls(np.zeros((n, 0)))

    def distance(self, v) -> float:
        """Euclidean distance of ``v`` from the subspace."""
        v = np.asarray(v, dtype=float).reshape(-1)
        return float(np.linalg.norm(v - self.basis @ (self.basis.T @ v)))

    def contains(self, other: "Subspace", tol: float = 1e-8) -> bool:
        _check_ambient(self, other)
        if other.dim == 0:
            return True
        resid = other.basis - self.basis @ (self.basis.T @ other.basis)
        return bool(np.linalg.norm(resid, 2) <= tol)

    def __repr__(self) -> str:
        return f"Subspace(dim={self.dim}, ambient_dim={self.ambient_dim})"


def _rank_split(M: np.ndarray, tol: float | None, ref: float | None):
    U, s, Vt = np.linalg.svd(M, full_matrices=True)
    if tol is None:
        tol = default_tol(M)
    smax = s[0] if s.size else 0.0
    scale = max(smax, ref) if ref is not None else smax
    if scale == 0.0:
        return U, Vt, 0, tol
    r = int(np.sum(s >= tol * scale))
    return U, Vt, r, tol


def image(M, tol: float | None = None, ref: float | None = None) -> Subspace:
    """Column space of ``M``.

    ``ref`` optionally raises the scale that singular values are compared to.
    """
    M = _as_matrix(M)
    U, _, r, tol = _rank_split(M, tol, ref)
    return Subspace(U[:, :r], tol)


def kernel(M, tol: float | None = None, ref: float | None = None) -> Subspace:
    """Null space of ``M``; its dimension is ``cols(M) - rank``."""
    M = _as_matrix(M)
    _, Vt, r, tol = _rank_split(M, tol, ref)
    return Subspace(Vt[r:].T, tol)


def rank(M, tol: float | None = None, ref: float | None = None) -> int:
    M = _as_matrix(M)
    return _rank_split(M, tol, ref)[2]


def _check_ambient(S1: Subspace, S2: Subspace):
    if S1.ambient_dim != S2.ambient_dim:
        raise SubspaceError(
            f"ambient dimensions differ: {S1.ambient_dim} vs {S2.ambient_dim}"
        )


def preimage(A, S: Subspace, tol: float | None = None) -> Subspace:
    """``{x : A x in S}``, computed as ``ker((I - BB^T) A)``."""
    A = _as_matrix(A)
    if A.shape[0] != S.ambient_dim:
        raise SubspaceError(
            f"preimage: A has {A.shape[0]} rows but S lives in R^{S.ambient_dim}"
        )
    if tol is None:
        tol = default_tol(A)
    Pc = np.eye(S.ambient_dim) - S.projector
    ref = float(np.linalg.norm(A, 2)) if A.size else 0.0
    return kernel(Pc @ A, tol, ref=ref)


# Both arguments of intersect and sum carry orthonormal bases, so the singular
# values tested there are sines of principal angles; rounding in the
# projectors sits near 1e-15, well below this default.
ANGLE_TOL = 1e-10


def intersect(S1: Subspace, S2: Subspace, tol: float | None = None) -> Subspace:
    _check_ambient(S1, S2)
    n = S1.ambient_dim
    stacked = np.vstack([np.eye(n) - S1.projector, np.eye(n) - S2.projector])
    return kernel(stacked, ANGLE_TOL if tol is None else tol, ref=1.0)


def sum(S1: Subspace, S2: Subspace, tol: float | None = None) -> Subspace:  # noqa: A001
    _check_ambient(S1, S2)
    both = np.hstack([S1.basis, S2.basis])
    if both.shape[1] == 0:
        return Subspace.zero(S1.ambient_dim)
    return image(both, ANGLE_TOL if tol is None else tol, ref=1.0)


def equals(S1: Subspace, S2: Subspace, tol: float = 1e-8) -> bool:
    """Same dimension and projector distance at most ``tol`` (spectral norm)."""
    _check_ambient(S1, S2)
    if S1.dim != S2.dim:
        return False
    return projector_distance(S1, S2) <= tol


def projector_distance(S1: Subspace, S2: Subspace) -> float:
    _check_ambient(S1, S2)
    D = S1.projector - S2.projector
    if D.size == 0:
        return 0.0
    return float(np.linalg.norm(D, 2))


def orth(M, tol: float | None = None) -> np.ndarray:
    """Orthonormal basis matrix of ``im M`` (shortcut for ``image(M).basis``)."""
    return image(M, tol).basis
