"""Observer dynamics in quasi-Weierstrass coordinates.

For a regular index-one augmented pencil the observer splits into an ODE
``x1' = A_r x1 + B1 g`` and an algebraic equation ``0 = x2 + B2 g`` where
``g = (f(z,u,y), h(u) - y)`` and ``(z, d) = N (x1, x2)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import DaeSystem, ObserverGains, build_augmented
from .pencil import qwf_transform

NEWTON_TOL = 1e-10
NEWTON_MAX_ITERS = 50


def _norm(v) -> float:
    v = v.ravel()
    return float(np.sqrt(v @ v))


class NewtonError(RuntimeError):
    def __init__(self, msg, iters=0, residual=float("inf")):
        super().__init__(msg)
        self.iters = iters
        self.residual = residual


@dataclass(frozen=True)
class NewtonResult:
    x: np.ndarray
    iters: int
    residual: float


def newton_solve(F, jac, x0, tol=NEWTON_TOL, max_iters=NEWTON_MAX_ITERS,
                 cond_limit=1e12) -> NewtonResult:
    """Damped Newton iteration on ``F(x) = 0`` with absolute tolerance on ``||F||``.

    The step is halved while the residual would increase.
    """
    x = np.array(x0, dtype=float)
    try:
        r = F(x)
    except (ArithmeticError, ValueError) as exc:
        raise NewtonError(f"residual evaluation failed at the initial guess: {exc}") from exc
    res = _norm(r)
    for it in range(max_iters + 1):
        if res <= tol:
            return NewtonResult(x, it, res)
        if it == max_iters:
            break
        Jm = jac(x)
        try:
            step = np.linalg.solve(Jm, -r) if Jm.size else np.zeros(0)
        except np.linalg.LinAlgError:
            step = None
        if step is None or not np.all(np.isfinite(step)) or (
                _norm(step) * _norm(Jm) > cond_limit * max(_norm(r), 1e-300)):
            raise NewtonError("singular Jacobian at Newton iterate", it, res)
        lam = 1.0
        while True:
            xn = x + lam * step
            try:
                rn = F(xn)
                resn = _norm(rn)
            except (ArithmeticError, ValueError):
                resn = float("inf")
            if resn < res or lam < 1e-6:
                break
            lam *= 0.5
        if not np.isfinite(resn):
            raise NewtonError("Newton iterate left the domain", it + 1, res)
        x, r, res = xn, rn, resn
    raise NewtonError(f"Newton did not converge in {max_iters} iterations "
                      f"(residual {res:.3g})", max_iters, res)


class ReducedObserver:
    """Quasi-Weierstrass reduction of the observer for given gains."""

    def __init__(self, sys: DaeSystem, gains: ObserverGains):
        self.sys = sys
        self.gains = gains
        self.aug = build_augmented(sys, gains)
        self.qwf = qwf_transform(self.aug.pencil)
        d = sys.dims
        self.n, self.k, self.p = d["n"], gains.k, d["p"]
        self.r = self.qwf.r
        q_L, q_M = d["q_L"], d["q_M"]
        q = q_L + q_M
        inj = np.zeros((d["l"] + self.p, q + self.p))
        inj[: d["l"], :q] = sys.B
        inj[d["l"]:, q:] = np.eye(self.p)
        Bhat = self.qwf.M @ inj
        self.B1 = Bhat[: self.r]
        self.B2 = Bhat[self.r:]
        self.N = self.qwf.N
        self.Ninv = np.linalg.inv(self.N)
        self.Nbar = self.N[: self.n]
        self.A_r = self.qwf.A_r
        self._Nb1, self._Nb2 = self.Nbar[:, : self.r], self.Nbar[:, self.r:]
        self._B2f, self._B2h = self.B2[:, :q], self.B2[:, q:]
        self._B1f, self._B1h = self.B1[:, :q], self.B1[:, q:]
        J = sys.J
        self._JNb2 = J @ self._Nb2
        self._q_L = q_L
        self._B2L, self._B2M = self._B2f[:, :q_L], self._B2f[:, q_L:]
        self._I2 = np.eye(self.n2)
        # blocks of dG/dx2 and dG/dy that are not structurally zero
        live = q_L > 0
        self._L_x = live and sys.f_L.depends_on("x")
        self._L_y = live and self.p > 0 and sys.f_L.depends_on("y")
        live = q_M > 0
        self._M_w = live and sys.f_M.depends_on("w")
        self._M_y = live and self.p > 0 and sys.f_M.depends_on("y")

    @property
    def n2(self) -> int:
        return self.n + self.k - self.r

    def state(self, x1, x2) -> np.ndarray:
        return self.N @ np.concatenate([x1, x2])

    def split(self, z, d) -> tuple[np.ndarray, np.ndarray]:
        c = self.Ninv @ np.concatenate([z, d])
        return c[: self.r], c[self.r:]

    def _z(self, x1, x2):
        return self._Nb1 @ x1 + self._Nb2 @ x2

    def forcing(self, z, u, y) -> np.ndarray:
        return np.concatenate([self.sys.f(z, u, y), self.sys.h(u=u) - y])

    def G(self, x1, x2, u, y) -> np.ndarray:
        z = self._z(x1, x2)
        return x2 + self._B2f @ self.sys.f(z, u, y) + self._B2h @ (self.sys.h(u=u) - y)

    def G_x2_y(self, x1, x2, u, y):
        """``dG/dx2`` and ``dG/dy``, the blocks Newton iterations need."""
        sys = self.sys
        z = self._z(x1, x2)
        B2L, B2M = self._B2L, self._B2M
        dx2 = self._I2
        dy = -self._B2h
        if self._L_x:
            dx2 = dx2 + B2L @ (sys.f_L.jacobian("x", x=z, u=u, y=y) @ self._Nb2)
        if self._L_y:
            dy = dy + B2L @ sys.f_L.jacobian("y", x=z, u=u, y=y)
        if self._M_w or self._M_y:
            w = sys.J @ z
            if self._M_w:
                dx2 = dx2 + B2M @ (sys.f_M.jacobian("w", w=w, u=u, y=y) @ self._JNb2)
            if self._M_y:
                dy = dy + B2M @ sys.f_M.jacobian("y", w=w, u=u, y=y)
        return dx2, dy

    def jacobians(self, x1, x2, u, y):
        """``dG/dx2`` and ``dG/d(x1, u, y)`` at a point."""
        z = self._z(x1, x2)
        fx, fy, fu = self.sys.f_jacobians(z, u, y)
        p = self.p
        gx = np.vstack([fx, np.zeros((p, self.n))]) @ self.Nbar
        hu = self.sys.h.jacobian("u", u=u)
        gu = np.vstack([fu, hu])
        gy = np.vstack([fy, -np.eye(p)])
        dx2 = np.eye(self.n2) + self.B2 @ gx[:, self.r:]
        drest = self.B2 @ np.hstack([gx[:, : self.r], gu, gy])
        return dx2, drest

    def x1_rate(self, x1, x2, u, y) -> np.ndarray:
        z = self._z(x1, x2)
        return self.A_r @ x1 + self._B1f @ self.sys.f(z, u, y) + self._B1h @ (self.sys.h(u=u) - y)

    def solve_x2(self, x1, u, y, guess=None, tol=NEWTON_TOL,
                 max_iters=NEWTON_MAX_ITERS) -> NewtonResult:
        x1 = np.asarray(x1, float)
        g0 = np.zeros(self.n2) if guess is None else guess
        return newton_solve(lambda x2: self.G(x1, x2, u, y),
                            lambda x2: self.G_x2_y(x1, x2, u, y)[0],
                            g0, tol, max_iters)
