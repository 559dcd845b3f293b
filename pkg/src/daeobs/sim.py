"""Simulation of plant and observer in quasi-Weierstrass coordinates.

Both are integrated with a half-explicit classical Runge-Kutta scheme: the
differential coordinates take RK4 stages, and the algebraic coordinates are
re-solved by Newton's method at every stage.  The plant is simulated inside
the observer's coordinates with the innovations pinned to zero, its output
``y`` being an additional algebraic unknown.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .expr import VectorFunction
from .model import DaeSystem, ObserverGains
from .pencil import PencilError
from .reduction import NEWTON_MAX_ITERS, NEWTON_TOL, NewtonError, ReducedObserver, newton_solve
from .subspace import Subspace


class SimulationError(RuntimeError):
    pass


class UnsupportedSystem(SimulationError):
    """The system is outside the index-one reduction the simulator relies on."""


def input_function(texts) -> VectorFunction:
    """Input signal ``u(t)`` from expression strings in the variable ``t``."""
    return VectorFunction(list(texts), {"t": 1})


def _u_at(u, t):
    if u is None:
        return np.zeros(0)
    return u(t=t)


@dataclass
class SimTrace:
    t: np.ndarray
    x: np.ndarray
    z: np.ndarray | None = None
    d: np.ndarray | None = None
    y: np.ndarray | None = None
    u: np.ndarray | None = None
    newton_iters: np.ndarray | None = None
    g_residual: np.ndarray | None = None
    info: dict = field(default_factory=dict)

    @property
    def e(self) -> np.ndarray:
        return self.z - self.x

    @property
    def err_norm(self) -> np.ndarray:
        return np.linalg.norm(self.e, axis=1)

    @property
    def d_norm(self) -> np.ndarray:
        return np.linalg.norm(self.d, axis=1) if self.d.size else np.zeros(len(self.t))

    def phi(self, sys: DaeSystem) -> np.ndarray:
        """Nonlinearity mismatch ``f(z,u,y) - f(x,u,y)`` along the grid."""
        return np.array([sys.f(z, u, y) - sys.f(x, u, y)
                         for x, z, u, y in zip(self.x, self.z, self.u, self.y)])

    def to_csv(self, path) -> None:
        n = self.x.shape[1]
        k = self.d.shape[1]
        header = (["t"] + [f"x{i + 1}" for i in range(n)] + [f"z{i + 1}" for i in range(n)]
                  + [f"d{i + 1}" for i in range(k)]
                  + ["err_norm", "d_norm", "newton_iters", "g_residual"])
        en, dn = self.err_norm, self.d_norm
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for i in range(len(self.t)):
                row = [self.t[i], *self.x[i], *self.z[i], *self.d[i], en[i], dn[i]]
                w.writerow([f"{v:.17g}" for v in row]
                           + [str(int(self.newton_iters[i])), f"{self.g_residual[i]:.17g}"])


def _grid(t_span, dt) -> np.ndarray:
    t0, t1 = map(float, t_span)
    if not dt > 0 or not np.isfinite(dt):
        raise ValueError("dt must be positive")
    if not t1 > t0:
        raise ValueError("t_span must be increasing")
    steps = int(round((t1 - t0) / dt))
    if steps < 1 or abs(t0 + steps * dt - t1) > 1e-9 * max(1.0, abs(t1)):
        raise ValueError("t_span length must be a whole multiple of dt")
    return t0 + dt * np.arange(steps + 1)


class _Plant:
    """Plant algebraic part: given ``x1`` solve ``G = 0`` and ``d = 0`` for
    ``(x2, y)``."""

    def __init__(self, red: ReducedObserver):
        self.red = red
        n, r = red.n, red.r
        Nd = red.N[n:]
        self.Nd1, self.Nd2 = Nd[:, :r], Nd[:, r:]
        if self.Nd2.shape[0] + red.n2 != red.n2 + red.p:
            raise UnsupportedSystem(
                f"plant has l != n (innovations k = {red.k}, outputs p = {red.p}); "
                "its output cannot be solved for in the reduced coordinates")

    def residual(self, x1, v, u):
        n2 = self.red.n2
        x2, y = v[:n2], v[n2:]
        return np.concatenate([self.red.G(x1, x2, u, y), self.Nd1 @ x1 + self.Nd2 @ x2])

    def jac(self, x1, v, u):
        red = self.red
        n2 = red.n2
        x2, y = v[:n2], v[n2:]
        dx2, dy = red.G_x2_y(x1, x2, u, y)
        top = np.hstack([dx2, dy])
        bot = np.hstack([self.Nd2, np.zeros((self.Nd2.shape[0], red.p))])
        return np.vstack([top, bot])

    def solve(self, x1, u, guess, tol, max_iters):
        return newton_solve(lambda v: self.residual(x1, v, u), lambda v: self.jac(x1, v, u),
                            guess, tol, max_iters)


def _reduce(sys: DaeSystem, gains: ObserverGains | None, seed: int = 0) -> ReducedObserver:
    d = sys.dims
    if gains is not None:
        try:
            return ReducedObserver(sys, gains)
        except PencilError as exc:
            raise UnsupportedSystem(f"augmented pencil is not regular of index one: {exc}") from exc
    k = d["l"] + d["p"] - d["n"]
    if k < 0:
        raise UnsupportedSystem("n > l + p")
    rng = np.random.default_rng(seed)
    for _ in range(20):
        g = ObserverGains(rng.standard_normal((d["l"], k)), rng.standard_normal((d["p"], k)))
        try:
            return ReducedObserver(sys, g)
        except PencilError:
            continue
    raise UnsupportedSystem("no gains found that make the augmented pencil regular of index one")


def consistent_init(red: ReducedObserver, x1_0, u0, y0, guess=None,
                    tol: float = NEWTON_TOL, max_iters: int = NEWTON_MAX_ITERS):
    """Complete ``x1_0`` by the algebraic coordinates solving ``G = 0``.

    Returns ``(x1, x2, newton_result)``.
    """
    x1 = np.asarray(x1_0, float)
    res = red.solve_x2(x1, u0, np.asarray(y0, float), guess, tol, max_iters)
    return x1, res.x, res


def simulate_plant(sys: DaeSystem, u, x0, t_span, dt, gains: ObserverGains | None = None,
                   tol: float = NEWTON_TOL, max_iters: int = NEWTON_MAX_ITERS,
                   seed: int = 0) -> SimTrace:
    """Integrate the plant alone; ``x0`` is projected to a consistent state."""
    red = _reduce(sys, gains, seed)
    tr = _simulate(sys, red, u, x0, None, t_span, dt, tol, max_iters)
    tr.z = tr.d = None
    return tr


def simulate_coupled(sys: DaeSystem, gains: ObserverGains, u, x0, z0_guess, t_span, dt,
                     tol: float = NEWTON_TOL, max_iters: int = NEWTON_MAX_ITERS) -> SimTrace:
    """Integrate plant and observer together, the observer driven by the
    plant's input and output."""
    red = _reduce(sys, gains)
    return _simulate(sys, red, u, x0, z0_guess, t_span, dt, tol, max_iters)


def _simulate(sys, red, u, x0, z0, t_span, dt, tol, max_iters) -> SimTrace:
    t = _grid(t_span, dt)
    plant = _Plant(red)
    n, r, n2, p, k = red.n, red.r, red.n2, red.p, red.k
    coupled = z0 is not None

    x0 = np.asarray(x0, float)
    if x0.shape != (n,):
        raise ValueError(f"x0 must have {n} entries")
    u0 = _u_at(u, t[0])
    xp1 = red.split(x0, np.zeros(k))[0]
    guess = {"p": np.concatenate([red.split(x0, np.zeros(k))[1], sys.output(x0, u0)]),
             "o": None}
    try:
        pr = plant.solve(xp1, u0, guess["p"], tol, max_iters)
    except NewtonError as exc:
        raise SimulationError(f"plant initialisation failed: {exc}") from exc
    guess["p"] = pr.x
    x_init = red.state(xp1, pr.x[:n2])[:n]
    info = {"x0_projection_distance": float(np.linalg.norm(x_init - x0))}
    X = xp1
    if coupled:
        z0 = np.asarray(z0, float)
        if z0.shape != (n,):
            raise ValueError(f"z0 must have {n} entries")
        zo1, zo2 = red.split(z0, np.zeros(k))
        y0 = pr.x[n2:]
        try:
            _, z2, _ = consistent_init(red, zo1, u0, y0, zo2, tol, max_iters)
        except NewtonError as exc:
            raise SimulationError(f"observer initialisation failed: {exc}") from exc
        guess["o"] = z2
        info["z0_projection_distance"] = float(
            np.linalg.norm(red.state(zo1, z2)[:n] - z0))
        X = np.concatenate([xp1, zo1])

    stats = {"iters": 0, "res": 0.0}

    def solve_alg(tt, Xs, gp, go):
        ut = _u_at(u, tt)
        x1 = Xs[:r]
        pres = plant.solve(x1, ut, gp, tol, max_iters)
        v = pres.x
        x2, y = v[:n2], v[n2:]
        stats["iters"] += pres.iters
        stats["res"] = max(stats["res"], pres.residual)
        out = {"u": ut, "x1": x1, "x2": x2, "y": y, "v": v}
        if coupled:
            z1 = Xs[r:]
            ores = red.solve_x2(z1, ut, y, go, tol, max_iters)
            stats["iters"] += ores.iters
            stats["res"] = max(stats["res"], ores.residual)
            out["z1"], out["z2"] = z1, ores.x
        return out

    def rate(a):
        dx = red.x1_rate(a["x1"], a["x2"], a["u"], a["y"])
        if coupled:
            dx = np.concatenate([dx, red.x1_rate(a["z1"], a["z2"], a["u"], a["y"])])
        return dx

    N = len(t)
    xs, zs, ds = np.zeros((N, n)), np.zeros((N, n)), np.zeros((N, k))
    ys, us = np.zeros((N, p)), np.zeros((N, len(u0)))
    iters, gres = np.zeros(N, dtype=int), np.zeros(N)

    def record(i, a):
        xs[i] = red.state(a["x1"], a["x2"])[:n]
        ys[i], us[i] = a["y"], a["u"]
        if coupled:
            eta = red.state(a["z1"], a["z2"])
            zs[i], ds[i] = eta[:n], eta[n:]
        iters[i], gres[i] = stats["iters"], stats["res"]
        stats["iters"], stats["res"] = 0, 0.0

    # algebraic unknowns at the last two grid points; stage guesses are
    # linear extrapolations from them
    i = 0
    try:
        a = solve_alg(t[0], X, guess["p"], guess["o"])
        record(0, a)
        prev = None
        for i in range(1, N):
            h = t[i] - t[i - 1]

            def predict(frac, key):
                cur = a[key]
                return cur if prev is None else cur + frac * (cur - prev[key])

            def stage(frac, Xs):
                return solve_alg(t[i - 1] + frac * h, Xs, predict(frac, "v"),
                                 predict(frac, "z2") if coupled else None)

            k1 = rate(a)
            s2 = stage(0.5, X + h / 2 * k1)
            k2 = rate(s2)
            s3 = stage(0.5, X + h / 2 * k2)
            k3 = rate(s3)
            s4 = stage(1.0, X + h * k3)
            k4 = rate(s4)
            X = X + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            if not np.all(np.isfinite(X)):
                raise SimulationError(f"state became non-finite at t = {t[i]:.6g}")
            prev = a
            a = solve_alg(t[i], X, s4["v"], s4.get("z2"))
            record(i, a)
    except NewtonError as exc:
        raise SimulationError(f"Newton failure at t = {t[i]:.6g}: {exc}") from exc
    if not coupled:
        zs, ds = xs.copy(), np.zeros((N, k))
    return SimTrace(t, xs, zs, ds, ys, us, iters, gres, info)


def check_trajectory_subspace(trace: SimTrace, Vstar: Subspace, sys: DaeSystem) -> float:
    """Largest distance of ``(e, d, phi)`` from ``Vstar`` over the grid."""
    phi = trace.phi(sys)
    W = np.hstack([trace.e, trace.d, phi])
    B = Vstar.basis
    R = W - (W @ B) @ B.T
    return float(np.linalg.norm(R, axis=1).max())


class DecayFit(NamedTuple):
    beta: float
    residual: float

    @property
    def decaying(self) -> bool:
        return self.beta > 0


def estimate_decay(trace_or_t, err=None) -> DecayFit:
    """Least-squares slope of ``-log ||e||`` over the second half of the run.

    Samples at the rounding floor are dropped; a run whose error vanishes
    identically reports an infinite rate.
    """
    if err is None:
        t, err = trace_or_t.t, trace_or_t.err_norm
    else:
        t = np.asarray(trace_or_t, float)
        err = np.asarray(err, float)
    emax = float(np.max(err)) if err.size else 0.0
    if emax == 0.0:
        return DecayFit(float("inf"), 0.0)
    tail = t >= t[0] + 0.5 * (t[-1] - t[0])
    ok = tail & (err > 1e-13 * emax)
    if ok.sum() < 2:
        ok = err > 1e-13 * emax
    if ok.sum() < 2:
        return DecayFit(float("inf"), 0.0)
    A = np.vstack([t[ok], np.ones(ok.sum())]).T
    coef, *_ = np.linalg.lstsq(A, np.log(err[ok]), rcond=None)
    fit = A @ coef
    resid = float(np.sqrt(np.mean((np.log(err[ok]) - fit) ** 2)))
    beta = -float(coef[0])
    if abs(beta) < 1e-12:
        beta = 0.0
    return DecayFit(beta, resid)
