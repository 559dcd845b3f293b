"""Alternating-projection feasibility engine for the subspace-restricted LMIs.

With the gains frozen, the Wong limit ``V*`` and its projection are fixed and
the conditions become linear matrix inequalities in ``theta = (P, K, delta)``:

    M1(theta) = S^T Q S <= -eps I,     M2(theta) = Sbar^T E^T P Sbar >= eps I

(or ``>= 0`` in ``thm2`` mode) plus linear equalities.  Feasible points are
searched by alternating projections between the affine graph of these maps
and the product of spectral sets.  The engine never certifies infeasibility.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from . import subspace as ss
from .model import DaeSystem, build_augmented_from_L, embed_gains
from .synth import (MARGIN_REL, GainExtractionError, LmiCertificate, check_thm1, check_thm2,
                    error_subspaces, extract_gains, q_matrix)

FEASIBLE, INDETERMINATE = "feasible", "indeterminate"


class LmiError(ValueError):
    pass


def clamp_eigs(M: np.ndarray, upper: float | None = None, lower: float | None = None) -> np.ndarray:
    """Nearest symmetric matrix (Frobenius) with spectrum in ``[lower, upper]``."""
    if M.size == 0:
        return M.copy()
    w, U = np.linalg.eigh(0.5 * (M + M.T))
    w = np.clip(w, lower if lower is not None else -np.inf, upper if upper is not None else np.inf)
    return (U * w) @ U.T


@dataclass(eq=False)
class LmiProblem:
    """Affine maps ``theta -> vec M_i`` together with the equality constraints.

    ``theta`` is laid out as ``vec(P)`` (row-major), then the last ``k``
    columns of ``K`` (row-major), then ``delta``.
    """

    aug: object
    S: np.ndarray
    Sbar: np.ndarray
    mode: str
    eps: float
    a1: np.ndarray
    T1: np.ndarray
    a2: np.ndarray
    T2: np.ndarray
    Aeq: np.ndarray
    beq: np.ndarray
    delta_min: float = 1e-6
    structural: str = ""
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_P(self) -> int:
        return self.aug.calE.size

    @property
    def n_theta(self) -> int:
        return self.T1.shape[1] if self.T1.size else self.Aeq.shape[1]

    def unpack(self, theta) -> tuple[np.ndarray, np.ndarray, float]:
        aug = self.aug
        rows, cols = aug.calE.shape
        P = theta[: self.n_P].reshape(rows, cols)
        K = np.zeros((cols, cols))
        K[:, aug.n:] = theta[self.n_P: self.n_P + cols * aug.k].reshape(cols, aug.k)
        return P, K, float(theta[-1])

    def pack(self, P, K, delta) -> np.ndarray:
        return np.concatenate([np.asarray(P, float).ravel(),
                               np.asarray(K, float)[:, self.aug.n:].ravel(), [float(delta)]])

    def certificate(self, theta) -> LmiCertificate:
        P, K, d = self.unpack(theta)
        return LmiCertificate(P, K, d, n=self.aug.n)

    def M1(self, theta) -> np.ndarray:
        m = self.S.shape[1]
        return (self.a1 + self.T1 @ theta).reshape(m, m)

    def M2(self, theta) -> np.ndarray:
        m = self.Sbar.shape[1]
        return (self.a2 + self.T2 @ theta).reshape(m, m)

    def violation(self, theta) -> dict:
        """Margins of every constraint at ``theta`` (negative means violated)."""
        m1 = self.M1(theta)
        m2 = self.M2(theta)
        l1 = float(np.linalg.eigvalsh(0.5 * (m1 + m1.T)).max()) if m1.size else -np.inf
        l2 = float(np.linalg.eigvalsh(0.5 * (m2 + m2.T)).min()) if m2.size else np.inf
        eq = float(np.linalg.norm(self.Aeq @ theta - self.beq)) if self.Aeq.size else 0.0
        return {"max_eig_M1": l1, "min_eig_M2": l2, "eq_residual": eq, "delta": float(theta[-1])}

    def margins(self, theta, eps: float | None = None) -> tuple[float, float]:
        """Required margins for ``M1`` and ``M2``: ``eps`` or twice the
        verifier's relative margin, whichever is larger."""
        eps = self.eps if eps is None else eps
        P, K, d = self.unpack(theta)
        Q = q_matrix(self.aug, P, K, d)
        EP = self.aug.calE.T @ P
        return (max(eps, 2 * MARGIN_REL * _scale(Q)), max(eps, 2 * MARGIN_REL * _scale(EP)))

    def is_feasible(self, theta, eps: float | None = None) -> bool:
        e1, e2 = self.margins(theta, eps)
        v = self.violation(theta)
        lo = e2 if self.mode == "thm1" else -1e-10 * max(1.0, _norm(self.M2(theta)))
        return (v["max_eig_M1"] <= -e1 and v["min_eig_M2"] >= lo
                and v["eq_residual"] <= 1e-9 * max(1.0, _norm(theta)) and v["delta"] > 0)


def _norm(x) -> float:
    return float(np.linalg.norm(x)) if np.size(x) else 0.0


def _scale(M) -> float:
    return max(1.0, float(np.linalg.norm(M, 2))) if np.size(M) else 1.0


def _affine(fn, n_theta: int):
    a = fn(np.zeros(n_theta)).ravel()
    T = np.empty((a.size, n_theta))
    for i in range(n_theta):
        e = np.zeros(n_theta)
        e[i] = 1.0
        T[:, i] = fn(e).ravel() - a
    return a, T


def assemble(sys: DaeSystem, L_hat, k: int | None = None, mode: str = "thm1",
             eps: float = 1e-6, tie_gains: bool = True) -> LmiProblem:
    """Freeze the gains ``L_hat`` and build the LMI problem in ``(P, K, delta)``.

    With ``tie_gains`` the equality ``P^T L_hat = K H`` is imposed, so every
    solution certifies exactly the given gains.
    """
    if mode not in ("thm1", "thm2"):
        raise LmiError(f"unknown mode {mode!r}")
    aug = build_augmented_from_L(sys, L_hat)
    if k is not None and aug.k != k:
        raise LmiError(f"L_hat carries k = {aug.k} innovations, expected {k}")
    V, Vbar = error_subspaces(aug)
    S, Sb = V.basis, Vbar.basis
    rows, cols = aug.calE.shape
    n_theta = rows * cols + cols * aug.k + 1

    def unpack(theta):
        P = theta[: rows * cols].reshape(rows, cols)
        K = np.zeros((cols, cols))
        K[:, aug.n:] = theta[rows * cols: rows * cols + cols * aug.k].reshape(cols, aug.k)
        return P, K, theta[-1]

    def m1(theta):
        return S.T @ q_matrix(aug, *unpack(theta)) @ S

    def m2(theta):
        P = unpack(theta)[0]
        M = Sb.T @ aug.calE.T @ P @ Sb
        return 0.5 * (M + M.T)

    def eqs(theta):
        P, K, _ = unpack(theta)
        sym = P.T @ aug.calE - aug.calE.T @ P
        iu = np.triu_indices(cols, 1)
        parts = [sym[iu]]
        if tie_gains:
            parts.append((P.T @ aug.L_hat - K @ aug.H)[:, aug.n:].ravel())
        return np.concatenate(parts)

    a1, T1 = _affine(m1, n_theta)
    a2, T2 = _affine(m2, n_theta)
    c, Aeq = _affine(eqs, n_theta)
    prob = LmiProblem(aug, S, Sb, mode, float(eps), a1, T1, a2, T2, Aeq, -c)

    rng = np.random.default_rng(12345)
    for _ in range(3):
        th = rng.standard_normal(n_theta)
        th[-1] = abs(th[-1]) + 0.1
        P, K, d = prob.unpack(th)
        ref = S.T @ q_matrix(aug, P, K, d) @ S
        if not np.allclose(prob.M1(th), ref, rtol=1e-10, atol=1e-10 * max(1.0, _norm(ref))):
            raise LmiError("affine map does not reproduce the dissipation matrix")

    if mode == "thm1" and Vbar.dim:
        rk = ss.rank(aug.calE @ Sb, 1e-9, ref=max(1.0, _norm(aug.calE)))
        if rk < Vbar.dim:
            prob.structural = (f"E Vbar is rank-deficient ({rk} < {Vbar.dim}): "
                               "the positivity constraint cannot hold for any P")
    return prob


@dataclass
class SolveResult:
    status: str
    theta: np.ndarray
    iterations: int
    residual: float
    trace: list = field(default_factory=list)
    detail: str = ""

    @property
    def feasible(self) -> bool:
        return self.status == FEASIBLE


def _projector_C1(prob: LmiProblem):
    """Least-squares projection onto the graph ``{(theta, M1(theta), M2(theta))}``
    intersected with the equality constraints."""
    if "c1" in prob._cache:
        return prob._cache["c1"]
    n = prob.n_theta
    if prob.Aeq.size:
        theta_p = np.linalg.lstsq(prob.Aeq, prob.beq, rcond=None)[0]
        if _norm(prob.Aeq @ theta_p - prob.beq) > 1e-9 * max(1.0, _norm(prob.beq)):
            raise LmiError("equality constraints are inconsistent")
        Z = ss.kernel(prob.Aeq, 1e-12, ref=1.0).basis
    else:
        theta_p, Z = np.zeros(n), np.eye(n)
    TZ1, TZ2 = prob.T1 @ Z, prob.T2 @ Z
    G = np.eye(Z.shape[1]) + TZ1.T @ TZ1 + TZ2.T @ TZ2
    cho = sla.cho_factor(G)
    b1 = prob.a1 + prob.T1 @ theta_p
    b2 = prob.a2 + prob.T2 @ theta_p

    def project(theta0, Y1, Y2):
        rhs = Z.T @ (theta0 - theta_p) + TZ1.T @ (Y1 - b1) + TZ2.T @ (Y2 - b2)
        xi = sla.cho_solve(cho, rhs)
        return theta_p + Z @ xi

    prob._cache["c1"] = (project, theta_p, Z)
    return prob._cache["c1"]


def _scaling_search(prob: LmiProblem, theta, eps: float):
    """Try enlarging ``delta`` alone, then the whole of ``theta``.

    The dissipation constraint improves with ``delta`` whenever the Lipschitz
    channel dominates, and with the overall scale whenever the homogeneous
    part of ``theta`` is already feasible; both are one-dimensional moves that
    projections make only slowly.
    """
    for j in range(1, 31):
        t = theta.copy()
        t[-1] *= 2.0 ** j
        if prob.is_feasible(t, eps):
            return t
        t = theta * 2.0 ** j
        if prob.is_feasible(t, eps):
            return t
    return None


def solve_feasibility(prob: LmiProblem, max_iters: int = 5000, seed: int = 42,
                      eps: float | None = None, theta0=None, tol: float = 1e-9,
                      relax: float = 1.5, search_every: int = 10) -> SolveResult:
    """Alternate between the affine graph and the spectral sets.

    The spectral sets are clamped at ``2 eps`` while feasibility is tested at
    ``eps``, so iterates enter the interior before being accepted.  Steps are
    over-relaxed by ``relax`` and every ``search_every`` iterations a scaling
    line search is attempted.
    """
    eps = prob.eps if eps is None else eps
    if prob.structural:
        th = np.zeros(prob.n_theta) if theta0 is None else np.array(theta0, float)
        th[-1] = max(th[-1], 1.0)
        return SolveResult(INDETERMINATE, th, 0, np.inf, [], prob.structural)
    project, theta_p, Z = _projector_C1(prob)
    m1, m2 = prob.S.shape[1], prob.Sbar.shape[1]
    if theta0 is None:
        rng = np.random.default_rng(seed)
        theta = theta_p + Z @ (0.1 * rng.standard_normal(Z.shape[1]))
        theta[-1] = max(theta[-1], 1.0)
    else:
        theta = np.asarray(theta0, float).copy()
    trace = []
    best = (np.inf, theta)
    for it in range(max_iters + 1):
        if prob.is_feasible(theta, eps):
            return SolveResult(FEASIBLE, theta, it, trace[-1] if trace else 0.0, trace)
        if it == max_iters:
            break
        if search_every and it % search_every == 0:
            t = _scaling_search(prob, theta, eps)
            if t is not None:
                return SolveResult(FEASIBLE, t, it, trace[-1] if trace else 0.0, trace)
        M1, M2 = prob.M1(theta), prob.M2(theta)
        e1, e2 = prob.margins(theta, eps)
        lower2 = 2 * e2 if prob.mode == "thm1" else 0.0
        X1 = clamp_eigs(M1, upper=-2 * e1) if m1 else M1
        X2 = clamp_eigs(M2, lower=lower2) if m2 else M2
        t2 = theta.copy()
        t2[-1] = max(t2[-1], prob.delta_min, 2 * eps)
        res = float(np.sqrt(_norm(X1 - M1) ** 2 + _norm(X2 - M2) ** 2
                            + (t2[-1] - theta[-1]) ** 2))
        trace.append(res)
        if res < best[0]:
            best = (res, theta)
        if res < tol:
            break
        theta = theta + relax * (project(t2, X1.ravel(), X2.ravel()) - theta)
    return SolveResult(INDETERMINATE, best[1], len(trace), best[0], trace,
                       "iteration budget exhausted" if len(trace) >= max_iters else "stalled")


def make_invertible(prob: LmiProblem, theta, seed: int = 42, cond_limit: float = 1e8):
    """Move a feasible ``theta`` inside the feasible set until ``P`` is
    well conditioned (needed when ``P`` must be invertible)."""
    P = prob.unpack(theta)[0]
    if P.shape[0] != P.shape[1]:
        return None
    if np.linalg.cond(P) < cond_limit:
        return theta
    _, _, Z = _projector_C1(prob)
    rng = np.random.default_rng(seed)
    scale = max(1.0, _norm(theta))
    for _ in range(20):
        dirn = Z @ rng.standard_normal(Z.shape[1])
        dirn[-1] = 0.0
        dirn *= scale / max(_norm(dirn), 1e-300)
        for t in (1e-1, 1e-2, 1e-3, 1e-4, 1e-5):
            th = theta + t * dirn
            if prob.is_feasible(th) and np.linalg.cond(prob.unpack(th)[0]) < cond_limit:
                return th
    return None


def solve_multistart(prob: LmiProblem, seeds, jobs: int = 1, **opts) -> SolveResult:
    """Independent cold starts; the first feasible result in seed order wins."""
    seeds = list(seeds)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(lambda s: solve_feasibility(prob, seed=s, **opts), seeds))
    else:
        results = [solve_feasibility(prob, seed=s, **opts) for s in seeds]
    for r in results:
        if r.feasible:
            return r
    return min(results, key=lambda r: r.residual)


@dataclass
class GainSearchResult:
    status: str
    gains: object = None
    cert: LmiCertificate | None = None
    report: object = None
    rounds: int = 0
    residuals: list = field(default_factory=list)
    detail: str = ""


def verify(sys: DaeSystem, gains, cert: LmiCertificate, mode: str, margin: float | None):
    if mode == "thm1":
        return check_thm1(sys, gains, cert, margin=margin)
    return check_thm2(sys, gains, cert, margin=margin)


def iterate_gain_search(sys: DaeSystem, k: int, L_hat0=None, rounds: int = 5,
                        mode: str = "thm1", eps: float = 1e-6, max_iters: int = 5000,
                        seed: int = 42, theta0=None, jobs: int = 1) -> GainSearchResult:
    """Fixed-point search over gains.

    Each round first tries to certify the current gains exactly.  If that is
    inconclusive, the gain coupling is released, a new ``L_hat`` is read off
    the resulting ``(P, K)`` and the next round starts from it.  Returned
    pairs are always re-verified with the subspace of the final gains.
    """
    d = sys.dims
    n, l, p = d["n"], d["l"], d["p"]
    L_hat = np.zeros((l + p, n + k)) if L_hat0 is None else np.asarray(L_hat0, float)
    residuals = []
    detail = "no verified certificate within the round budget"
    for rnd in range(1, rounds + 1):
        prob = assemble(sys, L_hat, k, mode, eps, tie_gains=True)
        th0 = theta0 if (rnd == 1 and theta0 is not None) else None
        if th0 is not None:
            res = solve_feasibility(prob, max_iters, seed, theta0=th0)
        else:
            res = solve_multistart(prob, [seed + i for i in range(max(jobs, 1))], jobs,
                                   max_iters=max_iters)
        residuals.append(res.residual)
        if res.feasible:
            theta = res.theta
            if mode == "thm2":
                theta = make_invertible(prob, theta, seed)
            if theta is not None:
                cert = prob.certificate(theta)
                gains = prob.aug.gains
                rep = verify(sys, gains, cert, mode, None)
                if rep.passed:
                    return GainSearchResult(FEASIBLE, gains, cert, rep, rnd, residuals)
        if k == 0 or prob.structural:
            detail = prob.structural or detail
            break
        free = assemble(sys, L_hat, k, mode, eps, tie_gains=False)
        fres = solve_feasibility(free, max_iters, seed + rnd)
        residuals.append(fres.residual)
        try:
            g = extract_gains(free.certificate(fres.theta), d, near=L_hat, tol=1e-6)
        except GainExtractionError:
            break
        L_new = embed_gains(g, n)
        if _norm(L_new - L_hat) <= 1e-12 * max(1.0, _norm(L_hat)):
            break
        L_hat = L_new
    return GainSearchResult(INDETERMINATE, rounds=len(residuals), residuals=residuals,
                            detail=detail)
