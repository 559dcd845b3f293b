"""Certificate checks for state estimators and asymptotic observers.

Every check returns a :class:`CertificateReport` listing each hypothesis with
a status and a numeric margin (positive means satisfied with room to spare).
Conditions that are decided only on samples are marked ``sampled-only`` and
hypotheses beyond numerical reach are marked ``assumed``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import subspace as ss
from .model import (AugmentedSystem, DaeSystem, ObserverGains, build_augmented,
                    build_augmented_from_L, gains_from_L)
from .pencil import PencilError, is_regular, qwf_transform, wong_limits
from .reduction import NewtonError, ReducedObserver
from .subspace import Subspace

PASS, FAIL, INDET = "pass", "fail", "indeterminate"
SAMPLED, ABSENT, ASSUMED = "sampled-only", "not-present", "assumed"
MARGIN_REL = 1e-7
EQ_TOL = 1e-9
COND_LIMIT = 1e12
NON_LIPSCHITZ = {"abs", "sqrt", "log", "sign"}


class GainExtractionError(ValueError):
    """No gain matrix reproduces ``K H`` through ``P^T``."""


@dataclass(frozen=True, eq=False)
class LmiCertificate:
    """``(P, K, delta)``; only the last ``k`` columns of ``K`` may be nonzero."""

    P: np.ndarray
    K: np.ndarray
    delta: float
    n: int | None = None

    def __post_init__(self):
        P = np.atleast_2d(np.asarray(self.P, float))
        K = np.atleast_2d(np.asarray(self.K, float))
        if not (np.all(np.isfinite(P)) and np.all(np.isfinite(K)) and np.isfinite(self.delta)):
            raise ValueError("certificate has non-finite entries")
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if K.shape != (P.shape[1], P.shape[1]):
            raise ValueError(f"K has shape {K.shape}, expected {(P.shape[1],) * 2}")
        if self.n is not None and np.any(K[:, : self.n] != 0):
            raise ValueError("only the last k columns of K may be nonzero")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "delta", float(self.delta))


@dataclass
class ConditionResult:
    name: str
    status: str
    margin: float | None = None
    detail: str = ""
    value: float | None = None


@dataclass
class CertificateReport:
    theorem: str
    conditions: list = field(default_factory=list)
    subspaces: dict = field(default_factory=dict)
    info: dict = field(default_factory=dict)

    def add(self, name, status, margin=None, detail="", value=None) -> ConditionResult:
        c = ConditionResult(name, status, None if margin is None else float(margin), detail,
                            None if value is None else float(value))
        self.conditions.append(c)
        return c

    def condition(self, name: str) -> ConditionResult:
        for c in self.conditions:
            if c.name == name:
                return c
        raise KeyError(name)

    @property
    def status(self) -> str:
        states = {c.status for c in self.conditions}
        if FAIL in states:
            return FAIL
        if INDET in states:
            return INDET
        return PASS

    @property
    def passed(self) -> bool:
        return self.status == PASS

    @property
    def claim(self) -> str:
        if not self.passed:
            return "none"
        if self.theorem == "3":
            return "asymptotic observer (global conditions sampled-only)"
        return "state estimator"

    def to_dict(self) -> dict:
        def arr(v):
            return np.asarray(v).tolist() if isinstance(v, np.ndarray) else v
        return {
            "theorem": self.theorem,
            "status": self.status,
            "claim": self.claim,
            "conditions": [vars(c).copy() for c in self.conditions],
            "subspaces": {k: {"dim": int(v.shape[1]), "basis": v.tolist()}
                          for k, v in self.subspaces.items()},
            "info": {k: arr(v) for k, v in self.info.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_text(self) -> str:
        w = max([len(c.name) for c in self.conditions] + [9])
        lines = [f"theorem {self.theorem}: {self.status.upper()}  (claim: {self.claim})"]
        for c in self.conditions:
            m = "" if c.margin is None else f"margin {c.margin: .3e}"
            lines.append(f"  {c.name:<{w}}  {c.status:<13} {m:<20} {c.detail}".rstrip())
        for k, v in self.subspaces.items():
            lines.append(f"  subspace {k}: dim {v.shape[1]} in R^{v.shape[0]}")
        return "\n".join(lines)


def build_Q(aug: AugmentedSystem, cert: LmiCertificate) -> np.ndarray:
    """The dissipation matrix of the error system for certificate ``cert``."""
    return q_matrix(aug, cert.P, cert.K, cert.delta)


def q_matrix(aug: AugmentedSystem, P, K, dl: float) -> np.ndarray:
    """Affine core of :func:`build_Q` without certificate validation."""
    if P.shape != aug.calE.shape or K.shape != aug.H.shape:
        raise ValueError(f"certificate shapes {P.shape}, {K.shape} do not match "
                         f"{aug.calE.shape}, {aug.H.shape}")
    KH = K @ aug.H
    Q11 = (aug.A_hat.T @ P + P.T @ aug.A_hat + KH.T + KH
           + dl * aug.calF.T @ aug.calF - aug.mu * aug.calJ)
    Q12 = P.T @ aug.calB + aug.Theta_hat
    Q22 = -dl * aug.Lambda_qL
    Q = np.block([[Q11, Q12], [Q12.T, Q22]])
    return 0.5 * (Q + Q.T)


def _augment(sys: DaeSystem, gains_or_L) -> AugmentedSystem:
    if isinstance(gains_or_L, ObserverGains):
        return build_augmented(sys, gains_or_L)
    return build_augmented_from_L(sys, gains_or_L)


def _scale(M) -> float:
    return max(1.0, float(np.linalg.norm(M, 2))) if M.size else 1.0


def _sym_eigs(M) -> np.ndarray:
    return np.linalg.eigvalsh(0.5 * (M + M.T)) if M.size else np.zeros(0)


def error_subspaces(aug: AugmentedSystem) -> tuple[Subspace, Subspace]:
    """Wong limit ``V*`` of ``s[calE,0] - [calA,calB]`` and its projection onto
    the first ``n+k`` coordinates."""
    V = wong_limits(aug.error_pencil).Vstar
    nk = aug.calE.shape[1]
    Vbar = ss.image(V.basis[:nk], 1e-9, ref=1.0) if V.dim else Subspace.zero(nk)
    return V, Vbar


def _lyapunov_checks(rep: CertificateReport, aug: AugmentedSystem, cert: LmiCertificate,
                     margin: float | None, semidefinite: bool, vstar: Subspace | None):
    """Symmetry, dissipation on V*, positivity of calE^T P on the projected
    limit, and consistency of the gains with ``(P, K)``."""
    V, Vbar = error_subspaces(aug)
    if vstar is not None:
        V = vstar
    rep.subspaces["Vstar"] = V.basis
    rep.subspaces["Vbar"] = Vbar.basis
    P, calE = cert.P, aug.calE

    EP = calE.T @ P
    sym_res = float(np.linalg.norm(P.T @ calE - EP, 2)) if EP.size else 0.0
    tol = EQ_TOL * _scale(EP)
    rep.add("symmetry", PASS if sym_res <= tol else FAIL, tol - sym_res,
            f"||P^T E - E^T P|| = {sym_res:.3e}", sym_res)

    Q = build_Q(aug, cert)
    eps_q = MARGIN_REL * _scale(Q) if margin is None else margin
    lam_q = None
    if V.dim == 0:
        rep.add("dissipation_on_V", PASS, None, "V* = {0}: vacuous")
    else:
        lam_q = float(_sym_eigs(V.basis.T @ Q @ V.basis).max())
        rep.add("dissipation_on_V", PASS if lam_q < -eps_q else FAIL, -lam_q - eps_q,
                f"max eig S^T Q S = {lam_q:.6e}", lam_q)
    rep.info["Q_full_max_eig"] = float(_sym_eigs(Q).max()) if Q.size else 0.0

    eps_p = MARGIN_REL * _scale(EP) if margin is None else margin
    lam = None
    if Vbar.dim == 0:
        rep.add("positivity_on_Vbar", PASS, None, "projected limit is {0}: vacuous")
    else:
        Sb = Vbar.basis
        eigs = _sym_eigs(Sb.T @ EP @ Sb)
        lam = (float(eigs.min()), float(eigs.max()))
        if semidefinite:
            ok = lam[0] >= -eps_p
            m = lam[0] + eps_p
        else:
            ok = lam[0] > eps_p
            m = lam[0] - eps_p
        detail = f"min eig Sbar^T E^T P Sbar = {lam[0]:.6e}"
        rk = ss.rank(calE @ Sb, 1e-9, ref=_scale(calE))
        if not ok and rk < Vbar.dim:
            detail += (f"; E Vbar is rank-deficient ({rk} < {Vbar.dim}), "
                       "so no P can satisfy this")
        rep.add("positivity_on_Vbar", PASS if ok else FAIL, m, detail, lam[0])

    KH = cert.K @ aug.H
    g_res = float(np.linalg.norm(P.T @ aug.L_hat - KH, 2)) if KH.size else 0.0
    gtol = 1e-8 * max(_scale(KH), _scale(P) * _scale(aug.L_hat))
    rep.add("gain_consistency", PASS if g_res <= gtol else FAIL, gtol - g_res,
            f"||P^T L_hat - K H|| = {g_res:.3e}", g_res)

    if lam_q is not None and lam is not None and lam_q < 0 and lam[1] > 0:
        rep.info["beta"] = -lam_q / lam[1]


def check_thm1(sys: DaeSystem, gains_or_L, cert: LmiCertificate, margin: float | None = None,
               vstar: Subspace | None = None) -> CertificateReport:
    """State-estimator certificate with strict positivity on the projected limit.

    ``vstar`` overrides the computed Wong limit basis (used to test basis
    invariance).
    """
    rep = CertificateReport("1")
    d = sys.dims
    ok = d["n"] <= d["l"] + d["p"]
    rep.add("rank_necessary", PASS if ok else FAIL, None,
            f"n = {d['n']} {'<=' if ok else '>'} l + p = {d['l'] + d['p']}")
    if not ok:
        return rep
    aug = _augment(sys, gains_or_L)
    _lyapunov_checks(rep, aug, cert, margin, semidefinite=False, vstar=vstar)
    return rep


def extract_gains(cert: LmiCertificate, dims: dict, near=None, tol: float = 1e-8) -> ObserverGains:
    """Solve ``P^T L_hat = K H`` for the gains.

    When ``P^T`` has a nontrivial kernel the solution is not unique; the one
    closest to ``near`` (an ``L_hat``) is returned, else the minimum-norm one.
    """
    n, l = dims["n"], dims["l"]
    P, K = cert.P, cert.K
    nk = P.shape[1]
    H = np.zeros((nk, nk))
    H[n:, n:] = np.eye(nk - n)
    KH = K @ H
    Pt = P.T
    base = np.zeros_like(P) if near is None else np.asarray(near, float)
    L = base + np.linalg.pinv(Pt) @ (KH - Pt @ base)
    res = float(np.linalg.norm(Pt @ L - KH, 2)) if KH.size else 0.0
    if res > tol * max(1.0, float(np.linalg.norm(KH, 2)) if KH.size else 1.0):
        raise GainExtractionError(f"K H is not in the image of P^T (residual {res:.3e})")
    L[:, :n] = 0.0
    return gains_from_L(L, n, l)


def compute_GL_GM(sys: DaeSystem, gains: ObserverGains):
    """Static gains from the nonlinear channels to the state error on the
    algebraic part of the augmented pencil."""
    aug = build_augmented(sys, gains)
    t = qwf_transform(aug.pencil)
    n, l, r = aug.n, aug.l, t.r
    T = -t.W[:n] @ t.M[r:]
    G_L = T[:, :l] @ sys.B_L
    G_M = T[:, :l] @ sys.B_M
    return G_L, G_M


def _kernel_inclusion(sys: DaeSystem) -> bool:
    """Whether ``ker J`` lies in ``ker F``, so that ``F = (F J^+) J``."""
    kerJ = ss.kernel(sys.J, 1e-10, ref=1.0)
    if not kerJ.dim or not sys.F.size:
        return True
    return float(np.linalg.norm(sys.F @ kerJ.basis, 2)) <= 1e-9 * _scale(sys.F)


def _thm2_gains(rep: CertificateReport, sys: DaeSystem, gains: ObserverGains, pencil_ok: bool):
    d = sys.dims
    qL, qM = d["q_L"], d["q_M"]
    if not pencil_ok:
        for name in ("lipschitz_gain", "monotone_gain"):
            rep.add(name, INDET, None, "requires a regular index-one pencil")
        if qL and qM and not _kernel_inclusion(sys):
            rep.add("mixed_gain", FAIL, None, "ker J is not contained in ker F, no alpha exists")
        else:
            rep.add("mixed_gain", INDET if qL and qM else ABSENT, None,
                    "requires a regular index-one pencil")
        return
    G_L, G_M = compute_GL_GM(sys, gains)
    rep.info["G_L"] = G_L
    rep.info["G_M"] = G_M
    F, J, Th, mu = sys.F, sys.J, sys.Theta, sys.mu

    nFG = float(np.linalg.norm(F @ G_L, 2)) if (F @ G_L).size else 0.0
    if qL == 0:
        rep.add("lipschitz_gain", ABSENT, None, "no Lipschitz channel")
    else:
        rep.add("lipschitz_gain", PASS if nFG < 1 else FAIL, 1 - nFG,
                f"||F G_L|| = {nFG:.6g}", nFG)

    Gam = Tt = None
    if qM == 0:
        rep.add("monotone_gain", ABSENT, None, "no monotone channel")
    else:
        JG = J @ G_M
        c = np.linalg.cond(JG)
        if not np.isfinite(c) or c > COND_LIMIT:
            rep.add("monotone_gain", FAIL, None, f"J G_M is singular (cond {c:.3g})")
        else:
            Tt = Th @ np.linalg.inv(JG)
            Gam = Tt + Tt.T
            lmax = float(np.linalg.eigvalsh(Gam).max())
            rep.info["Theta_tilde"] = Tt
            rep.info["Gamma"] = Gam
            rep.info["Gamma_max_eig"] = lmax
            rep.add("monotone_gain", PASS if mu > lmax else FAIL, mu - lmax,
                    f"mu = {mu:.6g}, max eig Gamma = {lmax:.6g}", lmax)

    if qL == 0 or qM == 0:
        rep.add("mixed_gain", ABSENT, None, "only one nonlinear channel")
        return
    if Gam is None:
        rep.add("mixed_gain", FAIL, None, "requires an invertible J G_M")
        return
    if not _kernel_inclusion(sys):
        rep.add("mixed_gain", FAIL, None, "ker J is not contained in ker F, no alpha exists")
        return
    alpha = float(np.linalg.norm(F @ np.linalg.pinv(J), 2)) if F.size else 0.0
    lmax = float(np.linalg.eigvalsh(Gam).max())
    GmI = Gam - mu * np.eye(qM)
    S = Tt.T @ np.linalg.solve(GmI, Tt)
    lS = float(np.linalg.eigvalsh(0.5 * (S + S.T)).max())
    bracket = (np.sqrt(max(0.0, lS) / (mu - lmax))
               + float(np.linalg.norm(np.linalg.solve(GmI, Tt.T - mu * np.eye(qM)), 2)))
    JGL = float(np.linalg.norm(J @ G_L, 2))
    val = alpha * JGL / (1.0 - nFG) * bracket if nFG < 1 else float("inf")
    rep.info["alpha"] = alpha
    rep.info["mixed_gain_value"] = val
    rep.add("mixed_gain", PASS if val < 1 else FAIL, 1 - val, f"value = {val:.12g}", val)


def check_thm2(sys: DaeSystem, gains: ObserverGains, cert: LmiCertificate,
               margin: float | None = None) -> CertificateReport:
    """State-estimator certificate through the regular index-one augmented
    pencil, with semidefinite positivity and small-gain conditions."""
    rep = CertificateReport("2")
    d = sys.dims
    k_req = d["l"] + d["p"] - d["n"]
    if gains.k != k_req:
        rep.add("innovation_dim", FAIL, None, f"k = {gains.k}, required k = l + p - n = {k_req}")
    else:
        rep.add("innovation_dim", PASS, None, f"k = {k_req}")
    P = cert.P
    c = np.linalg.cond(P) if P.shape[0] == P.shape[1] and P.size else np.inf
    if P.size == 0:
        c = 1.0
    rep.add("P_invertible", PASS if c < COND_LIMIT else FAIL, None, f"cond P = {c:.3g}")
    aug = build_augmented(sys, gains)
    _lyapunov_checks(rep, aug, cert, margin, semidefinite=True, vstar=None)
    try:
        ok = is_regular(aug.pencil)
        detail = "not regular"
        if ok:
            idx = wong_limits(aug.pencil).l_star
            rep.info["index"] = idx
            ok = idx <= 1
            detail = f"index {idx}"
            if ok:
                qwf_transform(aug.pencil)
    except PencilError as exc:
        ok, detail = False, str(exc)
    if not aug.pencil.is_square:
        detail = f"pencil is {aug.calE.shape[0]}x{aug.calE.shape[1]}, not square"
    rep.add("regular_index_le_1", PASS if ok else FAIL, None, detail)
    _thm2_gains(rep, sys, gains, ok)
    return rep


def check_algebraic_case(sys: DaeSystem, gains_or_L, cert: LmiCertificate,
                         margin: float | None = None) -> CertificateReport:
    """Dissipation test for purely algebraic systems (``E = 0``), where the
    error is a static function of the nonlinearity mismatch."""
    if np.any(sys.E != 0):
        raise ValueError("the algebraic reduction requires E = 0")
    aug = _augment(sys, gains_or_L)
    A = aug.calA
    if A.shape[0] != A.shape[1] or np.linalg.cond(A) > COND_LIMIT:
        raise ValueError("the augmented matrix calA is singular or not square")
    X = np.linalg.solve(A, aug.calB)
    FX = aug.calF @ X
    R = (cert.delta * (FX.T @ FX - aug.Lambda_qL) - X.T @ aug.Theta_hat
         - aug.Theta_hat.T @ X - aug.mu * X.T @ aug.calJ @ X)
    rep = CertificateReport("algebraic")
    eps = MARGIN_REL * _scale(R) if margin is None else margin
    if R.size == 0:
        rep.add("reduced_dissipation", PASS, None, "no nonlinearity: vacuous")
        return rep
    lam = float(_sym_eigs(R).max())
    st = PASS if lam < -eps else (FAIL if lam > eps else INDET)
    rep.add("reduced_dissipation", st, -lam - eps, f"max eig = {lam:.6e}", lam)
    return rep


@dataclass(frozen=True)
class SamplingPlan:
    """Sampling box half-width, sample count, seed and optional growth constant
    ``c`` of ``omega(s) = c (1 + s)``."""

    box: float = 3.0
    n_samples: int = 200
    seed: int = 0
    omega_c: float | None = None
    bounded_domains: bool = False


def check_thm3(sys: DaeSystem, gains: ObserverGains, cert: LmiCertificate,
               plan: SamplingPlan = SamplingPlan(), margin: float | None = None) -> CertificateReport:
    """Asymptotic-observer conditions: the state-estimator certificate plus
    solvability of the algebraic part, checked on samples."""
    base = check_thm2(sys, gains, cert, margin)
    rep = CertificateReport("3", list(base.conditions), dict(base.subspaces), dict(base.info))
    if plan.bounded_domains:
        rep.add("unbounded_domains", INDET, None,
                "requires state, input and output domains to be whole spaces")
    if not base.passed:
        rep.add("x2_jacobian_invertible", INDET, None, "state-estimator conditions failed")
        return rep
    red = ReducedObserver(sys, gains)
    rng = np.random.default_rng(plan.seed)
    d = sys.dims
    n_sing = n_div = n_ok = 0
    worst_cond = 1.0
    ratios, x2n = [], []
    for _ in range(plan.n_samples):
        x1 = rng.uniform(-plan.box, plan.box, red.r)
        u = rng.uniform(-plan.box, plan.box, d["m"])
        y = rng.uniform(-plan.box, plan.box, d["p"])
        try:
            x2 = red.solve_x2(x1, u, y).x
        except (NewtonError, ArithmeticError, ValueError):
            n_div += 1
            continue
        Jx2, Jr = red.jacobians(x1, x2, u, y)
        cnd = np.linalg.cond(Jx2) if Jx2.size else 1.0
        worst_cond = max(worst_cond, cnd)
        if not np.isfinite(cnd) or cnd > COND_LIMIT:
            n_sing += 1
            continue
        n_ok += 1
        inv = np.linalg.norm(np.linalg.inv(Jx2), 2) if Jx2.size else 0.0
        ratios.append(inv * (np.linalg.norm(Jr, 2) if Jr.size else 0.0))
        x2n.append(float(np.linalg.norm(x2)))
    detail = f"{n_ok} roots, {n_sing} singular, {n_div} Newton failures; worst cond {worst_cond:.3g}"
    st = FAIL if n_sing else (INDET if n_div else SAMPLED)
    rep.add("x2_jacobian_invertible", st, None, detail)

    if ratios:
        ratios, x2n = np.array(ratios), np.array(x2n)
        c_hat = float(np.max(ratios / (1.0 + x2n)))
        rep.info["omega_c_estimate"] = c_hat
        if plan.omega_c is None:
            rep.add("growth_bound", SAMPLED, None,
                    f"omega(s) = c (1 + s) with sampled c = {c_hat:.6g}", c_hat)
        else:
            ok = c_hat <= plan.omega_c
            rep.add("growth_bound", SAMPLED if ok else FAIL, plan.omega_c - c_hat,
                    f"sampled c = {c_hat:.6g} vs omega c = {plan.omega_c:.6g}", c_hat)
    else:
        rep.add("growth_bound", INDET, None, "no sampled roots")
    rep.add("zero_set_connected", ASSUMED, None, "not numerically decidable")
    bad = sys.f_M.functions_used() & NON_LIPSCHITZ
    if bad:
        rep.add("fM_locally_lipschitz", INDET, None,
                f"f_M uses {', '.join(sorted(bad))}; local Lipschitz continuity not automatic")
    else:
        rep.add("fM_locally_lipschitz", PASS, None, "built from smooth primitives")
    return rep
