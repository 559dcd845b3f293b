"""Acceptance criteria, one test each; every test prints a PASS/FAIL line."""

import time

import numpy as np
import pytest
from conftest import load, random_lmi_instance

from daeobs import subspace as ss
from daeobs.expr import VectorFunction
from daeobs.lmi import assemble, solve_feasibility
from daeobs.model import DaeSystem, build_augmented, embed_gains
from daeobs.pencil import MatrixPencil, qwf_transform, wong_limits
from daeobs.sim import check_trajectory_subspace, estimate_decay, simulate_coupled, simulate_plant
from daeobs.synth import check_thm1, check_thm2, compute_GL_GM, error_subspaces
from daeobs.sysfile import SystemFile

LYAPUNOV = ("symmetry", "dissipation_on_V", "positivity_on_Vbar", "gain_consistency")


def coupled_run(name):
    sf = SystemFile.load(name)
    s, g, sm = sf.system(), sf.gains(), sf.simulation()
    t0 = time.perf_counter()
    tr = simulate_coupled(s, g, None, sm["x0"], sm["z0"], sm["t_span"], sm["dt"])
    return s, g, tr, time.perf_counter() - t0


@pytest.fixture(scope="module")
def rlc_run():
    return coupled_run("ex3")


@pytest.fixture(scope="module")
def ex2_run():
    return coupled_run("ex2")


def test_criterion_1_descriptor_certificate(criterion):
    t0 = time.perf_counter()
    s, g, c = load("ex1")
    rep = check_thm1(s, g, c)
    elapsed = time.perf_counter() - t0
    lam_q = rep.condition("dissipation_on_V").value
    lam_p = rep.condition("positivity_on_Vbar").value
    q_full = rep.info["Q_full_max_eig"]
    criterion(1, "descriptor example certificate", [
        ("check passes", rep.passed, rep.status),
        ("max eig S^T Q S < 0", lam_q < 0, f"{lam_q:.6e}"),
        ("min eig Sbar^T E^T P Sbar > 0", lam_p > 0, f"{lam_p:.6e}"),
        ("Q indefinite on the full space", q_full >= 0, f"max eig Q = {q_full:.6e}"),
        ("runtime < 1 s", elapsed < 1.0, f"{elapsed:.3f} s"),
    ])


def test_criterion_2_error_limit_subspace(criterion):
    s, g, _ = load("ex1")
    V, _ = error_subspaces(build_augmented(s, g))
    ref = ss.image(np.array([[1.0, 0, 0], [0, 1, 0], [5, -4, 0], [-11, 9, 0], [0, 0, 1],
                             [-2, 2, 0]]))
    dist = ss.projector_distance(V, ref)
    criterion(2, "Wong limit of the error pencil", [
        ("dimension 3", V.dim == 3, f"dim {V.dim}"),
        ("projector distance <= 1e-8", dist <= 1e-8, f"{dist:.3e}"),
    ])


def test_criterion_3_small_gain_pipeline(criterion):
    t0 = time.perf_counter()
    s, g, c = load("ex2")
    aug = build_augmented(s, g)
    idx = wong_limits(aug.pencil).l_star
    G_L, G_M = compute_GL_GM(s, g)
    rep2 = check_thm2(s, g, c)
    rep1 = check_thm1(s, g, c)
    elapsed = time.perf_counter() - t0
    eL = float(np.abs(G_L - np.array([[1 / 15], [1 / 15]])).max())
    eM = float(np.abs(G_M + np.array([[1 / 15], [1 / 15]])).max())
    gam = rep2.info["Gamma_max_eig"]
    val = rep2.info["mixed_gain_value"]
    pos1 = rep1.condition("positivity_on_Vbar").status
    criterion(3, "small-gain pipeline", [
        ("pencil index 1", idx == 1, f"index {idx}"),
        ("G_L = (1/15, 1/15)", eL <= 1e-10, f"error {eL:.2e}"),
        ("G_M = -(1/15, 1/15)", eM <= 1e-10, f"error {eM:.2e}"),
        ("max eig Gamma = -15", abs(gam + 15) <= 1e-9, f"{gam:.12g}"),
        ("mixed gain value = 19/221", abs(val - 19 / 221) <= 1e-12, f"{val:.15g}"),
        ("small-gain certificate passes", rep2.passed, rep2.status),
        ("strict certificate fails positivity", pos1 == "fail" and not rep1.passed, pos1),
        ("runtime < 1 s", elapsed < 1.0, f"{elapsed:.3f} s"),
    ])


def test_criterion_4_rank_deficient_counterexample(criterion):
    s, g, c = load("counterexample")
    _, Vbar = error_subspaces(build_augmented(s, g))
    ref = ss.image(np.array([[1.0, 0], [0, 1], [0, 1]]))
    dist = ss.projector_distance(Vbar, ref)
    cond = check_thm1(s, g, c).condition("positivity_on_Vbar")
    criterion(4, "projected limit with rank-deficient E image", [
        ("projected limit", dist <= 1e-8, f"projector distance {dist:.2e}"),
        ("positivity fails", cond.status == "fail", cond.status),
        ("reason reported", "rank-deficient" in cond.detail, cond.detail),
    ])


def test_criterion_5_rlc_circuit(criterion, rlc_run):
    t0 = time.perf_counter()
    copy_rep = check_thm1(*load("ex3_copy"))
    rep = check_thm2(*load("ex3"))
    s, g, tr, sim_time = rlc_run
    elapsed = time.perf_counter() - t0 + sim_time
    e = tr.err_norm
    fit = estimate_decay(tr)
    criterion(5, "RLC circuit certificates and coupled run", [
        ("system copy certificate", copy_rep.passed, copy_rep.status),
        ("small-gain certificate", rep.passed, rep.status),
        ("horizon [0, 20] at dt 1e-3", tr.t[-1] == 20.0 and len(tr.t) == 20001, f"{len(tr.t)} points"),
        ("|e(20)| <= 1e-3 |e(0)|", e[-1] <= 1e-3 * e[0], f"ratio {e[-1] / e[0]:.3e}"),
        ("beta_est > 0", fit.beta > 0, f"{fit.beta:.4g}"),
        ("runtime < 30 s", elapsed < 30.0, f"{elapsed:.2f} s"),
    ])


def test_criterion_6_confinement(criterion, rlc_run, ex2_run):
    checks = []
    for name, (s, g, tr, _) in (("ex2", ex2_run), ("ex3", rlc_run)):
        V, _ = error_subspaces(build_augmented(s, g))
        dist = check_trajectory_subspace(tr, V, s)
        checks.append((f"{name} sup distance <= 1e-6", dist <= 1e-6, f"{dist:.3e}"))
    criterion(6, "trajectories stay in the limit subspace", checks)


def test_criterion_7_lmi_engine_soundness(criterion):
    n_feasible = violations = 0
    for seed in range(100):
        s, g = random_lmi_instance(seed)
        mode = "thm1" if seed % 2 else "thm2"
        prob = assemble(s, embed_gains(g, s.dims["n"]), 1, mode)
        res = solve_feasibility(prob, max_iters=300, seed=seed)
        if not res.feasible:
            continue
        n_feasible += 1
        rep = (check_thm1 if mode == "thm1" else check_thm2)(s, g, prob.certificate(res.theta))
        violations += sum(c.status != "pass" for c in rep.conditions if c.name in LYAPUNOV)
    checks = [("re-verification of feasible verdicts", violations == 0,
               f"{n_feasible} feasible of 100, {violations} violations")]
    for name, mode in (("ex1", "thm1"), ("ex2", "thm2"), ("ex3", "thm2"), ("ex3_copy", "thm1")):
        s, g, c = load(name)
        prob = assemble(s, embed_gains(g, s.dims["n"]), g.k, mode)
        res = solve_feasibility(prob, theta0=prob.pack(c.P, c.K, c.delta))
        checks.append((f"warm start {name}", res.feasible and res.iterations <= 5,
                       f"{res.status} in {res.iterations} iterations"))
    criterion(7, "LMI engine soundness", checks)


FUNCS = ("sin", "cos", "tanh")


def random_expression(rng, depth):
    if depth == 0 or rng.random() < 0.2:
        if rng.random() < 0.7:
            return f"x{int(rng.integers(1, 4))}"
        return f"{rng.uniform(-2, 2):.3f}"
    kind = int(rng.integers(0, 7))
    a = random_expression(rng, depth - 1)
    if kind == 0:
        return f"{FUNCS[int(rng.integers(0, 3))]}({a})"
    if kind == 1:
        return f"exp(tanh({a}))"
    if kind == 2:
        return f"({a})^{int(rng.integers(2, 4))}"
    if kind == 3:
        return f"-({a})"
    b = random_expression(rng, depth - 1)
    if kind == 4:
        return f"({a}) / (1 + ({b})^2)"
    return f"({a}) {'+-*'[kind - 4]} ({b})"


def regular_index1(rng, n, r):
    E0 = np.zeros((n, n))
    E0[:r, :r] = np.eye(r)
    A0 = np.eye(n)
    A0[:r, :r] = rng.standard_normal((r, r))
    S = rng.standard_normal((n, n)) + n * np.eye(n)
    T = rng.standard_normal((n, n)) + n * np.eye(n)
    return S @ E0 @ T, S @ A0 @ T


def test_criterion_8_property_suites(criterion):
    rng = np.random.default_rng(2024)
    checks = []

    bad = 0
    for _ in range(500):
        m, n = rng.integers(1, 8, size=2)
        r = int(rng.integers(0, min(m, n) + 1))
        M = rng.standard_normal((m, r)) @ rng.standard_normal((r, n))
        K = ss.kernel(M)
        leak = np.linalg.norm(M @ K.basis) if K.dim else 0.0
        bad += ss.rank(M) + K.dim != n or leak > 1e-9 * max(1.0, np.linalg.norm(M))
    checks.append(("rank-nullity on 500 matrices", bad == 0, f"{bad} violations"))

    bad = 0
    for _ in range(200):
        l, n = (int(v) for v in rng.integers(1, 7, size=2))
        E = rng.standard_normal((l, n)) * rng.integers(0, 2, n)
        w = wong_limits(MatrixPencil(E, rng.standard_normal((l, n))))
        nested = all(ss.equals(ss.sum(a, b), a) for a, b in zip(w.V_chain, w.V_chain[1:]))
        nested &= all(ss.equals(ss.sum(a, b), b) for a, b in zip(w.W_chain, w.W_chain[1:]))
        steps_ok = len(w.V_chain) <= n + 2 and len(w.W_chain) <= n + 2
        bad += not (nested and steps_ok and w.k_star <= n + 1 and w.l_star <= n + 1)
    checks.append(("Wong nestedness and termination on 200 pencils", bad == 0, f"{bad} violations"))

    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 7))
        r = int(rng.integers(0, n + 1))
        E, A = regular_index1(rng, n, r)
        t = qwf_transform(MatrixPencil(E, A))
        Minv, Ninv = np.linalg.inv(t.M), np.linalg.inv(t.N)
        E_rec = Minv @ np.diag([1.0] * t.r + [0.0] * (n - t.r)) @ Ninv
        A_rec = Minv @ np.block([[t.A_r, np.zeros((t.r, n - t.r))],
                                 [np.zeros((n - t.r, t.r)), np.eye(n - t.r)]]) @ Ninv
        err = max(np.linalg.norm(E_rec - E) / max(1, np.linalg.norm(E)),
                  np.linalg.norm(A_rec - A) / max(1, np.linalg.norm(A)))
        worst = max(worst, err if t.r == r else np.inf)
    checks.append(("QWF round trip on 100 index-1 pencils", worst <= 1e-8, f"worst {worst:.2e}"))

    worst = 0.0
    h = 1e-5
    for _ in range(200):
        f = VectorFunction([random_expression(rng, 4)], {"x": 3})
        x = rng.uniform(-1.5, 1.5, 3)
        J = f.jacobian("x", x=x)[0]
        fd = np.array([(f(x=x + h * e)[0] - f(x=x - h * e)[0]) / (2 * h) for e in np.eye(3)])
        worst = max(worst, float(np.max(np.abs(J - fd) / np.maximum(1.0, np.abs(fd)))))
    checks.append(("symbolic vs central differences on 200 expressions", worst <= 1e-6,
                   f"worst relative {worst:.2e}"))

    s = DaeSystem(E=[[1.0]], A=[[0.0]], C=[[1.0]], B_L=[[1.0]], f_L=["-x1^3"], F=[[3.0]])
    exact = 0.5 / np.sqrt(1 + 2 * 0.25 * 2.0)
    err = [abs(simulate_plant(s, None, [0.5], (0, 2), dt).x[-1, 0] - exact) for dt in (0.1, 0.05)]
    ratio = err[0] / err[1]
    checks.append(("RK4 error ratio on dt halving >= 8", ratio >= 8, f"ratio {ratio:.2f}"))
    criterion(8, "property suites", checks)
