"""Command-line pipeline: analyze, verify, synthesize, simulate.

Exit codes: 0 pass or success, 1 a condition failed, 2 input error,
3 solver indeterminate.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import subspace as ss
from .expr import ExprError
from .lmi import FEASIBLE, assemble, iterate_gain_search
from .model import ModelError, ObserverGains, build_augmented, embed_gains, necessary_rank_check
from .pencil import MatrixPencil, PencilError, is_regular, wong_limits
from .synth import (FAIL, INDET, PASS, check_thm1, check_thm2, check_thm3,
                    error_subspaces)
from .sim import (SimulationError, check_trajectory_subspace, estimate_decay, input_function,
                  simulate_coupled)
from .sysfile import SystemFile, SystemFileError

log = logging.getLogger("daeobs")

EXIT_OK, EXIT_FAIL, EXIT_INPUT, EXIT_INDET = 0, 1, 2, 3
_EXIT = {PASS: EXIT_OK, FAIL: EXIT_FAIL, INDET: EXIT_INDET}


class InputError(ValueError):
    """Bad command-line arguments or system file."""


def _floats(text: str, name: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise InputError(f"{name}: expected comma-separated numbers, got {text!r}") from exc
    if not all(np.isfinite(vals)):
        raise InputError(f"{name}: values must be finite")
    return vals


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(_jsonable(obj), indent=2) + "\n", encoding="utf-8")


def _random_gains(dims: dict, k: int, seed: int) -> ObserverGains:
    rng = np.random.default_rng(seed)
    return ObserverGains(rng.standard_normal((dims["l"], k)), rng.standard_normal((dims["p"], k)))


def _pencil_summary(pencil) -> dict:
    out = {"shape": list(pencil.shape), "square": pencil.is_square}
    try:
        out["regular"] = bool(is_regular(pencil))
        w = wong_limits(pencil)
        out["index"] = int(w.l_star) if out["regular"] else None
    except PencilError as exc:
        out["regular"], out["index"], out["error"] = False, None, str(exc)
    return out


def cmd_analyze(args) -> int:
    sf = SystemFile.load(args.file)
    sys_ = sf.system()
    d = sys_.dims
    w = wong_limits(MatrixPencil(sys_.E, sys_.A))
    rc = necessary_rank_check(sys_)
    rep = {
        "dims": d,
        "rank_E": ss.rank(sys_.E, 1e-9, ref=max(1.0, float(np.linalg.norm(sys_.E, 2)))),
        "wong": {"Vstar_dim": w.Vstar.dim, "Wstar_dim": w.Wstar.dim,
                 "k_star": w.k_star, "l_star": w.l_star,
                 "Vstar_basis": w.Vstar.basis, "Wstar_basis": w.Wstar.basis},
        "rational_rank": rc.rational_rank,
        "rank_condition_holds": rc.holds,
        "n_le_l_plus_p": rc.n_le_l_plus_p,
        "candidates": {},
    }
    gains = sf.gains()
    if gains is not None:
        rep["candidates"][f"file gains (k = {gains.k})"] = _pencil_summary(
            build_augmented(sys_, gains).pencil)
    k_sq = d["l"] + d["p"] - d["n"]
    if k_sq >= 0:
        g = _random_gains(d, k_sq, args.seed)
        rep["candidates"][f"generic gains (k = {k_sq})"] = _pencil_summary(
            build_augmented(sys_, g).pencil)

    print(f"system: l = {d['l']}, n = {d['n']}, p = {d['p']}, m = {d['m']}, "
          f"q_L = {d['q_L']}, q_M = {d['q_M']}")
    print(f"rank E = {rep['rank_E']}")
    print(f"Wong limits of (E, A): dim V* = {w.Vstar.dim} (k* = {w.k_star}), "
          f"dim W* = {w.Wstar.dim} (l* = {w.l_star})")
    print(f"rational rank of [sE - A; C] = {rc.rational_rank} "
          f"({'equals' if rc.holds else 'differs from'} n = {d['n']})")
    print(f"n <= l + p: {'holds' if rc.n_le_l_plus_p else 'fails'}")
    for name, c in rep["candidates"].items():
        idx = "-" if c.get("index") is None else c["index"]
        print(f"augmented pencil, {name}: {c['shape'][0]}x{c['shape'][1]}, "
              f"regular = {c['regular']}, index = {idx}")
    if args.json:
        _write_json(args.json, rep)
    return EXIT_OK if rc.holds else EXIT_FAIL


def _run_verify(sf: SystemFile, theorem: int, delta, margin, gains=None, cert=None):
    sys_ = sf.system()
    gains = gains if gains is not None else sf.gains()
    if gains is None:
        gains = ObserverGains.none(sys_)
    cert = cert if cert is not None else sf.certificate(delta)
    if cert is None:
        raise InputError("the system file has no certificate (P, K); run synthesize first")
    if theorem == 1:
        return check_thm1(sys_, gains, cert, margin=margin)
    if theorem == 2:
        return check_thm2(sys_, gains, cert, margin=margin)
    return check_thm3(sys_, gains, cert, sf.sampling(), margin=margin)


def cmd_verify(args) -> int:
    sf = SystemFile.load(args.file)
    rep = _run_verify(sf, args.theorem, args.delta, args.margin)
    print(rep.to_text())
    if args.out:
        Path(args.out).write_text(rep.to_json() + "\n", encoding="utf-8")
    return _EXIT[rep.status]


def cmd_synthesize(args) -> int:
    sf = SystemFile.load(args.file)
    sys_ = sf.system()
    d = sys_.dims
    opts = sf.solver()
    seed = args.seed if args.seed is not None else opts.get("seed", 42)
    max_iters = args.max_iters if args.max_iters is not None else opts.get("max_iters", 5000)
    rounds = args.rounds if args.rounds is not None else opts.get("rounds", 5)
    eps = opts.get("eps", 1e-6)
    if args.k < 0:
        raise InputError("--k must be non-negative")

    gains = sf.gains()
    L0, theta0 = None, None
    if gains is not None and gains.k == args.k:
        L0 = embed_gains(gains, d["n"])
        cert = sf.certificate()
        if cert is not None:
            prob = assemble(sys_, L0, args.k, args.mode, eps)
            theta0 = prob.pack(cert.P, cert.K, cert.delta)
            log.info("warm start from the file's certificate")
    res = iterate_gain_search(sys_, args.k, L0, rounds=rounds, mode=args.mode, eps=eps,
                              max_iters=max_iters, seed=seed, theta0=theta0, jobs=args.jobs)
    trace_path = args.trace or str(Path(args.out).with_suffix("")) + ".residuals.csv"
    if res.status != FEASIBLE:
        with open(trace_path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["step", "residual"])
            for i, r in enumerate(res.residuals):
                wr.writerow([i, f"{r:.17g}"])
        print(f"synthesis indeterminate after {res.rounds} solves: {res.detail}")
        print(f"residual trace written to {trace_path}")
        return EXIT_INDET

    # soundness gate: the written file must pass the same checks verify runs
    out = sf.with_solution(res.gains, res.cert)
    theorem = 1 if args.mode == "thm1" else 2
    rep = _run_verify(out, theorem, None, None)
    if not rep.passed:
        print(rep.to_text())
        print("synthesized certificate did not re-verify; nothing written")
        return EXIT_INDET
    out.save(args.out)
    print(rep.to_text())
    print(f"gains and certificate written to {args.out} (delta = {res.cert.delta:.6g})")
    return EXIT_OK


def cmd_simulate(args) -> int:
    sf = SystemFile.load(args.file)
    sys_ = sf.system()
    defaults = sf.simulation()
    gains = sf.gains()
    if gains is None:
        raise InputError("simulation needs observer gains in the system file")
    t_span = _floats(args.t_span, "--t-span") if args.t_span else defaults.get("t_span")
    dt = args.dt if args.dt is not None else defaults.get("dt")
    x0 = _floats(args.x0, "--x0") if args.x0 else defaults.get("x0")
    z0 = _floats(args.z0, "--z0") if args.z0 else defaults.get("z0", x0)
    if t_span is None or dt is None or x0 is None:
        raise InputError("--t-span, --dt and --x0 are required (no defaults in the file)")
    if len(t_span) != 2:
        raise InputError("--t-span takes two values a,b")
    if not dt > 0:
        raise InputError("--dt must be positive")
    u = input_function(sf.inputs()) if sf.inputs() else None
    try:
        tr = simulate_coupled(sys_, gains, u, x0, z0, t_span, dt)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    aug = build_augmented(sys_, gains)
    V, _ = error_subspaces(aug)
    conf = check_trajectory_subspace(tr, V, sys_)
    fit = estimate_decay(tr)
    if args.out:
        tr.to_csv(args.out)
    en = tr.err_norm
    print(f"||e(0)|| = {en[0]:.6e}")
    print(f"||e(T)|| = {en[-1]:.6e}  (T = {tr.t[-1]:g})")
    print(f"beta_est = {fit.beta:.6g}  (fit residual {fit.residual:.3g})")
    print(f"confinement distance = {conf:.3e}")
    print(f"max algebraic residual = {float(tr.g_residual.max()):.3e}")
    for k, v in tr.info.items():
        print(f"{k} = {v:.3e}")
    if args.out:
        print(f"trace written to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="daeobs", description="Observer design and certification for nonlinear DAEs",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="pencil analysis and necessary conditions")
    p.add_argument("file", help="system file or builtin name (ex1, ex2, ex3, ...)")
    p.add_argument("--json", help="write the report as JSON")
    p.add_argument("--seed", type=int, default=42, help="seed for generic candidate gains")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("verify", help="check a certificate")
    p.add_argument("file")
    p.add_argument("--theorem", type=int, choices=(1, 2, 3), default=1,
                   help="1: strict positivity, 2: index-one pencil with small-gain "
                        "conditions, 3: asymptotic observer")
    p.add_argument("--delta", type=float, help="override the file's delta")
    p.add_argument("--margin", type=float, help="absolute margin for the definiteness tests")
    p.add_argument("--out", help="write the report as JSON")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("synthesize", help="search gains and certificate")
    p.add_argument("file")
    p.add_argument("--k", type=int, required=True, help="number of innovations")
    p.add_argument("--mode", choices=("thm1", "thm2"), default="thm1")
    p.add_argument("--seed", type=int, default=None, help="random seed (file or 42)")
    p.add_argument("--max-iters", type=int, default=None, help="iterations per solve")
    p.add_argument("--rounds", type=int, default=None, help="gain update rounds")
    p.add_argument("--jobs", type=int, default=1, help="parallel cold starts")
    p.add_argument("--out", required=True, help="output system file")
    p.add_argument("--trace", help="residual trace CSV on failure")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("simulate", help="simulate plant and observer")
    p.add_argument("file")
    p.add_argument("--t-span", help="a,b")
    p.add_argument("--dt", type=float)
    p.add_argument("--x0", help="plant initial state, comma separated")
    p.add_argument("--z0", help="observer initial state guess, comma separated")
    p.add_argument("--out", help="trace CSV")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (InputError, SystemFileError, ModelError, ExprError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SimulationError as exc:
        print(f"simulation failed: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
