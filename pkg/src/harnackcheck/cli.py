"""Command-line entry point: ``harnackcheck {verify,check-identity,sphere,quadratic,sample-point}``.

Exit codes: 0 success, 1 verification or numeric failure, 2 usage/parse/config error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import harnack
from .derivation import DependencyError, ScriptError, bundled, run_script
from .expr import TensorExprError
from .parser import DSLSyntaxError, parse

OK, FAIL, USAGE = 0, 1, 2


@dataclass
class RunConfig:
    command: str
    seed: int = 0
    trials: int = 100
    tol: float = 1e-10
    n: int = 4
    t_grid: str = ""
    fmt: str = "text"
    inputs: list[str] = field(default_factory=list)

    def validate(self) -> None:
        if not self.tol >= 0:
            raise ValueError("--tol must be nonnegative")
        if self.trials < 1:
            raise ValueError("--trials must be at least 1")
        if self.n < 2:
            raise ValueError("--dim must be at least 2")


class UsageError(Exception):
    pass


def _emit(obj, fmt: str, text: str, out) -> None:
    if fmt == "json":
        out.write(json.dumps(obj, sort_keys=True) + "\n")
    else:
        out.write(text if text.endswith("\n") else text + "\n")


def _resolve_script(name: str) -> Path:
    p = Path(name)
    if p.exists():
        return p
    cand = bundled(name if name.endswith(".drv") else name + ".drv")
    if cand.exists():
        return cand
    raise UsageError(f"script not found: {name}")


def cmd_verify(args, out) -> int:
    path = _resolve_script(args.script)
    try:
        report = run_script(path, numeric_trials=args.numeric)
    except (ScriptError, DependencyError) as exc:
        raise UsageError(str(exc)) from exc
    _emit(report.to_json(), args.format, report.to_text(), out)
    return OK if report.passed else FAIL


def cmd_check_identity(args, out) -> int:
    from .numeric import randomized_equal

    cfg = RunConfig("check-identity", args.seed, args.trials, args.tol, args.dim)
    cfg.validate()
    try:
        lhs, rhs = parse(args.lhs), parse(args.rhs)
        v = randomized_equal(lhs, rhs, args.model, trials=cfg.trials, tol=cfg.tol, n=cfg.n, seed=cfg.seed)
    except (DSLSyntaxError, TensorExprError) as exc:
        raise UsageError(str(exc)) from exc
    verdict = "PASS" if v.passed else "FAIL"
    text = (
        f"{verdict}  worst relative deviation {v.worst_deviation:.3e} at seed {v.worst_seed} "
        f"({v.trials} trials, model {v.family}, n={v.n}, tol {cfg.tol:g})"
    )
    _emit(v.to_json(), args.format, text, out)
    return OK if v.passed else FAIL


CSV_HEADER = ["t", "K", "z_min", "z_max", "traceZ", "mt_residual"]


def cmd_sphere(args, out) -> int:
    cfg = RunConfig("sphere", tol=args.tol, n=args.dim, t_grid=args.t_grid, fmt=args.format)
    cfg.validate()
    try:
        fam = harnack.SphereFamily(cfg.n, args.K0)
        ts = harnack.parse_t_grid(cfg.t_grid)
        for t in ts:
            if not (fam.contains(t - args.step) and fam.contains(t + args.step)):
                raise harnack.IntervalError(
                    f"t={t} with step {args.step} leaves the valid interval (0, {fam.blowup_time})"
                )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    rows = [harnack.sphere_row(fam, t, args.step) for t in ts]
    ok = all(
        r.z_min > 0 and r.mt_residual <= cfg.tol and r.traced_residual <= cfg.tol for r in rows
    )
    if cfg.fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in rows:
            w.writerow([repr(r.t), repr(r.K), repr(r.z_min), repr(r.z_max), repr(r.trace_z), repr(r.mt_residual)])
        out.write(buf.getvalue())
    elif cfg.fmt == "json":
        recs = [
            {
                "quantity": "sphere",
                "t": r.t,
                "K": r.K,
                "eigenvalues": list(r.z_eigenvalues),
                "traceZ": r.trace_z,
                "residuals": {"mt": r.mt_residual, "traced": r.traced_residual},
                "traced_supersolution": r.traced_supersolution,
            }
            for r in rows
        ]
        _emit({"n": cfg.n, "K0": args.K0, "h": args.step, "tol": cfg.tol, "passed": ok, "rows": recs}, "json", "", out)
    else:
        lines = [f"sphere n={cfg.n} K0={args.K0:g} h={args.step:g} tol={cfg.tol:g}"]
        for r in rows:
            lines.append(
                f"t={r.t:.6g} K={r.K:.6g} z=[{r.z_min:.6g}, {r.z_max:.6g}] traceZ={r.trace_z:.6g} "
                f"mt_residual={r.mt_residual:.3e} traced_residual={r.traced_residual:.3e}"
            )
        lines.append("PASS" if ok else "FAIL")
        out.write("\n".join(lines) + "\n")
    return OK if ok else FAIL


def _load_point(name: str) -> harnack.CurvaturePoint:
    p = Path(name)
    if not p.exists():
        cand = bundled(name if name.endswith(".json") else name + ".json")
        if not cand.exists():
            raise UsageError(f"point file not found: {name}")
        p = cand
    try:
        return harnack.CurvaturePoint.from_json(json.loads(p.read_text()))
    except (ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"{p}: invalid curvature point: {exc}") from exc


def _parse_W(spec: str | None, n: int) -> np.ndarray:
    if spec is None:
        W = np.zeros(n)
        W[0] = 1.0
        return W
    try:
        W = np.array([float(x) for x in spec.split(",")])
    except ValueError:
        raise UsageError(f"bad --W {spec!r}, expected comma separated numbers") from None
    if W.shape != (n,):
        raise UsageError(f"--W has {W.size} entries, point has dimension {n}")
    return W


def cmd_quadratic(args, out) -> int:
    pt = _load_point(args.point)
    W = _parse_W(args.W, pt.n)
    try:
        st = harnack.harnack_state(pt)
    except harnack.SingularCurvatureOperator as exc:
        print(f"error: {exc} (eigenvalue {exc.eigenvalue:.3e})", file=sys.stderr)
        return FAIL
    n = pt.n
    I = 0.5 * (np.einsum("ac,bd->abcd", np.eye(n), np.eye(n)) - np.einsum("ad,bc->abcd", np.eye(n), np.eye(n)))
    s_res = float(np.max(np.abs(np.einsum("abef,efcd->abcd", st.S, pt.Rm) - I)))
    U = harnack.minimizing_U(st, W)
    zval = harnack.harnack_quadratic(st, pt.Rm, U, W)
    brute, _ = harnack.linear_system_minimum(st, pt.Rm, W)
    wzw = float(W @ st.Z @ W)
    scale = max(1.0, abs(brute))
    match = abs(zval - brute) <= 1e-10 * scale and abs(wzw - brute) <= 1e-10 * scale
    eig = [float(x) for x in np.linalg.eigvalsh(st.Z)]
    obj = {
        "quantity": "harnack_quadratic",
        "W": W.tolist(),
        "S_residual": s_res,
        "U": U.tolist(),
        "value": zval,
        "WZW": wzw,
        "linear_system_minimum": brute,
        "minimizer_match": match,
        "eigenvalues": eig,
    }
    text = "\n".join(
        [
            f"S*Rm - I residual: {s_res:.3e}",
            "minimizing U:",
            *("  " + " ".join(f"{x: .6g}" for x in row) for row in U),
            f"Z(U*, W) = {zval:.12g}",
            f"W.Z.W    = {wzw:.12g}",
            f"linear-system minimum {brute:.12g}: {'PASS' if match else 'FAIL'}",
            "Z eigenvalues: " + " ".join(f"{x:.6g}" for x in eig),
        ]
    )
    _emit(obj, args.format, text, out)
    return OK if match else FAIL


def cmd_sample_point(args, out) -> int:
    from .numeric import random_point

    if args.dim < 2:
        raise UsageError("--dim must be at least 2")
    pt = random_point(args.dim, args.seed, args.t)
    out.write(json.dumps(pt.to_json(), sort_keys=True) + "\n")
    return OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="harnackcheck", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", help="replay a derivation script")
    p.add_argument("script", nargs="?", default="harnack_proof.drv",
                   help="path, or name of a bundled script (default: harnack_proof.drv)")
    p.add_argument("--numeric", type=int, default=0, metavar="TRIALS",
                   help="also cross-check each link on TRIALS random models")
    p.add_argument("--format", choices=["text", "json"], default="text")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("check-identity", help="randomized numeric equality of two expressions")
    p.add_argument("lhs")
    p.add_argument("rhs")
    p.add_argument("--model", choices=["plain", "bianchi1", "full", "frames"], default="full")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--dim", type=int, default=4)
    p.add_argument("--format", choices=["text", "json"], default="text")
    p.set_defaults(func=cmd_check_identity)

    p = sub.add_parser("sphere", help="shrinking-sphere closed-form checks")
    p.add_argument("--dim", type=int, default=3)
    p.add_argument("--K0", type=float, default=1.0)
    p.add_argument("--t-grid", default="0.02:0.2:10", help="a:b:k, k points from a to b")
    p.add_argument("--step", type=float, default=1e-4)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--format", choices=["text", "json", "csv"], default="text")
    p.set_defaults(func=cmd_sphere)

    p = sub.add_parser("quadratic", help="Harnack quadratic at a curvature point")
    p.add_argument("point", nargs="?", default="sphere_point.json",
                   help="CurvaturePoint JSON file or bundled name (default: sphere_point.json)")
    p.add_argument("--W", default=None, help="comma separated vector (default e1)")
    p.add_argument("--format", choices=["text", "json"], default="text")
    p.set_defaults(func=cmd_quadratic)

    p = sub.add_parser("sample-point", help="emit a random positive curvature point as JSON")
    p.add_argument("--dim", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--t", type=float, default=None)
    p.set_defaults(func=cmd_sample_point)
    return ap


def main(argv: list[str] | None = None, out=None) -> int:
    out = sys.stdout if out is None else out
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else OK
    try:
        return args.func(args, out)
    except (UsageError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE


if __name__ == "__main__":
    sys.exit(main())
