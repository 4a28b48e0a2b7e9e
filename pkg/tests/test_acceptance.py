"""Acceptance suite.  Each test records a one-line PASS/FAIL verdict; the
lines are printed at the end of the pytest run (see conftest.py) and also
when this file is executed directly with ``python tests/test_acceptance.py``."""
import io
import json
import time

import numpy as np

from harnackcheck import harnack
from harnackcheck.cli import OK, main
from harnackcheck.derivation import bundled, run_script
from harnackcheck.expr import TensorExpr
from harnackcheck.numeric import random_point, randomized_equal
from harnackcheck.parser import parse
from harnackcheck.rewrite import BASE_CATALOG

RESULTS: dict[int, str] = {}

SPHERE_K0 = 0.05
H = 1e-4


def record(k: int, ok: bool, detail: str) -> None:
    RESULTS[k] = f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}"
    assert ok, RESULTS[k]


def sphere_grid(n):
    fam = harnack.SphereFamily(n, SPHERE_K0)
    T = fam.blowup_time
    return fam, list(np.linspace(0.25 * T, 0.6 * T, 10))


def test_criterion_1_proof_replay():
    t0 = time.perf_counter()
    out = io.StringIO()
    code = main(["verify"], out)
    rep = run_script(bundled("harnack_proof.drv"))
    negs = [run_script(bundled(n)) for n in ("negative_ds6.drv", "negative_ds7.drv")]
    elapsed = time.perf_counter() - t0
    n_pass = sum(s.passed for s in rep.steps)
    neg_ok = all(not r.passed and r.steps[0].residual_count > 0 for r in negs)
    ok = code == OK and n_pass == 12 and len(rep.steps) == 12 and neg_ok and elapsed < 60
    record(1, ok, f"{n_pass}/12 steps, negatives fail with residuals: {neg_ok}, {elapsed:.1f}s")


def test_criterion_2_rule_soundness():
    failures = []
    count = 0
    for name, rule in sorted(BASE_CATALOG.items()):
        if rule.axiom:
            continue
        for tpl in rule.templates:
            for n in (3, 4, 5):
                v = randomized_equal(TensorExpr((tpl.pattern,)), tpl.replacement, rule.model, trials=100, tol=1e-10, n=n)
                count += 1
                if not v.passed:
                    failures.append(f"{name} n={n}")
    negatives = [
        ("R[a,b,c,d]", "R[a,c,b,d] - R[a,d,b,c]"),
        ("2*S[d,e,k,l]*R[d,i,e,j]*P[i,j,a]", "P[k,l,a]"),
    ]
    neg_ok = all(not randomized_equal(parse(a), parse(b), "plain", trials=20).passed for a, b in negatives)
    ok = not failures and neg_ok
    record(2, ok, f"{count} rule/dimension checks, failures {failures or 'none'}, negative controls fail: {neg_ok}")


def test_criterion_3_minimizer():
    worst = 0.0
    for seed in range(100):
        n = 3 + seed % 3
        pt = random_point(n, seed)
        st = harnack.harnack_state(pt)
        W = np.random.default_rng(seed).standard_normal(n)
        val = harnack.harnack_quadratic(st, pt.Rm, harnack.minimizing_U(st, W), W)
        oracle, _ = harnack.linear_system_minimum(st, pt.Rm, W)
        scale = max(1.0, abs(oracle))
        worst = max(worst, abs(val - oracle) / scale, abs(W @ st.Z @ W - oracle) / scale)
    record(3, worst <= 1e-10, f"worst relative gap {worst:.2e} over 100 models")


def test_criterion_4_sphere_closed_forms():
    pt = harnack.CurvaturePoint.from_json(json.loads(bundled("sphere_point.json").read_text()))
    st = harnack.harnack_state(pt)
    d = np.eye(3)
    dd = np.einsum("ac,bd->abcd", d, d) - np.einsum("ad,bc->abcd", d, d)
    z_ok = np.allclose(st.Z, 5 * d, atol=1e-12)
    tr_ok = abs(np.trace(st.Z) - 15) <= 1e-12
    s_ok = np.allclose(st.S, 0.25 * dd, atol=1e-12)
    res = float(np.max(np.abs(np.einsum("abef,efcd->abcd", st.S, pt.Rm) - 0.5 * dd)))
    ok = z_ok and tr_ok and s_ok and res <= 1e-10
    record(4, ok, f"Z=5I {z_ok}, trace 15 {tr_ok}, S=I/4 {s_ok}, S*Rm-I residual {res:.1e}")


def test_criterion_5_main_theorem_sphere():
    worst = 0.0
    ratios = []
    for n in range(2, 7):
        fam, ts = sphere_grid(n)
        for t in ts:
            worst = max(worst, float(np.max(np.abs(harnack.mt_residual(fam, t, H)))))
        t = ts[4]
        h = 1e-2 * fam.blowup_time
        r1 = float(np.max(np.abs(harnack.mt_residual(fam, t, h))))
        r2 = float(np.max(np.abs(harnack.mt_residual(fam, t, h / 2))))
        ratios.append(r1 / r2)
    ratio_ok = all(3.2 <= r <= 4.8 for r in ratios)
    ok = worst <= 1e-6 and ratio_ok
    record(5, ok, f"max residual {worst:.2e} (h={H:g}, K0={SPHERE_K0}), halving ratios "
           + " ".join(f"{r:.3f}" for r in ratios))


def test_criterion_6_positivity():
    zmin = np.inf
    sup = np.inf
    for n in range(2, 7):
        fam, ts = sphere_grid(n)
        for t in ts:
            row = harnack.sphere_row(fam, t, H)
            zmin = min(zmin, row.z_min)
            sup = min(sup, row.traced_supersolution)
    ok = zmin > 0 and sup >= -1e-8
    record(6, ok, f"min eigenvalue of Z {zmin:.3e}, min traced supersolution {sup:.3e}")


def test_criterion_7_trace_inequality():
    rng = np.random.default_rng(0)
    vmin = np.inf
    gap = np.inf
    for n in range(2, 7):
        fam, ts = sphere_grid(n)
        for t in ts:
            pt = harnack.sphere_point(fam, t)
            vals = np.array([harnack.trace_harnack_vector(pt, V) for V in 5 * rng.standard_normal((1000, n))])
            lo, _ = harnack.trace_harnack_minimum(pt)
            vmin = min(vmin, vals.min())
            gap = min(gap, vals.min() - lo)
    ok = vmin >= 0 and gap >= -1e-10
    record(7, ok, f"min sampled value {vmin:.3e}, sampled minus closed-form minimum {gap:.3e}")


def test_criterion_8_canonicalizer_properties():
    import test_canonical_properties as props

    suites = {
        "idempotence": props.test_idempotence,
        "symmetry soundness": props.test_symmetry_soundness,
        "relabel invariance": props.test_relabel_invariance,
        "determinism": props.test_determinism,
    }
    assert props.PROPS.max_examples >= 1000
    failed = []
    for name, fn in suites.items():
        try:
            fn()
        except Exception as exc:  # noqa: BLE001
            failed.append(f"{name}: {type(exc).__name__}")
    record(8, not failed, f"4 suites x {props.PROPS.max_examples} cases, failures {failed or 'none'}")


if __name__ == "__main__":
    import sys
    from pathlib import Path

    sys.path.insert(0, str(Path(__file__).parent))
    rc = 0
    for k, fn in sorted((k, v) for k, v in globals().items() if k.startswith("test_criterion_")):
        try:
            fn()
        except AssertionError:
            rc = 1
    for k in sorted(RESULTS):
        print(RESULTS[k])
    sys.exit(rc)
