"""Property suites for the canonicalizer: idempotence, symmetry soundness,
relabel invariance, determinism and numeric faithfulness."""
import subprocess
import sys

import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from harnackcheck.expr import Factor, Term, TensorExpr, canonical_term, canonicalize
from harnackcheck.numeric import evaluate, make_model
from strategies import as_expr, label_terms, renamings, terms

PROPS = settings(max_examples=1000, deadline=None, suppress_health_check=[HealthCheck.too_slow])


def canon(t: Term) -> str:
    return str(canonicalize(as_expr(t)))


@PROPS
@given(st.lists(terms(), min_size=1, max_size=3) | st.lists(label_terms(), min_size=1, max_size=2))
def test_idempotence(ts):
    e = TensorExpr(tuple(t for t in ts if t.free == ts[0].free))
    once = canonicalize(e)
    twice = canonicalize(once)
    assert str(once) == str(twice)
    assert once.terms == twice.terms


@PROPS
@given(st.data())
def test_symmetry_soundness(data):
    t = data.draw(terms() | label_terms())
    k = data.draw(st.integers(0, len(t.factors) - 1))
    f = t.factors[k]
    images = list(f.images())
    sign, grads, idx = data.draw(st.sampled_from(images))
    g = Factor(f.symbol, idx, grads, f.heat)
    # f = sign * g, so swapping in g and multiplying by sign leaves the term unchanged
    t2 = Term(t.coeff * sign, t.tpow, t.factors[:k] + (g,) + t.factors[k + 1 :])
    assert canon(t) == canon(t2)


@PROPS
@given(st.data())
def test_relabel_invariance(data):
    t = data.draw(terms() | label_terms())
    mapping = data.draw(renamings(t))
    perm = data.draw(st.permutations(range(len(t.factors))))
    t2 = Term(t.coeff, t.tpow, tuple(t.factors[i] for i in perm)).rename(mapping)
    assert canon(t) == canon(t2)


@PROPS
@given(st.lists(terms(max_free=2), min_size=2, max_size=4), st.randoms(use_true_random=False))
def test_determinism(ts, rnd):
    ts = [t for t in ts if t.free == ts[0].free]
    shuffled = list(ts)
    rnd.shuffle(shuffled)
    a = canonicalize(TensorExpr(tuple(ts)))
    b = canonicalize(TensorExpr(tuple(shuffled)))
    assert str(a) == str(b)
    assert str(a) == str(canonicalize(TensorExpr(tuple(ts))))


@settings(max_examples=300, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(terms(max_slots=9), st.integers(0, 4))
def test_numeric_faithfulness(t, seed):
    model = make_model("full", 3, seed)
    e = as_expr(t)
    c = canonicalize(e)
    free = sorted(e.free)
    a = evaluate(e, model, free)
    b = evaluate(c, model, free) if c.terms else np.zeros_like(a)
    scale = max(1.0, float(np.max(np.abs(a))))
    assert np.max(np.abs(a - b)) <= 1e-10 * scale


@settings(max_examples=200, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(label_terms(max_slots=8), st.integers(0, 4))
def test_numeric_faithfulness_labels(t, seed):
    model = make_model("frames", 3, seed)
    e = as_expr(t)
    c = canonicalize(e)
    free = sorted(e.free)
    a = evaluate(e, model, free)
    b = evaluate(c, model, free) if c.terms else np.zeros_like(a)
    scale = max(1.0, float(np.max(np.abs(a))))
    assert np.max(np.abs(a - b)) <= 1e-10 * scale


def test_zero_term_detected():
    t = canonical_term(Term(1, 0, (Factor("R", ("a", "a", "b", "c")),)))
    assert t is None


def test_output_stable_across_hash_seeds():
    code = (
        "from harnackcheck import parse, canonicalize;"
        "print(canonicalize(parse('S[i,j,k,l]*P[i,j,a]*P[k,l,b] + R[a,c,b,d]*M[c,d]"
        " + grad[v](R[r,s,a,v])*E[r,s,b]')))"
    )
    outs = {
        subprocess.run(
            [sys.executable, "-c", code], capture_output=True, text=True, check=True,
            env={"PYTHONHASHSEED": str(s), "PATH": ""},
        ).stdout
        for s in (0, 1, 12345)
    }
    assert len(outs) == 1
