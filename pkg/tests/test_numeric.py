import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from harnackcheck import harnack
from harnackcheck.numeric import (
    FAMILIES,
    DenseTensor,
    EvaluationError,
    Model,
    antisymmetrization_residual,
    evaluate,
    gen_curvature,
    gen_frames,
    gen_grad_curvature,
    gen_hessians,
    make_model,
    random_point,
    randomized_equal,
    relative_deviation,
    ricci_commutator,
    second_bianchi_residual,
)
from harnackcheck.parser import parse

SEEDS = range(20)


def curvature_symmetry_residual(T):
    return max(
        np.max(np.abs(T + np.transpose(T, (1, 0, 2, 3)))),
        np.max(np.abs(T + np.transpose(T, (0, 1, 3, 2)))),
        np.max(np.abs(T - np.transpose(T, (2, 3, 0, 1)))),
    )


class TestGenerators:
    @pytest.mark.parametrize("n", [2, 3, 4, 5, 6])
    def test_curvature_constraints(self, n):
        for seed in SEEDS:
            Rm = gen_curvature(n, seed)
            assert curvature_symmetry_residual(Rm) <= 1e-12
            assert antisymmetrization_residual(Rm) <= 1e-12
            assert harnack.curvature_operator_eigenvalues(Rm).min() > 0

    def test_unconstrained_curvature_breaks_bianchi(self):
        Rm = gen_curvature(4, 0, bianchi1=False)
        assert curvature_symmetry_residual(Rm) <= 1e-12
        assert antisymmetrization_residual(Rm) > 1e-3

    @pytest.mark.parametrize("n", [3, 4, 5])
    def test_grad_curvature_constraints(self, n):
        for seed in range(5):
            D = gen_grad_curvature(n, seed)
            assert second_bianchi_residual(D) <= 1e-12
            for e in range(n):
                assert curvature_symmetry_residual(D[e]) <= 1e-12
                assert antisymmetrization_residual(D[e]) <= 1e-12

    def test_grad_curvature_is_a_projection(self):
        D = gen_grad_curvature(3, 1)
        again = gen_grad_curvature(3, 0, data=D)
        assert np.allclose(again, D, atol=1e-12)

    def test_grad_curvature_without_second_bianchi(self):
        D = gen_grad_curvature(4, 0, bianchi2=False)
        assert second_bianchi_residual(D) > 1e-3

    @pytest.mark.parametrize("n", [3, 4])
    def test_hessians(self, n):
        Rm = gen_curvature(n, 3)
        Rc = np.einsum("abad->bd", Rm)
        H, HR = gen_hessians(n, 3, Rm, Rc)
        comm = H - np.transpose(H, (1, 0, 2, 3))
        assert np.max(np.abs(comm - ricci_commutator(Rm, Rc))) <= 1e-12
        assert np.max(np.abs(H - np.transpose(H, (0, 1, 3, 2)))) <= 1e-12
        assert np.max(np.abs(np.einsum("xycc->xy", H) - HR)) <= 1e-12
        assert np.max(np.abs(np.einsum("xvva->xa", H) - 0.5 * HR)) <= 1e-12

    def test_frames_shapes(self):
        Y, X = gen_frames(3, 5, 0)
        assert Y.shape == (5, 3, 3) and X.shape == (5, 3)
        assert np.allclose(Y, -np.transpose(Y, (0, 2, 1)))

    def test_bad_dimension(self):
        with pytest.raises(ValueError):
            gen_curvature(1, 0)


class TestModels:
    @pytest.mark.parametrize("family", FAMILIES)
    def test_families_build(self, family):
        m = make_model(family, 4, 0)
        assert m.family == family
        assert m.get("R").shape == (4,) * 4

    def test_frames_completeness(self):
        m = make_model("frames", 4, 2)
        Y, X = m.get("Y"), m.get("X")
        assert np.allclose(np.einsum("nab,ncd->abcd", Y, Y), m.get("R"), atol=1e-12)
        assert np.allclose(np.einsum("nab,nc->abc", Y, X), m.get("P"), atol=1e-12)
        assert np.allclose(np.einsum("na,nb->ab", X, X), m.get("M"), atol=1e-12)

    def test_full_model_gradient_of_s(self):
        # D(S R) = 0 componentwise
        m = make_model("full", 3, 0)
        S, R, dS, dR = m.get("S"), m.get("R"), m.get("S", 1), m.get("R", 1)
        lhs = np.einsum("vijab,abcd->vijcd", dS, R) + np.einsum("ijab,vabcd->vijcd", S, dR)
        assert np.max(np.abs(lhs)) <= 1e-10

    def test_unbound_symbol(self):
        m = make_model("frames", 3, 0)
        with pytest.raises(EvaluationError):
            m.get("R", 1)

    def test_json_roundtrip(self):
        m = make_model("full", 3, 1)
        back = Model.from_json(json.loads(json.dumps(m.to_json())))
        for key, arr in m.bindings.items():
            assert np.array_equal(back.bindings[key], arr)
        assert back.t == m.t

    def test_dense_tensor_json(self):
        T = DenseTensor(3, np.arange(9.0).reshape(3, 3))
        back = DenseTensor.from_json(json.loads(json.dumps(T.to_json())))
        assert np.array_equal(back.data, T.data)
        with pytest.raises(ValueError):
            DenseTensor.from_json({"n": 3, "rank": 2, "data": [1.0]})


class TestEvaluate:
    def test_matches_einsum(self):
        m = make_model("full", 4, 0)
        e = parse("R[a,c,b,d]*M[c,d] - 1/2*t^-2*Rc[a,b]")
        want = np.einsum("acbd,cd->ab", m.get("R"), m.get("M")) - 0.5 * m.t**-2 * m.get("Rc")
        assert np.allclose(evaluate(e, m), want, atol=1e-13)

    def test_axis_order(self):
        m = make_model("plain", 3, 0)
        e = parse("P[a,b,c]")
        assert np.array_equal(evaluate(e, m, ["c", "b", "a"]), np.transpose(m.get("P"), (2, 1, 0)))

    def test_gradient_slot_is_first(self):
        m = make_model("full", 3, 0)
        assert np.array_equal(evaluate(parse("grad[v](Rc[a,b])"), m, ["v", "a", "b"]), m.get("Rc", 1))

    def test_label_sum(self):
        m = make_model("frames", 3, 0)
        got = evaluate(parse("sum[N](X[N;a]*X[N;b])"), m)
        assert np.allclose(got, m.get("M"))

    def test_heat_rejected(self):
        with pytest.raises(EvaluationError):
            evaluate(parse("heat(Rc[a,b])"), make_model("full", 3, 0))

    def test_relative_deviation(self):
        assert relative_deviation(np.ones(3), np.ones(3)) == 0.0
        assert relative_deviation(np.array([2.0]), np.array([1.0])) == pytest.approx(0.5)


class TestRandomizedEqual:
    def test_identity_passes(self):
        v = randomized_equal(parse("Rc[a,b]"), parse("R[c,a,c,b]"), "plain", trials=10)
        assert v.passed and v.worst_deviation <= 1e-12

    def test_reports_worst_seed(self):
        v = randomized_equal(parse("Rc[a,b]"), parse("2*Rc[a,b]"), "plain", trials=5, seed=7)
        assert not v.passed
        assert 7 <= v.worst_seed < 12

    def test_zero_claims(self):
        e = parse("grad[v](R[r,s,b,v]) + P[r,s,b]")
        zero = parse("0")
        assert randomized_equal(e, zero, "full", trials=10).passed
        assert not randomized_equal(e, zero, "bianchi1", trials=10).passed


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 5), st.integers(0, 10**6))
def test_random_point_is_consistent(n, seed):
    pt = random_point(n, seed)
    pt.validate()
    assert harnack.curvature_operator_eigenvalues(pt.Rm).min() > 0
