"""Dense evaluation of tensor expressions on random constrained data.

This is the independent numeric check of the symbolic rules: every binding is
generated from its algebraic constraints (curvature symmetries, Bianchi
identities, Ricci commutation) and derived quantities are obtained by
contraction, never by re-using the symbolic rule under test.
"""
from __future__ import annotations

import json
import string
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.linalg

from . import harnack
from .expr import FRAME, LABEL, TensorExpr, index_classes_of
from .parser import parse


class EvaluationError(ValueError):
    pass


FAMILIES = ("plain", "bianchi1", "full", "frames")


# ---------------------------------------------------------------------------
# dense tensors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DenseTensor:
    dim: int
    data: np.ndarray

    @property
    def rank(self) -> int:
        return self.data.ndim

    def to_json(self) -> dict:
        return {"n": self.dim, "rank": self.rank, "data": self.data.ravel().tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "DenseTensor":
        n, rank = int(obj["n"]), int(obj["rank"])
        data = np.asarray(obj["data"], dtype=float)
        if data.size != n**rank:
            raise ValueError(f"expected {n**rank} entries, got {data.size}")
        if not np.all(np.isfinite(data)):
            raise ValueError("non-finite tensor entries")
        return cls(n, data.reshape((n,) * rank))


def _alt4(T: np.ndarray) -> np.ndarray:
    """Total antisymmetrization over four slots."""
    from itertools import permutations

    out = np.zeros_like(T)
    for perm in permutations(range(4)):
        inv = sum(1 for i in range(4) for j in range(i + 1, 4) if perm[i] > perm[j])
        out += (-1) ** inv * np.transpose(T, perm)
    return out / 24.0


def _pair_symmetric(rng: np.random.Generator, n: int) -> np.ndarray:
    q = n * (n - 1) // 2
    A = rng.standard_normal((q, q))
    return harnack.from_wedge_matrix(0.5 * (A + A.T), n)


def antisymmetrization_residual(Rm: np.ndarray) -> float:
    return float(np.max(np.abs(_alt4(Rm))))


def gen_curvature(
    n: int,
    seed: int,
    bianchi1: bool = True,
    positive: bool = True,
    K: float = 1.0,
    eps: float = 0.5,
) -> np.ndarray:
    """Curvature-symmetric rank-4 tensor: sphere part plus a random perturbation.

    With ``bianchi1`` the perturbation has its totally antisymmetric part
    removed, which enforces the first Bianchi identity.  With ``positive``
    the perturbation is halved until the curvature operator is positive.
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    rng = np.random.default_rng(seed)
    T = _pair_symmetric(rng, n)
    if bianchi1:
        T = T - _alt4(T)
    base = harnack.sphere_tensor(n, K)
    Rm = base + eps * T
    if positive:
        while eps > 0 and harnack.curvature_operator_eigenvalues(Rm).min() <= 0:
            eps /= 2
            if eps < 1e-300:
                eps = 0.0
            Rm = base + eps * T
    return Rm


@lru_cache(maxsize=None)
def _algebraic_curvature_basis(n: int, bianchi1: bool) -> np.ndarray:
    """Orthonormal basis (n^4 x d) of curvature-symmetric tensors."""
    q = n * (n - 1) // 2
    cols = []
    for i in range(q):
        for j in range(i, q):
            A = np.zeros((q, q))
            A[i, j] = A[j, i] = 1.0
            T = harnack.from_wedge_matrix(A, n)
            if bianchi1:
                T = T - _alt4(T)
            cols.append(T.ravel())
    B = np.array(cols).T
    U, s, _ = np.linalg.svd(B, full_matrices=False)
    return U[:, s > 1e-10 * s.max()]


@lru_cache(maxsize=None)
def _grad_curvature_basis(n: int, bianchi1: bool, bianchi2: bool) -> np.ndarray:
    """Orthonormal basis (n^5 x d) of rank-5 tensors D[e,a,b,c,d] that are
    curvature-symmetric in the last four slots and, if requested, satisfy the
    cyclic identity in (e, a, b)."""
    A = _algebraic_curvature_basis(n, bianchi1)  # n^4 x d4
    d4 = A.shape[1]
    # tensor basis e_e (x) A_k, coefficients c[e, k]
    Abig = A.reshape((n,) * 4 + (d4,))
    basis = np.einsum("ew,abcdk->eabcdwk", np.eye(n), Abig).reshape(n**5, n * d4)
    if bianchi2:
        T = basis.reshape((n,) * 5 + (n * d4,))
        cyc = T + np.transpose(T, (1, 2, 0, 3, 4, 5)) + np.transpose(T, (2, 0, 1, 3, 4, 5))
        C = cyc.reshape(n**5, n * d4)
        N = scipy.linalg.null_space(C, rcond=1e-10)
        basis = basis @ N
    Q, s, _ = np.linalg.svd(basis, full_matrices=False)
    return Q[:, s > 1e-10 * s.max()]


def gen_grad_curvature(
    n: int, seed: int, bianchi1: bool = True, bianchi2: bool = True, data: np.ndarray | None = None
) -> np.ndarray:
    """Random rank-5 tensor projected onto the constraint subspace.

    Slot 0 is the derivative direction.  ``data`` overrides the random input.
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    B = _grad_curvature_basis(n, bianchi1, bianchi2)
    if data is None:
        data = np.random.default_rng(seed).standard_normal(n**5)
    x = np.asarray(data, dtype=float).ravel()
    return (B @ (B.T @ x)).reshape((n,) * 5)


def second_bianchi_residual(D: np.ndarray) -> float:
    cyc = D + np.transpose(D, (1, 2, 0, 3, 4)) + np.transpose(D, (2, 0, 1, 3, 4))
    return float(np.max(np.abs(cyc)))


@lru_cache(maxsize=None)
def _hessian_system(n: int):
    """Linear constraints on (H, HR): H[x,y,c,d] second derivative of Rc,
    HR[x,y] second derivative of scalar curvature.

    Rows (homogeneous parts): symmetry of H in (c,d); antisymmetric part of H
    in (x,y) (inhomogeneous, Ricci identity); HR symmetric; trace
    H[x,y,c,c] = HR[x,y]; contracted Bianchi H[x,v,v,a] = HR[x,a] / 2.
    """
    nH, nR = n**4, n**2
    idxH = np.arange(nH).reshape((n,) * 4)
    idxR = nH + np.arange(nR).reshape(n, n)
    rows = []
    kinds = []
    for x in range(n):
        for y in range(n):
            for c in range(n):
                for d in range(n):
                    if c < d:
                        rows.append({idxH[x, y, c, d]: 1.0, idxH[x, y, d, c]: -1.0})
                        kinds.append(("zero",))
                    if x < y:
                        rows.append({idxH[x, y, c, d]: 1.0, idxH[y, x, c, d]: -1.0})
                        kinds.append(("ricci", x, y, c, d))
    for x in range(n):
        for y in range(n):
            if x < y:
                rows.append({idxR[x, y]: 1.0, idxR[y, x]: -1.0})
                kinds.append(("zero",))
            r = {idxR[x, y]: -1.0}
            for c in range(n):
                r[idxH[x, y, c, c]] = r.get(idxH[x, y, c, c], 0.0) + 1.0
            rows.append(r)
            kinds.append(("zero",))
            r = {idxR[x, y]: -0.5}
            for v in range(n):
                r[idxH[x, v, v, y]] = r.get(idxH[x, v, v, y], 0.0) + 1.0
            rows.append(r)
            kinds.append(("zero",))
    A = np.zeros((len(rows), nH + nR))
    for i, r in enumerate(rows):
        for j, v in r.items():
            A[i, j] += v
    return A, kinds, np.linalg.pinv(A, rcond=1e-12)


def ricci_commutator(Rm: np.ndarray, Rc: np.ndarray) -> np.ndarray:
    """[x,y,c,d] -> R_xycp Rc_pd + R_xydp Rc_cp (commutator of two derivatives of Rc)."""
    return np.einsum("xycp,pd->xycd", Rm, Rc) + np.einsum("xydp,cp->xycd", Rm, Rc)


def gen_hessians(n: int, seed: int, Rm: np.ndarray, Rc: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Second derivatives of Rc and R consistent with the Ricci identity and
    the contracted second Bianchi identity (least-squares projection)."""
    A, kinds, pinv = _hessian_system(n)
    comm = ricci_commutator(Rm, Rc)
    b = np.zeros(len(kinds))
    for i, k in enumerate(kinds):
        if k[0] == "ricci":
            _, x, y, c, d = k
            b[i] = comm[x, y, c, d]
    x0 = np.random.default_rng(seed).standard_normal(A.shape[1])
    x = x0 - pinv @ (A @ x0 - b)
    H = x[: n**4].reshape((n,) * 4)
    HR = x[n**4 :].reshape(n, n)
    return H, HR


def gen_frames(n: int, m: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    if m < 0:
        raise ValueError("m must be nonnegative")
    rng = np.random.default_rng(seed)
    Y = rng.standard_normal((m, n, n))
    Y = 0.5 * (Y - np.transpose(Y, (0, 2, 1)))
    X = rng.standard_normal((m, n))
    return Y, X


# ---------------------------------------------------------------------------
# models
# ---------------------------------------------------------------------------


@dataclass
class Model:
    n: int
    seed: int
    family: str
    t: float
    bindings: dict[tuple[str, int], np.ndarray] = field(default_factory=dict)
    m: int = 0

    def __post_init__(self):
        if not self.m:
            self.m = self.n * (self.n + 1) // 2

    def bind(self, symbol: str, value: np.ndarray, grads: int = 0) -> None:
        self.bindings[(symbol, grads)] = np.asarray(value)

    def get(self, symbol: str, grads: int = 0) -> np.ndarray:
        try:
            return self.bindings[(symbol, grads)]
        except KeyError:
            what = symbol if not grads else f"{grads}x grad of {symbol}"
            raise EvaluationError(f"unbound symbol: {what}") from None

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "seed": self.seed,
            "family": self.family,
            "t": self.t,
            "m": self.m,
            "bindings": {
                f"{s}" + ("" if g == 0 else f"@grad{g}"): DenseTensor(self.n, np.asarray(v, dtype=float)).to_json()
                | {"shape": list(np.shape(v))}
                for (s, g), v in sorted(self.bindings.items())
            },
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Model":
        model = cls(int(obj["n"]), int(obj["seed"]), obj["family"], float(obj["t"]), m=int(obj["m"]))
        for key, d in obj["bindings"].items():
            sym, _, g = key.partition("@grad")
            model.bindings[(sym, int(g) if g else 0)] = np.asarray(d["data"], dtype=float).reshape(d["shape"])
        return model


def _derive(model: Model, symbol: str, definition: str) -> None:
    model.bind(symbol, evaluate(parse(definition), model, order=_DEF_ORDER[symbol]))


_DEF_ORDER = {
    "B": "abcd",
    "E": "ija",
    "Z": "ab",
    "K": "avwu",
    "L": "NMa",
    "I": "abcd",
}


def _common(model: Model, rng: np.random.Generator) -> None:
    n = model.n
    model.bind("g", np.eye(n))
    model.bind("I", harnack.identity_2forms(n))
    U = rng.standard_normal((n, n))
    model.bind("U", U - U.T)
    model.bind("W", rng.standard_normal(n))
    model.bind("V", rng.standard_normal(n))


def _s_gradient(Rm: np.ndarray, gradRm: np.ndarray) -> np.ndarray:
    """d/dv of the inverse curvature operator along gradRm, by complex step."""
    n = Rm.shape[0]
    h = 1e-30
    out = np.zeros((n,) * 5)
    for v in range(n):
        Sc = harnack.invert_curvature_operator(Rm + 1j * h * gradRm[v])
        out[v] = np.imag(Sc) / h
    return out


def make_model(family: str, n: int, seed: int) -> Model:
    """Random model of the named constraint family.

    plain     curvature symmetries only (no Bianchi identities), positive
    bianchi1  first Bianchi, positive curvature operator
    full      first and second Bianchi, Ricci identity, all derived tensors
    frames    R, P, M induced from random frame vectors Y, X
    """
    if family not in FAMILIES:
        raise ValueError(f"unknown model family {family!r}; choose from {FAMILIES}")
    if n < 2:
        raise ValueError("n must be at least 2")
    return _make_model(family, n, seed)


@lru_cache(maxsize=4096)
def _make_model(family: str, n: int, seed: int) -> Model:
    rng = np.random.default_rng([seed, n, FAMILIES.index(family)])
    t = float(rng.uniform(0.5, 2.0))
    model = Model(n, seed, family, t)
    _common(model, rng)
    sub = int(rng.integers(2**31))
    if family == "frames":
        Y, X = gen_frames(n, model.m, sub)
        model.bind("Y", Y)
        model.bind("X", X)
        Rm = np.einsum("Nab,Ncd->abcd", Y, Y)
        model.bind("R", Rm)
        model.bind("P", np.einsum("Nab,Nc->abc", Y, X))
        model.bind("M", np.einsum("Na,Nb->ab", X, X))
        model.bind("S", harnack.invert_curvature_operator(Rm))
        model.bind("Rc", np.einsum("abad->bd", Rm))
        model.bind("Rs", np.einsum("aa->", model.get("Rc")))
        _derive(model, "B", "R[a,e,b,f]*R[c,e,d,f]")
        _derive(model, "E", "S[i,j,k,l]*P[k,l,a]")
        _derive(model, "Z", "M[a,b] - S[i,j,k,l]*P[i,j,a]*P[k,l,b]")
        _derive(model, "L", "2*Y[N; i,d]*Y[M; j,d]*E[i,j,a] + Y[N; a,h]*X[M; h] - Y[M; a,h]*X[N; h]")
        return model

    bianchi = family in ("bianchi1", "full")
    Rm = gen_curvature(n, sub, bianchi1=bianchi, positive=True)
    model.bind("R", Rm)
    Rc = np.einsum("abad->bd", Rm)
    model.bind("Rc", Rc)
    model.bind("Rs", np.trace(Rc))
    gradRm = gen_grad_curvature(n, sub + 1, bianchi1=bianchi, bianchi2=family == "full")
    model.bind("R", gradRm, 1)
    gradRc = np.einsum("eabad->ebd", gradRm)
    model.bind("Rc", gradRc, 1)
    model.bind("Rs", np.einsum("ecc->e", gradRc), 1)
    if family == "full":
        H, HR = gen_hessians(n, sub + 2, Rm, Rc)
    else:
        H = rng.standard_normal((n,) * 4)
        H = 0.5 * (H + np.transpose(H, (0, 1, 3, 2)))
        HR = rng.standard_normal((n, n))
        HR = 0.5 * (HR + HR.T)
    model.bind("Rc", H, 2)
    model.bind("Rs", HR, 2)
    P = gradRc - np.transpose(gradRc, (1, 0, 2))
    model.bind("P", P)
    model.bind("P", H - np.transpose(H, (0, 2, 1, 3)), 1)
    lapRc = np.einsum("ppab->ab", H)
    M = lapRc - 0.5 * HR + 2 * np.einsum("acbd,cd->ab", Rm, Rc) - Rc @ Rc + Rc / (2 * t)
    model.bind("M", M)
    S = harnack.invert_curvature_operator(Rm)
    model.bind("S", S)
    model.bind("S", _s_gradient(Rm, gradRm), 1)
    _derive(model, "B", "R[a,e,b,f]*R[c,e,d,f]")
    _derive(model, "E", "S[i,j,k,l]*P[k,l,a]")
    _derive(model, "Z", "M[a,b] - S[i,j,k,l]*P[i,j,a]*P[k,l,b]")
    _derive(
        model,
        "K",
        "S[i,j,r,s]*P[i,j,a]*grad[v](R[r,s,w,u]) - grad[v](P[w,u,a]) + R[w,u,a,x]*Rc[v,x] + 1/2*t^-1*R[w,u,a,v]",
    )
    Y, X = harnack.frame_decomposition(Rm, P, M) if _psd_quadratic(Rm, P, M) else gen_frames(n, model.m, sub + 3)
    model.bind("Y", Y)
    model.bind("X", X)
    _derive(model, "L", "2*Y[N; i,d]*Y[M; j,d]*E[i,j,a] + Y[N; a,h]*X[M; h] - Y[M; a,h]*X[N; h]")
    return model


def _psd_quadratic(Rm, P, M) -> bool:
    try:
        harnack.frame_decomposition(Rm, P, M)
        return True
    except harnack.FrameDecompositionError:
        return False


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def evaluate(e: TensorExpr, model: Model, order: str | list[str] | None = None) -> np.ndarray:
    """Dense components of ``e`` over its free indices.

    Axes follow ``order`` if given, else the free indices sorted by name.
    Dummies (frame and label) are summed.
    """
    free = sorted(e.free) if order is None else list(order)
    if set(free) != set(e.free) and e.terms:
        raise EvaluationError(f"requested axes {free} do not match free indices {sorted(e.free)}")
    classes: dict[str, str] = {}
    for t in e.terms:
        classes.update(index_classes_of(t))
    shape = tuple(model.m if classes.get(i) == LABEL else model.n for i in free)
    out = np.zeros(shape)
    for term in e.terms:
        if any(f.heat for f in term.factors):
            raise EvaluationError("the heat operator is not numerically evaluable")
        names: dict[str, str] = {}
        letters = iter(string.ascii_letters)

        def letter(ix):
            if ix not in names:
                names[ix] = next(letters)
            return names[ix]

        operands = []
        subs = []
        for f in term.factors:
            arr = model.get(f.symbol, len(f.grads))
            idx = f.all_indices()
            if arr.ndim != len(idx):
                raise EvaluationError(f"binding for {f.symbol} has rank {arr.ndim}, expected {len(idx)}")
            operands.append(arr)
            subs.append("".join(letter(i) for i in idx))
        target = "".join(letter(i) for i in free)
        coeff = float(term.coeff) * model.t**term.tpow
        if operands:
            val = np.einsum(",".join(subs) + "->" + target, *operands, optimize="greedy")
        else:
            val = np.ones(shape)
        out = out + coeff * val
    return out


def relative_deviation(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(float(np.max(np.abs(a), initial=0.0)), float(np.max(np.abs(b), initial=0.0)))
    diff = float(np.max(np.abs(a - b), initial=0.0))
    if diff == 0.0:
        return 0.0
    return diff / scale if scale > 0 else float("inf")


@dataclass(frozen=True)
class Verdict:
    passed: bool
    worst_deviation: float
    worst_seed: int
    trials: int
    family: str
    n: int

    def to_json(self) -> dict:
        return {
            "passed": self.passed,
            "worst_deviation": self.worst_deviation,
            "worst_seed": self.worst_seed,
            "trials": self.trials,
            "family": self.family,
            "n": self.n,
        }


def _term_scale(e: TensorExpr, model: Model, free: list[str]) -> float:
    return max(
        (float(np.max(np.abs(evaluate(TensorExpr((t,)), model, free)), initial=0.0)) for t in e.terms),
        default=0.0,
    )


def randomized_equal(
    e1: TensorExpr,
    e2: TensorExpr,
    family: str,
    trials: int = 100,
    tol: float = 1e-10,
    n: int = 4,
    seed: int = 0,
) -> Verdict:
    if e1.terms and e2.terms and e1.free != e2.free:
        raise EvaluationError(f"free indices differ: {sorted(e1.free)} vs {sorted(e2.free)}")
    free = sorted(e1.free if e1.terms else e2.free)
    worst, worst_seed = -1.0, seed
    for k in range(trials):
        model = make_model(family, n, seed + k)
        a, b = evaluate(e1, model, free), evaluate(e2, model, free)
        diff = float(np.max(np.abs(a - b), initial=0.0))
        # scale by the largest single term so that identities "= 0" are testable
        scale = max(_term_scale(e1, model, free), _term_scale(e2, model, free))
        dev = 0.0 if diff == 0.0 else (diff / scale if scale > 0 else float("inf"))
        if dev > worst:
            worst, worst_seed = dev, seed + k
    worst = max(worst, 0.0)
    return Verdict(worst <= tol, worst, worst_seed, trials, family, n)


def dump_model(model: Model) -> str:
    return json.dumps(model.to_json(), sort_keys=True)


def random_point(n: int, seed: int, t: float | None = None) -> harnack.CurvaturePoint:
    """A consistent random CurvaturePoint with positive curvature operator."""
    model = make_model("full", n, seed)
    H = model.get("Rc", 2)
    return harnack.CurvaturePoint(
        n=n,
        t=model.t if t is None else t,
        Rm=model.get("R"),
        gradRm=model.get("R", 1),
        Rc=model.get("Rc"),
        R=float(model.get("Rs")),
        gradRc=model.get("Rc", 1),
        lapRc=np.einsum("ppab->ab", H),
        hessR=model.get("Rs", 2),
    )


__all__ = [
    "DenseTensor",
    "EvaluationError",
    "FAMILIES",
    "Model",
    "Verdict",
    "antisymmetrization_residual",
    "evaluate",
    "gen_curvature",
    "gen_frames",
    "gen_grad_curvature",
    "gen_hessians",
    "make_model",
    "random_point",
    "randomized_equal",
    "relative_deviation",
    "second_bianchi_residual",
]
