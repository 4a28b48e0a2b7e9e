"""Pointwise numerics for the Harnack quantities.

Conventions: orthonormal frame, plain summation over repeated indices,
``R_abab = K > 0`` on the round sphere and ``Rc_bd = R_abad``.  The identity on
2-forms is ``I_abcd = (d_ac d_bd - d_ad d_bc) / 2`` so that ``I_abcd U_cd = U_ab``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from itertools import combinations

import numpy as np

SINGULAR_RTOL = 1e-10


class SingularCurvatureOperator(ArithmeticError):
    def __init__(self, msg: str, eigenvalue: float = 0.0):
        super().__init__(msg)
        self.eigenvalue = eigenvalue


class SingularRicci(ArithmeticError):
    pass


class NonPositiveCurvatureWarning(UserWarning):
    pass


class FrameDecompositionError(ArithmeticError):
    pass


class IntervalError(ValueError):
    pass


# ---------------------------------------------------------------------------
# 2-form bookkeeping
# ---------------------------------------------------------------------------


def wedge_pairs(n: int) -> list[tuple[int, int]]:
    return list(combinations(range(n), 2))


def to_wedge_matrix(T: np.ndarray) -> np.ndarray:
    """Matrix T[(ab),(cd)] = T_abcd over a<b, c<d."""
    n = T.shape[0]
    pairs = wedge_pairs(n)
    ia = np.array([p[0] for p in pairs], dtype=int)
    ib = np.array([p[1] for p in pairs], dtype=int)
    return T[ia[:, None], ib[:, None], ia[None, :], ib[None, :]]


def from_wedge_matrix(A: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros((n,) * 4, dtype=A.dtype)
    for i, (a, b) in enumerate(wedge_pairs(n)):
        for j, (c, d) in enumerate(wedge_pairs(n)):
            v = A[i, j]
            out[a, b, c, d] = v
            out[b, a, c, d] = -v
            out[a, b, d, c] = -v
            out[b, a, d, c] = v
    return out


def wedge_vector(U: np.ndarray) -> np.ndarray:
    return np.array([U[a, b] for a, b in wedge_pairs(U.shape[0])])


def identity_2forms(n: int) -> np.ndarray:
    d = np.eye(n)
    return 0.5 * (np.einsum("ac,bd->abcd", d, d) - np.einsum("ad,bc->abcd", d, d))


def sphere_tensor(n: int, K: float = 1.0) -> np.ndarray:
    d = np.eye(n)
    return K * (np.einsum("ac,bd->abcd", d, d) - np.einsum("ad,bc->abcd", d, d))


def curvature_operator_eigenvalues(Rm: np.ndarray) -> np.ndarray:
    """Eigenvalues of the curvature operator on the a<b basis of 2-forms."""
    A = to_wedge_matrix(np.real(Rm))
    return np.linalg.eigvalsh(0.5 * (A + A.T))


def invert_curvature_operator(Rm: np.ndarray, require_positive: bool = False) -> np.ndarray:
    """Return S with S_abef R_efcd = I_abcd under plain summation.

    Summing over ordered pairs counts each 2-form twice, so on the a<b basis
    ``S = R^{-1} / 4``.  Complex input is accepted (used for complex-step
    derivatives); the singularity test looks at the real part.
    """
    n = Rm.shape[0]
    ev = curvature_operator_eigenvalues(Rm)
    scale = np.max(np.abs(ev)) if ev.size else 0.0
    imin = int(np.argmin(np.abs(ev)))
    if scale == 0.0 or abs(ev[imin]) < SINGULAR_RTOL * scale:
        raise SingularCurvatureOperator(
            f"curvature operator is singular: eigenvalue {ev[imin]:.3e} (max |eigenvalue| {scale:.3e})",
            float(ev[imin]) if ev.size else 0.0,
        )
    if require_positive and ev.min() <= 0:
        warnings.warn(
            f"curvature operator is not positive: min eigenvalue {ev.min():.3e}",
            NonPositiveCurvatureWarning,
            stacklevel=2,
        )
    A = to_wedge_matrix(Rm)
    return from_wedge_matrix(0.25 * np.linalg.inv(A), n)


# ---------------------------------------------------------------------------
# curvature data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CurvaturePoint:
    n: int
    t: float
    Rm: np.ndarray
    gradRm: np.ndarray
    Rc: np.ndarray
    R: float
    gradRc: np.ndarray
    lapRc: np.ndarray
    hessR: np.ndarray

    def validate(self, tol: float = 1e-12) -> None:
        if self.t <= 0:
            raise ValueError(f"t must be positive, got {self.t}")
        scale = max(1.0, float(np.max(np.abs(self.Rm))))
        rc = np.einsum("abad->bd", self.Rm)
        if np.max(np.abs(rc - self.Rc)) > tol * scale:
            raise ValueError("Rc is not the contraction of Rm")
        if abs(np.trace(self.Rc) - self.R) > tol * scale * self.n:
            raise ValueError("R is not the trace of Rc")
        gscale = max(1.0, float(np.max(np.abs(self.gradRm))))
        grc = np.einsum("eabad->ebd", self.gradRm)
        if np.max(np.abs(grc - self.gradRc)) > tol * gscale:
            raise ValueError("gradRc is not the contraction of gradRm")

    @property
    def lapR(self) -> float:
        return float(np.trace(self.lapRc))

    @property
    def gradR(self) -> np.ndarray:
        return np.einsum("acc->a", self.gradRc)

    def to_json(self) -> dict:
        def dense(a):
            a = np.asarray(a, dtype=float)
            return {"n": self.n, "rank": a.ndim, "data": a.ravel().tolist()}

        return {
            "n": self.n,
            "t": self.t,
            "Rm": dense(self.Rm),
            "gradRm": dense(self.gradRm),
            "Rc": dense(self.Rc),
            "R": float(self.R),
            "gradRc": dense(self.gradRc),
            "lapRc": dense(self.lapRc),
            "hessR": dense(self.hessR),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "CurvaturePoint":
        n = int(obj["n"])

        def arr(key, rank):
            d = obj[key]
            if int(d["n"]) != n or int(d["rank"]) != rank:
                raise ValueError(f"{key}: expected n={n}, rank={rank}")
            data = np.asarray(d["data"], dtype=float)
            if data.size != n**rank:
                raise ValueError(f"{key}: expected {n**rank} entries, got {data.size}")
            return data.reshape((n,) * rank)

        pt = cls(
            n=n,
            t=float(obj["t"]),
            Rm=arr("Rm", 4),
            gradRm=arr("gradRm", 5),
            Rc=arr("Rc", 2),
            R=float(obj["R"]),
            gradRc=arr("gradRc", 3),
            lapRc=arr("lapRc", 2),
            hessR=arr("hessR", 2),
        )
        pt.validate(tol=1e-9)
        return pt


@dataclass(frozen=True)
class HarnackState:
    P: np.ndarray
    M: np.ndarray
    S: np.ndarray | None
    Z: np.ndarray | None


def build_PM(pt: CurvaturePoint) -> tuple[np.ndarray, np.ndarray]:
    if pt.t <= 0:
        raise ValueError(f"t must be positive, got {pt.t}")
    P = pt.gradRc - np.transpose(pt.gradRc, (1, 0, 2))
    M = (
        pt.lapRc
        - 0.5 * pt.hessR
        + 2 * np.einsum("acbd,cd->ab", pt.Rm, pt.Rc)
        - pt.Rc @ pt.Rc.T
        + pt.Rc / (2 * pt.t)
    )
    return P, M


def z_from(P: np.ndarray, M: np.ndarray, S: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    Z = M - np.einsum("ijkl,ija,klb->ab", S, P, P)
    asym = np.max(np.abs(Z - Z.T))
    if asym > tol * max(1.0, float(np.max(np.abs(Z)))):
        raise ArithmeticError(f"Z_ab is not symmetric: asymmetry {asym:.3e}")
    return 0.5 * (Z + Z.T)


def harnack_state(pt: CurvaturePoint, require_positive: bool = True) -> HarnackState:
    P, M = build_PM(pt)
    S = invert_curvature_operator(pt.Rm, require_positive=require_positive)
    return HarnackState(P, M, S, z_from(P, M, S))


def harnack_quadratic(state: HarnackState, Rm: np.ndarray, U: np.ndarray, W: np.ndarray) -> float:
    n = state.M.shape[0]
    if U.shape != (n, n) or W.shape != (n,) or Rm.shape != (n,) * 4:
        raise ValueError("shape mismatch in harnack_quadratic")
    if np.max(np.abs(U + U.T)) > 1e-12 * max(1.0, float(np.max(np.abs(U)))):
        raise ValueError("U must be antisymmetric")
    return float(
        np.einsum("ab,a,b->", state.M, W, W)
        + 2 * np.einsum("abc,ab,c->", state.P, U, W)
        + np.einsum("abcd,ab,cd->", Rm, U, U)
    )


def minimizing_U(state: HarnackState, W: np.ndarray) -> np.ndarray:
    if state.S is None:
        raise ValueError("minimizing_U needs the inverse curvature operator")
    return -np.einsum("abij,ijp,p->ab", state.S, state.P, W)


def linear_system_minimum(state: HarnackState, Rm: np.ndarray, W: np.ndarray) -> tuple[float, np.ndarray]:
    """Minimize Z(U, W) over antisymmetric U by solving the normal equations
    in the basis e_i^e_j (i < j).  Independent of the inverse S."""
    n = W.shape[0]
    basis = []
    for i, j in wedge_pairs(n):
        B = np.zeros((n, n))
        B[i, j], B[j, i] = 1.0, -1.0
        basis.append(B)
    Bs = np.array(basis)
    G = np.einsum("abcd,kab,lcd->kl", Rm, Bs, Bs)
    g = np.einsum("abc,kab,c->k", state.P, Bs, W)
    u = np.linalg.solve(G, -g)
    value = float(np.einsum("ab,a,b->", state.M, W, W) + g @ u)
    return value, np.einsum("k,kab->ab", u, Bs)


def z_tensor(state: HarnackState) -> np.ndarray:
    if state.S is None:
        raise ValueError("z_tensor needs the inverse curvature operator")
    return z_from(state.P, state.M, state.S)


@dataclass(frozen=True)
class TraceZ:
    trace: float
    formula: float


def trace_z(state: HarnackState, pt: CurvaturePoint, tol: float = 1e-10) -> TraceZ:
    Z = z_tensor(state)
    tr = float(np.trace(Z))
    formula = 0.5 * (pt.lapR + 2 * float(np.sum(pt.Rc**2)) + pt.R / pt.t) - float(
        np.einsum("ijkl,ija,kla->", state.S, state.P, state.P)
    )
    if abs(tr - formula) > tol * max(1.0, abs(tr)):
        raise ArithmeticError(f"trace of Z disagrees with the closed formula: {tr} vs {formula}")
    return TraceZ(tr, formula)


def dRdt(pt: CurvaturePoint) -> float:
    """Evolution of scalar curvature under Ricci flow, Laplacian R + 2|Rc|^2."""
    return pt.lapR + 2 * float(np.sum(pt.Rc**2))


def trace_harnack_vector(pt: CurvaturePoint, V: np.ndarray) -> float:
    return float(dRdt(pt) + pt.R / pt.t + 2 * pt.gradR @ V + 2 * V @ pt.Rc @ V)


def trace_harnack_minimum(pt: CurvaturePoint) -> tuple[float, np.ndarray]:
    """Minimum over V and the minimizer V* = -Rc^{-1} grad R / 2."""
    ev = np.linalg.eigvalsh(pt.Rc)
    scale = np.max(np.abs(ev))
    if scale == 0 or np.min(np.abs(ev)) < SINGULAR_RTOL * scale:
        raise SingularRicci(f"Ricci tensor is singular: eigenvalues {ev}")
    gR = pt.gradR
    sol = np.linalg.solve(pt.Rc, gR)
    vstar = -0.5 * sol
    return float(dRdt(pt) + pt.R / pt.t - 0.5 * gR @ sol), vstar


# ---------------------------------------------------------------------------
# sum-of-squares frames and the Main Theorem right-hand side
# ---------------------------------------------------------------------------


def frame_decomposition(Rm: np.ndarray, P: np.ndarray, M: np.ndarray, tol: float = 1e-10):
    """Vectors Y^N + X^N with sum YY = Rm, sum YX = P, sum XX = M.

    Built from the eigendecomposition of the joint Gram matrix on the
    a<b 2-form basis plus 1-forms; m = n(n+1)/2 vectors.
    """
    n = M.shape[0]
    pairs = wedge_pairs(n)
    q = len(pairs)
    G = np.zeros((q + n, q + n))
    G[:q, :q] = to_wedge_matrix(Rm)
    ia = [a for a, _ in pairs]
    ib = [b for _, b in pairs]
    G[:q, q:] = P[ia, ib, :]
    G[q:, :q] = G[:q, q:].T
    G[q:, q:] = M
    G = 0.5 * (G + G.T)
    lam, vec = np.linalg.eigh(G)
    scale = max(1.0, float(np.max(np.abs(lam))))
    if lam.min() < -tol * scale:
        raise FrameDecompositionError(f"Harnack quadratic is not positive semidefinite: eigenvalue {lam.min():.3e}")
    lam = np.clip(lam, 0.0, None)
    coords = vec * np.sqrt(lam)[None, :]
    m = q + n
    Y = np.zeros((m, n, n))
    X = coords[q:, :].T.copy()
    for i, (a, b) in enumerate(pairs):
        Y[:, a, b] = coords[i, :]
        Y[:, b, a] = -coords[i, :]
    return Y, X


def l_tensor(Y: np.ndarray, X: np.ndarray, E: np.ndarray) -> np.ndarray:
    """L[N, M, a] = 2 Y^N_id Y^M_jd E_ija + Y^N_ah X^M_h - Y^M_ah X^N_h."""
    L = 2 * np.einsum("Nid,Mjd,ija->NMa", Y, Y, E)
    YX = np.einsum("Nah,Mh->NMa", Y, X)
    return L + YX - np.transpose(YX, (1, 0, 2))


def k_tensor(pt: CurvaturePoint, state: HarnackState, gradP: np.ndarray) -> np.ndarray:
    """K[a,v,t,u] = S_ijrs P_ija gradR_vrstu - gradP_vtua + R_tuaw Rc_vw + R_tuav/(2t)."""
    return (
        np.einsum("ijrs,ija,vrstu->avtu", state.S, state.P, pt.gradRm)
        - np.einsum("vtua->avtu", gradP)
        + np.einsum("tuaw,vw->avtu", pt.Rm, pt.Rc)
        + np.einsum("tuav->avtu", pt.Rm) / (2 * pt.t)
    )


def mt_rhs(pt: CurvaturePoint, state: HarnackState, gradP: np.ndarray | None = None) -> np.ndarray:
    """2 S_mntu K_avtu K_bvmn + sum_NM L_a L_b - (2/t) Z_ab."""
    if gradP is None:
        gradP = np.zeros((pt.n,) * 4)
    K = k_tensor(pt, state, gradP)
    E = np.einsum("ijkl,kla->ija", state.S, state.P)
    Y, X = frame_decomposition(pt.Rm, state.P, state.M)
    L = l_tensor(Y, X, E)
    return (
        2 * np.einsum("mntu,avtu,bvmn->ab", state.S, K, K)
        + np.einsum("NMa,NMb->ab", L, L)
        - (2 / pt.t) * state.Z
    )


@dataclass(frozen=True)
class SphereFamily:
    """Shrinking round sphere K(t) = K0 / (1 - 2(n-1) K0 t)."""

    n: int
    K0: float

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("n must be at least 2")
        if self.K0 <= 0:
            raise ValueError("K0 must be positive")

    @property
    def blowup_time(self) -> float:
        return 1.0 / (2 * (self.n - 1) * self.K0)

    def contains(self, t: float) -> bool:
        return 0 < t < self.blowup_time

    def K(self, t: float) -> float:
        if not self.contains(t):
            raise IntervalError(f"t={t} outside the valid interval (0, {self.blowup_time})")
        return self.K0 / (1 - 2 * (self.n - 1) * self.K0 * t)


def sphere_point(fam: SphereFamily, t: float) -> CurvaturePoint:
    n = fam.n
    K = fam.K(t)
    Rm = sphere_tensor(n, K)
    Rc = (n - 1) * K * np.eye(n)
    return CurvaturePoint(
        n=n,
        t=t,
        Rm=Rm,
        gradRm=np.zeros((n,) * 5),
        Rc=Rc,
        R=float(n * (n - 1) * K),
        gradRc=np.zeros((n,) * 3),
        lapRc=np.zeros((n, n)),
        hessR=np.zeros((n, n)),
    )


def sphere_z(fam: SphereFamily, t: float) -> np.ndarray:
    return harnack_state(sphere_point(fam, t)).Z


def mt_residual(fam: SphereFamily, t: float, h: float) -> np.ndarray:
    """Centered-difference d/dt Z_ab minus the right-hand side of the Z_ab
    evolution equation on the sphere (the Laplacian term vanishes there)."""
    if not (fam.contains(t - h) and fam.contains(t + h)):
        raise IntervalError(f"[{t - h}, {t + h}] leaves the valid interval (0, {fam.blowup_time})")
    dZ = (sphere_z(fam, t + h) - sphere_z(fam, t - h)) / (2 * h)
    pt = sphere_point(fam, t)
    return dZ - mt_rhs(pt, harnack_state(pt))


def traced_rhs_terms(pt: CurvaturePoint, state: HarnackState) -> float:
    """2 S_ijkl K_mnij K_mnkl + |L|^2, which must be nonnegative."""
    K = k_tensor(pt, state, np.zeros((pt.n,) * 4))
    E = np.einsum("ijkl,kla->ija", state.S, state.P)
    Y, X = frame_decomposition(pt.Rm, state.P, state.M)
    L = l_tensor(Y, X, E)
    return float(2 * np.einsum("ijkl,mnij,mnkl->", state.S, K, K) + np.sum(L * L))


@dataclass(frozen=True)
class SphereRow:
    t: float
    K: float
    z_eigenvalues: tuple[float, ...]
    trace_z: float
    mt_residual: float
    traced_residual: float
    traced_supersolution: float

    @property
    def z_min(self) -> float:
        return min(self.z_eigenvalues)

    @property
    def z_max(self) -> float:
        return max(self.z_eigenvalues)


def sphere_row(fam: SphereFamily, t: float, h: float) -> SphereRow:
    pt = sphere_point(fam, t)
    st = harnack_state(pt)
    res = mt_residual(fam, t, h)
    dtr = (np.trace(sphere_z(fam, t + h)) - np.trace(sphere_z(fam, t - h))) / (2 * h)
    trz = float(np.trace(st.Z))
    traced_res = dtr - (traced_rhs_terms(pt, st) - 2 * trz / t)
    return SphereRow(
        t=t,
        K=fam.K(t),
        z_eigenvalues=tuple(float(x) for x in np.linalg.eigvalsh(st.Z)),
        trace_z=trz,
        mt_residual=float(np.max(np.abs(res))),
        traced_residual=float(abs(traced_res)),
        traced_supersolution=float(dtr + 2 * trz / t),
    )


def sphere_closed_form_dz(n: int, K: float, t: float) -> float:
    """Analytic d/dt of the sphere Z eigenvalue, used as a test oracle."""
    c = n - 1
    return 4 * c**3 * K**3 + c**2 * K**2 / t - c * K / (2 * t**2)


def parse_t_grid(spec: str) -> list[float]:
    """``a:b:k`` -> k points from a to b inclusive."""
    try:
        a, b, k = spec.split(":")
        a, b, k = float(a), float(b), int(k)
    except ValueError:
        raise ValueError(f"bad t-grid {spec!r}, expected a:b:k") from None
    if k < 1:
        raise ValueError("t-grid needs at least one point")
    if k == 1:
        return [a]
    return [a + (b - a) * i / (k - 1) for i in range(k)]


def isclose_all(a: np.ndarray, b: np.ndarray, rtol: float) -> bool:
    scale = max(1.0, float(np.max(np.abs(a))), float(np.max(np.abs(b))))
    return float(np.max(np.abs(a - b))) <= rtol * scale

