"""Abstract-index tensor polynomials in an orthonormal frame.

A :class:`TensorExpr` is a sum of :class:`Term` objects.  Each term carries a
rational coefficient, an integer power of the formal time variable ``t`` and a
tuple of :class:`Factor` objects.  Repeated indices are summed; since the frame
is orthonormal there is no distinction between upper and lower slots.

Canonicalization handles monoterm symmetries only: the declared slot
permutation symmetries of each symbol, renaming of dummy indices and
reordering of factors.  Multi-term identities (Bianchi and friends) are
rewrite rules, see :mod:`harnackcheck.rewrite`.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Iterable, Iterator, Sequence

FRAME = "frame"
LABEL = "label"


class TensorExprError(ValueError):
    """Malformed expression: bad arity, unbalanced indices, unknown symbol."""


class FreeIndexMismatch(TensorExprError):
    pass


# ---------------------------------------------------------------------------
# symbols
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SymbolDecl:
    """A tensor symbol.

    Slots are ordered as ``labels + frame slots``.  ``generators`` is a list of
    ``(perm, sign)`` meaning ``F[idx[perm[0]], idx[perm[1]], ...] = sign * F[idx]``.
    """

    name: str
    n_labels: int
    n_frame: int
    generators: tuple[tuple[tuple[int, ...], int], ...] = ()
    constant: bool = False  # parallel and time independent (delta, I)
    doc: str = ""

    @property
    def arity(self) -> int:
        return self.n_labels + self.n_frame

    def slot_class(self, i: int) -> str:
        return LABEL if i < self.n_labels else FRAME

    @cached_property
    def group(self) -> tuple[tuple[tuple[int, ...], int], ...]:
        """All (perm, sign) pairs generated, identity first, BFS order."""
        ident = tuple(range(self.arity))
        seen = {ident: 1}
        order = [ident]
        queue = [ident]
        while queue:
            p = queue.pop(0)
            for g, s in self.generators:
                q = tuple(p[g[i]] for i in range(self.arity))
                sign = seen[p] * s
                if q in seen:
                    if seen[q] != sign:
                        raise TensorExprError(f"symmetry group of {self.name} forces it to vanish")
                    continue
                seen[q] = sign
                order.append(q)
                queue.append(q)
        return tuple((p, seen[p]) for p in order)

    def is_antisymmetric_pair(self, i: int, j: int) -> bool:
        perm = list(range(self.arity))
        perm[i], perm[j] = perm[j], perm[i]
        return (tuple(perm), -1) in self.group


def _swap(arity: int, *pairs: tuple[int, int]) -> tuple[int, ...]:
    perm = list(range(arity))
    for i, j in pairs:
        perm[i], perm[j] = perm[j], perm[i]
    return tuple(perm)


def _curvature_like(name: str, doc: str, constant: bool = False) -> SymbolDecl:
    return SymbolDecl(
        name,
        0,
        4,
        ((_swap(4, (0, 1)), -1), (_swap(4, (2, 3)), -1), ((2, 3, 0, 1), 1)),
        constant=constant,
        doc=doc,
    )


def _sym2(name: str, doc: str, constant: bool = False) -> SymbolDecl:
    return SymbolDecl(name, 0, 2, ((_swap(2, (0, 1)), 1),), constant=constant, doc=doc)


def _plain(name: str, k: int, doc: str) -> SymbolDecl:
    return SymbolDecl(name, 0, k, (), doc=doc)


CATALOG: dict[str, SymbolDecl] = {
    d.name: d
    for d in [
        _sym2("g", "Kronecker delta (orthonormal frame metric)", constant=True),
        _curvature_like("R", "Riemann curvature tensor, R_abab = K on the round sphere"),
        _sym2("Rc", "Ricci tensor Rc_bd = R_abad"),
        _plain("Rs", 0, "scalar curvature"),
        SymbolDecl("P", 0, 3, ((_swap(3, (0, 1)), -1),), doc="P_abc = D_a Rc_bc - D_b Rc_ac"),
        _sym2("M", "M_ab"),
        _curvature_like("S", "inverse of the curvature operator"),
        _curvature_like("I", "identity on 2-forms, 1/2(g_ac g_bd - g_ad g_bc)", constant=True),
        SymbolDecl("B", 0, 4, (((2, 3, 0, 1), 1), ((1, 0, 3, 2), 1)), doc="B_abcd = R_aebf R_cedf"),
        SymbolDecl("U", 0, 2, ((_swap(2, (0, 1)), -1),), doc="a 2-form"),
        _plain("W", 1, "a 1-form"),
        _plain("V", 1, "a vector field"),
        SymbolDecl("Y", 1, 2, ((_swap(3, (1, 2)), -1),), doc="2-form part of frame vector N"),
        SymbolDecl("X", 1, 1, (), doc="1-form part of frame vector N"),
        SymbolDecl("E", 0, 3, ((_swap(3, (0, 1)), -1),), doc="E_ija = S_ijkl P_kla"),
        _sym2("Z", "Z_ab = M_ab - S_ijkl P_ija P_klb"),
        SymbolDecl("K", 0, 4, ((_swap(4, (2, 3)), -1),), doc="K_avtu"),
        SymbolDecl("L", 2, 1, ((_swap(3, (0, 1)), -1),), doc="L_a^NM"),
    ]
}


def lookup(name: str) -> SymbolDecl:
    try:
        return CATALOG[name]
    except KeyError:
        raise TensorExprError(f"unknown symbol {name!r}") from None


# ---------------------------------------------------------------------------
# factors and terms
# ---------------------------------------------------------------------------


@dataclass(frozen=True, order=True)
class Factor:
    symbol: str
    indices: tuple[str, ...]
    grads: tuple[str, ...] = ()  # outermost first
    heat: bool = False

    @property
    def decl(self) -> SymbolDecl:
        return lookup(self.symbol)

    def all_indices(self) -> tuple[str, ...]:
        return self.grads + self.indices

    def index_classes(self) -> tuple[str, ...]:
        d = self.decl
        return (FRAME,) * len(self.grads) + tuple(d.slot_class(i) for i in range(d.arity))

    def kind(self) -> tuple:
        return (self.symbol, self.heat, len(self.grads))

    def rename(self, mapping: dict[str, str]) -> "Factor":
        return Factor(
            self.symbol,
            tuple(mapping.get(i, i) for i in self.indices),
            tuple(mapping.get(i, i) for i in self.grads),
            self.heat,
        )

    def images(self) -> Iterator[tuple[int, tuple[str, ...], tuple[str, ...]]]:
        """(sign, grads, indices) over the symmetry group of this factor."""
        d = self.decl
        grad_variants = [self.grads]
        if d.arity == 0 and len(self.grads) >= 2:
            # Hessian of a scalar is symmetric (torsion free).
            g = self.grads
            grad_variants.append(g[:-2] + (g[-1], g[-2]))
        for perm, sign in d.group:
            idx = tuple(self.indices[p] for p in perm)
            for g in grad_variants:
                yield sign, g, idx

    def __str__(self) -> str:
        d = self.decl
        if d.arity == 0:
            core = self.symbol
        elif d.n_labels:
            labels = ",".join(self.indices[: d.n_labels])
            frame = ",".join(self.indices[d.n_labels :])
            core = f"{self.symbol}[{labels}; {frame}]"
        else:
            core = f"{self.symbol}[{','.join(self.indices)}]"
        for v in reversed(self.grads):
            core = f"grad[{v}]({core})"
        return core


def _index_counts(factors: Iterable[Factor]) -> dict[str, int]:
    counts: dict[str, int] = {}
    for f in factors:
        for i in f.all_indices():
            counts[i] = counts.get(i, 0) + 1
    return counts


@dataclass(frozen=True)
class Term:
    coeff: Fraction
    tpow: int
    factors: tuple[Factor, ...]

    def index_counts(self) -> dict[str, int]:
        return _index_counts(self.factors)

    @property
    def free(self) -> frozenset[str]:
        return frozenset(i for i, c in self.index_counts().items() if c == 1)

    @property
    def dummies(self) -> frozenset[str]:
        return frozenset(i for i, c in self.index_counts().items() if c == 2)

    def all_names(self) -> set[str]:
        return set(self.index_counts())

    def validate(self) -> None:
        classes: dict[str, set[str]] = {}
        for f in self.factors:
            if len(f.indices) != f.decl.arity:
                raise TensorExprError(
                    f"{f.symbol} takes {f.decl.arity} indices, got {len(f.indices)}"
                )
            for name, cls in zip(f.all_indices(), f.index_classes()):
                classes.setdefault(name, set()).add(cls)
        for name, c in self.index_counts().items():
            if c > 2:
                raise TensorExprError(f"index {name!r} appears {c} times in one term")
            if len(classes[name]) > 1:
                raise TensorExprError(f"index {name!r} pairs a frame slot with a label slot")

    def with_coeff(self, c: Fraction) -> "Term":
        return Term(c, self.tpow, self.factors)

    def rename(self, mapping: dict[str, str]) -> "Term":
        return Term(self.coeff, self.tpow, tuple(f.rename(mapping) for f in self.factors))

    def key(self) -> tuple:
        return (self.tpow, self.factors)

    def heat_group(self) -> tuple[int, ...]:
        return tuple(i for i, f in enumerate(self.factors) if f.heat)

    def __str__(self) -> str:
        return format_term(self, leading=True)


def format_coeff(c: Fraction) -> str:
    return str(c.numerator) if c.denominator == 1 else f"{c.numerator}/{c.denominator}"


def format_term(term: Term, leading: bool = False) -> str:
    c = term.coeff
    sign = "-" if c < 0 else ("" if leading else "+")
    mag = abs(c)
    parts: list[str] = []
    if mag != 1 or (not term.factors and term.tpow == 0):
        parts.append(format_coeff(mag))
    if term.tpow:
        parts.append("t" if term.tpow == 1 else f"t^{term.tpow}")
    heated = [f for f in term.factors if f.heat]
    plain = [f for f in term.factors if not f.heat]
    if heated:
        parts.append("heat(" + "*".join(str(Factor(f.symbol, f.indices, f.grads)) for f in heated) + ")")
    parts.extend(str(f) for f in plain)
    body = "*".join(parts)
    if leading:
        return f"{sign}{body}"
    return f" {sign} {body}"


# ---------------------------------------------------------------------------
# fresh names
# ---------------------------------------------------------------------------

_FRAME_POOL = "ijklmnpqrsuvwxyzabcdefgho"
_LABEL_POOL = "NMJKQTGHOAB"


def fresh_names(taken: set[str], cls: str) -> Iterator[str]:
    pool = _LABEL_POOL if cls == LABEL else _FRAME_POOL
    for ch in pool:
        if ch not in taken:
            yield ch
    for k in itertools.count():
        for ch in pool:
            name = f"{ch}{k}"
            if name not in taken:
                yield name


def rename_dummies_apart(term: Term, avoid: set[str]) -> Term:
    """Rename dummies of ``term`` that clash with ``avoid``."""
    counts = term.index_counts()
    clash = [i for i, c in counts.items() if c == 2 and i in avoid]
    if not clash:
        return term
    classes = {}
    for f in term.factors:
        for n, c in zip(f.all_indices(), f.index_classes()):
            classes[n] = c
    taken = set(avoid) | set(counts)
    gens = {FRAME: fresh_names(taken, FRAME), LABEL: fresh_names(taken, LABEL)}
    mapping = {}
    for name in clash:
        new = next(gens[classes[name]])
        while new in taken:
            new = next(gens[classes[name]])
        taken.add(new)
        mapping[name] = new
    return term.rename(mapping)


def multiply_terms(a: Term, b: Term) -> Term:
    b = rename_dummies_apart(b, a.all_names())
    a = rename_dummies_apart(a, b.free | (b.all_names() - b.free))
    if a.heat_group() and b.heat_group():
        raise TensorExprError("product of two heat-operator groups is not representable")
    t = Term(a.coeff * b.coeff, a.tpow + b.tpow, a.factors + b.factors)
    t.validate()
    return t


# ---------------------------------------------------------------------------
# expressions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TensorExpr:
    terms: tuple[Term, ...] = ()
    _free: frozenset[str] | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        free = None
        for t in self.terms:
            t.validate()
            if free is None:
                free = t.free
            elif t.free != free:
                raise FreeIndexMismatch(
                    f"inhomogeneous sum: free indices {sorted(free)} vs {sorted(t.free)}"
                )
        if self._free is not None and free is not None and free != self._free:
            raise FreeIndexMismatch("declared free indices disagree with terms")
        object.__setattr__(self, "_free", free if free is not None else (self._free or frozenset()))

    @property
    def free(self) -> frozenset[str]:
        return self._free

    def is_zero(self) -> bool:
        return not self.terms

    @classmethod
    def from_terms(cls, terms: Iterable[Term]) -> "TensorExpr":
        return cls(tuple(t for t in terms if t.coeff != 0))

    @classmethod
    def scalar(cls, c, tpow: int = 0) -> "TensorExpr":
        c = Fraction(c)
        return cls.from_terms([Term(c, tpow, ())])

    def __add__(self, other: "TensorExpr") -> "TensorExpr":
        if self.terms and other.terms and self.free != other.free:
            raise FreeIndexMismatch(
                f"cannot add expressions with free indices {sorted(self.free)} and {sorted(other.free)}"
            )
        return TensorExpr(self.terms + other.terms)

    def __neg__(self) -> "TensorExpr":
        return self.scale(-1)

    def __sub__(self, other: "TensorExpr") -> "TensorExpr":
        return self + (-other)

    def scale(self, c, tpow: int = 0) -> "TensorExpr":
        c = Fraction(c)
        return TensorExpr.from_terms(Term(t.coeff * c, t.tpow + tpow, t.factors) for t in self.terms)

    def __mul__(self, other: "TensorExpr") -> "TensorExpr":
        if isinstance(other, (int, Fraction)):
            return self.scale(other)
        return TensorExpr.from_terms(multiply_terms(a, b) for a in self.terms for b in other.terms)

    __rmul__ = __mul__

    def __str__(self) -> str:
        if not self.terms:
            return "0"
        return "".join(format_term(t, leading=(k == 0)) for k, t in enumerate(self.terms))

    def __len__(self) -> int:
        return len(self.terms)

    def symbols(self) -> set[str]:
        return {f.symbol for t in self.terms for f in t.factors}


def free_indices(e: TensorExpr) -> frozenset[str]:
    return e.free


# ---------------------------------------------------------------------------
# canonicalization
# ---------------------------------------------------------------------------


def _eliminate_deltas(term: Term) -> Term | None:
    """Contract Kronecker deltas into neighbours; drop constants from heat
    groups.  Returns None when the term vanishes."""
    factors = list(term.factors)
    had_heat = any(f.heat for f in factors)
    for k, f in enumerate(factors):
        if f.decl.constant:
            if f.grads:
                return None
            if f.heat:
                factors[k] = Factor(f.symbol, f.indices, f.grads, False)
    if had_heat and not any(f.heat for f in factors):
        return None  # heat operator applied to a constant
    changed = True
    while changed:
        changed = False
        for k, f in enumerate(factors):
            if f.symbol != "g" or f.heat:
                continue
            x, y = f.indices
            if x == y:
                continue
            for a, b in ((x, y), (y, x)):
                # partner occurrence of a outside this delta
                for j, h in enumerate(factors):
                    if j == k or a not in h.all_indices():
                        continue
                    factors[j] = h.rename({a: b})
                    del factors[k]
                    changed = True
                    break
                if changed:
                    break
            if changed:
                break
    return Term(term.coeff, term.tpow, tuple(factors))


@dataclass
class _Branch:
    used: frozenset[int]
    rename: dict
    counters: tuple[int, int]
    sign: int
    chosen: list


def _encode(names, classes, free, rename, counters):
    rename = dict(rename)
    nf, nl = counters
    word = []
    for n, c in zip(names, classes):
        if n in free:
            word.append((0, n, 0))
        else:
            if n not in rename:
                if c == LABEL:
                    rename[n] = (2, "", nl)
                    nl += 1
                else:
                    rename[n] = (1, "", nf)
                    nf += 1
            word.append(rename[n])
    return tuple(word), rename, (nf, nl)


def canonical_term(term: Term) -> Term | None:
    """Minimal representative of ``term`` (coefficient carries the sign).

    Returns None if the term vanishes by symmetry.
    """
    if term.coeff == 0:
        return None
    term = _eliminate_deltas(term)
    if term is None:
        return None
    counts = term.index_counts()
    free = frozenset(i for i, c in counts.items() if c == 1)
    order = sorted(range(len(term.factors)), key=lambda i: term.factors[i].kind())
    kinds = [term.factors[i].kind() for i in order]
    images = [list(f.images()) for f in term.factors]
    classes = [f.index_classes() for f in term.factors]

    branches = [_Branch(frozenset(), {}, (0, 0), 1, [])]
    for kind in kinds:
        best = None
        nxt: list[_Branch] = []
        for br in branches:
            for fi, f in enumerate(term.factors):
                if fi in br.used or f.kind() != kind:
                    continue
                for sign, grads, idx in images[fi]:
                    names = grads + idx
                    word, ren, ctr = _encode(names, classes[fi], free, br.rename, br.counters)
                    if best is None or word < best:
                        best = word
                        nxt = []
                    if word == best:
                        nxt.append(
                            _Branch(br.used | {fi}, ren, ctr, br.sign * sign, br.chosen + [(fi, grads, idx)])
                        )
        # merge duplicate states; opposite signs on an identical state mean zero
        merged: dict = {}
        for br in nxt:
            k = (br.used, tuple(sorted(br.rename.items())))
            if k in merged:
                if merged[k].sign != br.sign:
                    return None
                continue
            merged[k] = br
        branches = list(merged.values())
    signs = {br.sign for br in branches}
    if len(signs) > 1:
        return None
    br = branches[0]
    # materialize dummy names
    taken = set(free)
    frame_names = fresh_names(taken, FRAME)
    label_names = fresh_names(taken, LABEL)
    fmap: dict[int, str] = {}
    lmap: dict[int, str] = {}
    nmf = max((v[2] + 1 for v in br.rename.values() if v[0] == 1), default=0)
    nml = max((v[2] + 1 for v in br.rename.values() if v[0] == 2), default=0)
    for k in range(nmf):
        fmap[k] = next(frame_names)
    for k in range(nml):
        lmap[k] = next(label_names)

    def name_of(n):
        if n in free:
            return n
        tag, _, k = br.rename[n]
        return fmap[k] if tag == 1 else lmap[k]

    out = []
    for fi, grads, idx in br.chosen:
        f = term.factors[fi]
        out.append(Factor(f.symbol, tuple(name_of(n) for n in idx), tuple(name_of(n) for n in grads), f.heat))
    return Term(term.coeff * br.sign, term.tpow, tuple(out))


def canonicalize(e: TensorExpr) -> TensorExpr:
    acc: dict[tuple, Fraction] = {}
    order: list[tuple] = []
    for t in e.terms:
        c = canonical_term(t)
        if c is None:
            continue
        k = c.key()
        if k not in acc:
            acc[k] = Fraction(0)
            order.append(k)
        acc[k] += c.coeff
    terms = [Term(acc[k], k[0], k[1]) for k in sorted(order, key=_sort_key) if acc[k] != 0]
    return TensorExpr(tuple(terms), e.free)


def _sort_key(k):
    tpow, factors = k
    return (len(factors), tpow, tuple((f.symbol, f.heat, f.grads, f.indices) for f in factors))


def equal_canonical(a: TensorExpr, b: TensorExpr) -> bool:
    if a.terms and b.terms and a.free != b.free:
        raise FreeIndexMismatch(f"free indices differ: {sorted(a.free)} vs {sorted(b.free)}")
    return canonicalize(a - b).is_zero()


def term_signature(t: Term) -> tuple:
    """Coefficient-free identity of a canonical term."""
    c = canonical_term(t.with_coeff(Fraction(1)))
    return None if c is None else c.key()


def index_classes_of(term: Term) -> dict[str, str]:
    out = {}
    for f in term.factors:
        for n, c in zip(f.all_indices(), f.index_classes()):
            out[n] = c
    return out


def sum_exprs(exprs: Sequence[TensorExpr]) -> TensorExpr:
    terms: list[Term] = []
    free = None
    for e in exprs:
        if e.terms:
            if free is not None and e.free != free:
                raise FreeIndexMismatch("inhomogeneous sum")
            free = e.free
            terms.extend(e.terms)
    return TensorExpr(tuple(terms))
