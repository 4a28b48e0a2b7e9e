"""Directed rewrite rules over :class:`TensorExpr` and their application.

A template rule has one or more alternatives ``pattern => replacement``.  The
pattern is a single term; its free indices are slot variables and its
repeated indices must match contractions inside the matched factors.
Matching is linear: factors are assigned injectively, each through one image
of its slot-symmetry group.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Mapping

from .expr import (
    FRAME,
    LABEL,
    Factor,
    TensorExpr,
    TensorExprError,
    Term,
    canonical_term,
    canonicalize,
    fresh_names,
    index_classes_of,
)
from .parser import apply_grad, apply_heat, parse, parse_term


class RewriteError(TensorExprError):
    pass


class UnknownRule(RewriteError):
    pass


class NoMatch(RewriteError):
    pass


class SideConditionError(RewriteError):
    pass


class CircularRule(RewriteError):
    pass


# ---------------------------------------------------------------------------
# rules
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Template:
    pattern: Term
    replacement: TensorExpr

    def __post_init__(self):
        if self.pattern.coeff != 1 or self.pattern.tpow != 0:
            raise RewriteError("a pattern must be a bare product of factors")
        if self.replacement.terms and self.replacement.free != self.pattern.free:
            raise RewriteError(
                f"pattern free indices {sorted(self.pattern.free)} differ from replacement "
                f"{sorted(self.replacement.free)}"
            )
        if sum(f.heat for f in self.pattern.factors) > 1 or (
            any(f.heat for f in self.pattern.factors) and len(self.pattern.factors) > 1
        ):
            raise RewriteError("heat patterns must be a single factor")

    @classmethod
    def from_text(cls, pattern: str, replacement: str) -> "Template":
        return cls(parse_term(pattern), parse(replacement))

    def __str__(self) -> str:
        return f"{self.pattern} => {self.replacement}"


Special = Callable[[Term, set], "TensorExpr | None"]


@dataclass(frozen=True)
class RewriteRule:
    """A named rule.  ``axiom`` rules are flow postulates exempt from the
    numeric soundness sweep; ``model`` names the numeric family under which the
    rule holds."""

    name: str
    templates: tuple[Template, ...] = ()
    special: Special | None = None
    axiom: bool = False
    model: str = "full"
    doc: str = ""

    def describe(self) -> str:
        if self.templates:
            return "; ".join(str(t) for t in self.templates)
        return self.doc


def template_rule(name: str, *alts: tuple[str, str], **kw) -> RewriteRule:
    return RewriteRule(name, tuple(Template.from_text(p, r) for p, r in alts), **kw)


# ---------------------------------------------------------------------------
# matching
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Match:
    factors: tuple[int, ...]
    binding: Mapping[str, str]
    sign: int
    outer: tuple[str, ...]
    wrap_heat: bool


def _heat_group(term: Term) -> frozenset[int]:
    return frozenset(i for i, f in enumerate(term.factors) if f.heat)


def find_match(tpl: Template, term: Term, used: frozenset[int] = frozenset()) -> Match | None:
    pfs = tpl.pattern.factors
    single = len(pfs) == 1
    heat_group = _heat_group(term)

    def rec(k, binding, assigned, sign, outer):
        if k == len(pfs):
            hit = set(assigned) & heat_group
            wrap = False
            if hit:
                if set(assigned) != heat_group:
                    return None
                wrap = not pfs[0].heat
            return Match(tuple(assigned), binding, sign, outer, wrap)
        pf = pfs[k]
        gp = len(pf.grads)
        for ti, tf in enumerate(term.factors):
            if ti in used or ti in assigned or tf.symbol != pf.symbol:
                continue
            gt = len(tf.grads)
            if pf.heat:
                if not tf.heat or gt != gp:
                    continue
            elif gt < gp or (not single and gt != gp):
                continue
            for s, g, idx in tf.images():
                b = dict(binding)
                ok = True
                for pv, tv in zip(pf.grads + pf.indices, g[gt - gp :] + idx):
                    if b.setdefault(pv, tv) != tv:
                        ok = False
                        break
                if not ok:
                    continue
                found = rec(k + 1, b, assigned + [ti], sign * s, g[: gt - gp] if single else ())
                if found is not None:
                    return found
        return None

    return rec(0, {}, [], 1, ())


def _instantiate(tpl: Template, m: Match, taken: set[str]) -> TensorExpr:
    free = tpl.pattern.free
    terms = []
    for r in tpl.replacement.terms:
        classes = index_classes_of(r)
        mapping = {v: m.binding[v] for v in free}
        for d in sorted(r.dummies):
            new = next(fresh_names(taken, classes[d]))
            taken.add(new)
            mapping[d] = new
        terms.append(Term(r.coeff * m.sign, r.tpow, tuple(f.rename(mapping) for f in r.factors)))
    out = TensorExpr(tuple(terms))
    for v in reversed(m.outer):
        out = apply_grad(v, out)
    if m.wrap_heat:
        out = apply_heat(out)
    for t in out.terms:
        taken.update(t.all_names())
    return out


def _combine(term: Term, consumed: set[int], pieces: list[TensorExpr]) -> list[Term]:
    base = tuple(f for i, f in enumerate(term.factors) if i not in consumed)
    acc = [Term(term.coeff, term.tpow, base)]
    for piece in pieces:
        acc = [
            Term(a.coeff * b.coeff, a.tpow + b.tpow, a.factors + b.factors) for a in acc for b in piece.terms
        ]
    return acc


def rewrite_term_templates(rule: RewriteRule, term: Term) -> list[Term] | None:
    """All disjoint matches of all alternatives, applied at once."""
    used: set[int] = set()
    matches: list[tuple[Template, Match]] = []
    for tpl in rule.templates:
        while True:
            m = find_match(tpl, term, frozenset(used))
            if m is None:
                break
            matches.append((tpl, m))
            used.update(m.factors)
    if not matches:
        return None
    taken = set(term.all_names())
    pieces = [_instantiate(tpl, m, taken) for tpl, m in matches]
    return _combine(term, used, pieces)


# ---------------------------------------------------------------------------
# special rules
# ---------------------------------------------------------------------------


def _plain(f: Factor) -> Factor:
    return Factor(f.symbol, f.indices, f.grads, False)


def leib_heat(term: Term, taken: set) -> TensorExpr | None:
    """heat(F1...Fk) = sum_i heat(F_i) prod_{j!=i} F_j - 2 sum_{i<j} D_p F_i D_p F_j prod_rest."""
    hot = [i for i, f in enumerate(term.factors) if f.heat and not f.decl.constant]
    if len(hot) < 2:
        return None
    base = tuple(_plain(f) for i, f in enumerate(term.factors) if i not in hot)
    hf = [term.factors[i] for i in hot]
    out = []
    for i in range(len(hf)):
        fs = tuple(hf[j] if j == i else _plain(hf[j]) for j in range(len(hf)))
        out.append(Term(term.coeff, term.tpow, base + fs))
    for i in range(len(hf)):
        for j in range(i + 1, len(hf)):
            p = next(fresh_names(taken, FRAME))
            taken.add(p)
            fs = []
            for k, f in enumerate(hf):
                f = _plain(f)
                if k in (i, j):
                    f = Factor(f.symbol, f.indices, (p,) + f.grads)
                fs.append(f)
            out.append(Term(-2 * term.coeff, term.tpow, base + tuple(fs)))
    return TensorExpr(tuple(out))


def i_contract(term: Term, taken: set) -> TensorExpr | None:
    """I_abcd T_..cd.. -> T_..ab.. when (c, d) is an antisymmetric slot pair of T."""
    factors = list(term.factors)
    coeff = term.coeff
    changed = False
    violation = None
    progress = True
    while progress:
        progress = False
        for k, f in enumerate(factors):
            if f.symbol != "I" or f.grads:
                continue
            for sign, _, idx in f.images():
                a, b, c, d = idx
                if len({a, b, c, d}) < 4:
                    continue
                hit = None
                for j, h in enumerate(factors):
                    if j == k:
                        continue
                    names = h.all_indices()
                    if c in names and d in names:
                        pc, pd = names.index(c), names.index(d)
                        g = len(h.grads)
                        if pc >= g and pd >= g and h.decl.is_antisymmetric_pair(pc - g, pd - g):
                            hit = j
                        else:
                            violation = f"I-CONTRACT: pair ({c},{d}) of {h} is not an antisymmetric pair"
                        break
                if hit is None:
                    continue
                factors[hit] = factors[hit].rename({c: a, d: b})
                coeff *= sign
                del factors[k]
                changed = progress = True
                break
            if progress:
                break
    if not changed:
        if violation:
            raise SideConditionError(violation)
        return None
    return TensorExpr((Term(coeff, term.tpow, tuple(factors)),))


def swap_labels(e: TensorExpr, n1: str, n2: str) -> TensorExpr:
    return TensorExpr(tuple(t.rename({n1: n2, n2: n1}) for t in e.terms))


def label_parity(e: TensorExpr, n1: str, n2: str) -> int:
    """+1 if e is symmetric under n1<->n2, -1 if antisymmetric, 0 otherwise."""
    a = canonicalize(e)
    b = canonicalize(swap_labels(e, n1, n2))
    if canonicalize(a - b).is_zero():
        return 1
    if canonicalize(a + b).is_zero():
        return -1
    return 0


# ---------------------------------------------------------------------------
# selectors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Selector:
    kind: str  # all | nth | term | match | split
    k: int = 0
    exprs: tuple[TensorExpr, ...] = ()
    text: str = "all"

    def __str__(self) -> str:
        return self.text


def parse_selector(text: str) -> Selector:
    s = text.strip()
    if s in ("", "all"):
        return Selector("all", text="all")
    m = re.fullmatch(r"(nth|term):(\d+)", s)
    if m:
        k = int(m.group(2))
        if k < 1:
            raise RewriteError(f"selector index must be >= 1: {s!r}")
        return Selector(m.group(1), k, text=s)
    m = re.fullmatch(r"match\((.*)\)", s, re.S)
    if m:
        return Selector("match", exprs=(parse(m.group(1)),), text=s)
    m = re.fullmatch(r"split\((.*)\)", s, re.S)
    if m:
        parts = m.group(1).split("|")
        if len(parts) != 2:
            raise RewriteError("split selector needs two operands separated by '|'")
        return Selector("split", exprs=tuple(parse(p) for p in parts), text=s)
    raise RewriteError(f"unknown selector {s!r}")


def _key(t: Term):
    # match ignores the numeric coefficient and the power of t
    c = canonical_term(Term(Fraction(1), 0, t.factors))
    return None if c is None else c.factors


# ---------------------------------------------------------------------------
# application
# ---------------------------------------------------------------------------


@dataclass
class Application:
    rule: str
    selector: str
    rewritten: int = 0
    solved: int = 0
    skipped_circular: int = 0
    note: str = ""

    def __str__(self) -> str:
        parts = [f"{self.rule}@{self.selector}: {self.rewritten} term(s)"]
        if self.solved:
            parts.append(f"{self.solved} solved")
        if self.skipped_circular:
            parts.append(f"{self.skipped_circular} circular skipped")
        if self.note:
            parts.append(self.note)
        return ", ".join(parts)


def _rewrite_one(rule: RewriteRule, term: Term) -> TensorExpr | None:
    if rule.special is not None:
        return rule.special(term, set(term.all_names()))
    terms = rewrite_term_templates(rule, term)
    if terms is None:
        return None
    return TensorExpr.from_terms(terms) if terms else TensorExpr((), term.free)


def apply_rule_traced(
    e: TensorExpr, rule: RewriteRule, where: Selector | str = "all"
) -> tuple[TensorExpr, Application]:
    sel = parse_selector(where) if isinstance(where, str) else where
    info = Application(rule.name, str(sel))
    e = canonicalize(e)
    if sel.kind == "split":
        if rule.name != "SYM-ANTISYM-ZERO":
            raise RewriteError("the split selector is only meaningful for SYM-ANTISYM-ZERO")
        return sym_antisym_zero(e, sel, info)
    if sel.kind == "term":
        if sel.k > len(e.terms):
            raise NoMatch(f"{rule.name}: expression has only {len(e.terms)} term(s)")
        candidates = [sel.k - 1]
    elif sel.kind == "match":
        keys = {_key(t) for t in sel.exprs[0].terms}
        candidates = [i for i, t in enumerate(e.terms) if _key(t) in keys]
    else:
        candidates = list(range(len(e.terms)))

    out: list[Term] = []
    hits = 0
    side_error: SideConditionError | None = None
    for i, t in enumerate(e.terms):
        if i not in candidates:
            out.append(t)
            continue
        try:
            new = _rewrite_one(rule, t)
        except SideConditionError as exc:
            if sel.kind == "term":
                raise
            side_error = side_error or exc
            new = None
        if new is None:
            out.append(t)
            continue
        hits += 1
        if sel.kind == "nth" and hits != sel.k:
            out.append(t)
            continue
        new = canonicalize(new)
        ct = canonical_term(t)
        lam = Fraction(0)
        rest = []
        for nt in new.terms:
            if nt.key() == ct.key():
                lam = nt.coeff / ct.coeff
            else:
                rest.append(nt)
        if lam == 1:
            info.skipped_circular += 1
            out.append(t)
            continue
        if lam != 0:
            info.solved += 1
            rest = [r.with_coeff(r.coeff / (1 - lam)) for r in rest]
        info.rewritten += 1
        out.extend(rest)
    if info.rewritten == 0:
        if side_error is not None:
            raise side_error
        if info.skipped_circular:
            raise CircularRule(f"{rule.name}@{sel}: every match reproduces the rewritten term")
        raise NoMatch(f"{rule.name}@{sel}: no match")
    return canonicalize(TensorExpr(tuple(out), e.free)), info


def sym_antisym_zero(e: TensorExpr, sel: Selector, info: Application) -> tuple[TensorExpr, Application]:
    A, S = sel.exprs
    labels = sorted(
        n
        for t in A.terms
        for n, c in index_classes_of(t).items()
        if c == LABEL and n in A.free and n in S.free
    )
    labels = sorted(set(labels))
    if len(labels) != 2:
        raise SideConditionError("SYM-ANTISYM-ZERO: operands must share exactly two free labels")
    n1, n2 = labels
    if label_parity(A, n1, n2) != -1:
        raise SideConditionError(f"SYM-ANTISYM-ZERO: first operand is not antisymmetric in {n1}, {n2}")
    if label_parity(S, n1, n2) != 1:
        raise SideConditionError(f"SYM-ANTISYM-ZERO: second operand is not symmetric in {n1}, {n2}")
    prod = A * S
    # the product vanishes; subtract it (its expansion may still be spelled out in e)
    if prod.free != e.free and e.terms:
        raise RewriteError("SYM-ANTISYM-ZERO: operand product has the wrong free indices")
    info.rewritten = len(prod.terms)
    info.note = f"{n1}<->{n2}: antisymmetric x symmetric"
    return canonicalize(e - prod if e.terms else -prod), info


def apply_rule(
    e: TensorExpr, rule: "RewriteRule | str", where: Selector | str = "all", catalog: Mapping | None = None
) -> TensorExpr:
    """Apply ``rule`` at ``where`` and canonicalize."""
    if isinstance(rule, str):
        rule = get_rule(rule, catalog)
    return apply_rule_traced(e, rule, where)[0]


# ---------------------------------------------------------------------------
# catalog
# ---------------------------------------------------------------------------


_LEIB_HEAT = RewriteRule(
    "LEIB-HEAT",
    special=leib_heat,
    model="",
    doc="heat(F*G) => heat(F)*G + F*heat(G) - 2*grad[p](F)*grad[p](G)",
)
_I_CONTRACT = RewriteRule(
    "I-CONTRACT",
    special=i_contract,
    model="plain",
    doc="I[a,b,c,d]*T[..c,d..] => T[..a,b..] for an antisymmetric slot pair (c,d) of T",
)
_SYM_ANTISYM_ZERO = RewriteRule(
    "SYM-ANTISYM-ZERO",
    special=lambda term, taken: None,
    model="frames",
    doc="sum[N,M](A*S) => 0 for A antisymmetric and S symmetric in N, M",
)

_TEMPLATES = [
    template_rule(
        "EVO-R",
        ("heat(R[a,b,c,d])", "2*(B[a,b,c,d] - B[a,b,d,c] + B[a,c,b,d] - B[a,d,b,c])"),
        axiom=True,
    ),
    template_rule(
        "EVO-P",
        (
            "heat(P[a,b,c])",
            "-2*Rc[d,e]*grad[d](R[a,b,c,e]) + 2*R[a,d,b,e]*P[d,e,c] + 2*R[a,d,c,e]*P[d,b,e]"
            " + 2*R[b,d,c,e]*P[a,d,e]",
        ),
        axiom=True,
    ),
    template_rule(
        "EVO-M",
        (
            "heat(M[a,b])",
            "2*Rc[c,d]*(grad[c](P[d,a,b]) + grad[c](P[d,b,a])) + 2*R[a,c,b,d]*M[c,d]"
            " + 2*P[a,c,d]*P[b,c,d] - 4*P[a,c,d]*P[b,d,c] + 2*Rc[c,d]*Rc[c,e]*R[a,d,b,e]"
            " - 1/2*t^-2*Rc[a,b]",
        ),
        axiom=True,
    ),
    template_rule("B-DEF", ("B[a,b,c,d]", "R[a,e,b,f]*R[c,e,d,f]"), model="plain"),
    template_rule("B-DEF-REV", ("R[a,e,b,f]*R[c,e,d,f]", "B[a,b,c,d]"), model="plain"),
    template_rule("INV", ("S[a,b,e,f]*R[e,f,c,d]", "I[a,b,c,d]"), model="plain"),
    template_rule(
        "GRAD-S", ("grad[v](S[i,j,k,l])", "-S[i,j,m,n]*grad[v](R[m,n,p,q])*S[p,q,k,l]"), model="full"
    ),
    template_rule("BIANCHI-1", ("R[a,b,c,d]", "R[a,c,b,d] - R[a,d,b,c]"), model="bianchi1"),
    template_rule(
        "BIANCHI-2",
        ("grad[v](R[a,b,c,v])", "-grad[a](R[b,v,c,v]) - grad[b](R[v,a,c,v])"),
        model="full",
    ),
    template_rule("RIC-CONTRACT", ("R[v,a,v,b]", "Rc[a,b]"), model="plain"),
    template_rule("RC-TRACE", ("Rc[a,a]", "Rs"), model="plain"),
    template_rule(
        "BIANCHI-2C",
        ("grad[v](R[r,s,b,v])", "-P[r,s,b]"),
        ("grad[v](Rc[v,a])", "1/2*grad[a](Rs)"),
        model="full",
    ),
    template_rule("P-DEF", ("P[a,b,c]", "grad[a](Rc[b,c]) - grad[b](Rc[a,c])"), model="plain"),
    template_rule(
        "M-DEF",
        (
            "M[a,b]",
            "grad[v](grad[v](Rc[a,b])) - 1/2*grad[a](grad[b](Rs)) + 2*R[a,c,b,d]*Rc[c,d]"
            " - Rc[a,c]*Rc[b,c] + 1/2*t^-1*Rc[a,b]",
        ),
        model="plain",
    ),
    template_rule("E-DEF", ("E[i,j,a]", "S[i,j,k,l]*P[k,l,a]"), model="plain"),
    template_rule("E-DEF-REV", ("S[i,j,k,l]*P[k,l,a]", "E[i,j,a]"), model="plain"),
    template_rule("Z-DEF", ("Z[a,b]", "M[a,b] - S[i,j,k,l]*P[i,j,a]*P[k,l,b]"), model="plain"),
    template_rule(
        "K-DEF",
        (
            "K[a,v,w,u]",
            "S[i,j,r,s]*P[i,j,a]*grad[v](R[r,s,w,u]) - grad[v](P[w,u,a]) + R[w,u,a,x]*Rc[v,x]"
            " + 1/2*t^-1*R[w,u,a,v]",
        ),
        model="full",
    ),
    template_rule(
        "L-DEF",
        ("L[N,M;a]", "2*Y[N;i,d]*Y[M;j,d]*E[i,j,a] + Y[N;a,h]*X[M;h] - Y[M;a,h]*X[N;h]"),
        model="frames",
    ),
    template_rule(
        "RICCI-COMM",
        (
            "grad[x](grad[y](Rc[c,d]))",
            "grad[y](grad[x](Rc[c,d])) + R[x,y,c,p]*Rc[p,d] + R[x,y,d,p]*Rc[c,p]",
        ),
        model="full",
    ),
    template_rule("COMPLETE-YY", ("Y[N;a,b]*Y[N;c,d]", "R[a,b,c,d]"), model="frames"),
    template_rule("COMPLETE-YX", ("Y[N;a,b]*X[N;c]", "P[a,b,c]"), model="frames"),
    template_rule("COMPLETE-XX", ("X[N;a]*X[N;b]", "M[a,b]"), model="frames"),
    template_rule("COMPLETE-YY-REV", ("R[a,b,c,d]", "Y[N;a,b]*Y[N;c,d]"), model="frames"),
    template_rule("COMPLETE-YX-REV", ("P[a,b,c]", "Y[N;a,b]*X[N;c]"), model="frames"),
    template_rule("COMPLETE-XX-REV", ("M[a,b]", "X[N;a]*X[N;b]"), model="frames"),
]

BASE_CATALOG: Mapping[str, RewriteRule] = {
    r.name: r for r in [_LEIB_HEAT, _I_CONTRACT, _SYM_ANTISYM_ZERO, *_TEMPLATES]
}

# Rules a derivation script may install once the deriving step passes.
INSTALLABLE = frozenset({"EVO-S", "B-SWAP", "SRP-CONTRACT", "PP-EXPAND"})


def get_rule(name: str, catalog: Mapping | None = None) -> RewriteRule:
    cat = BASE_CATALOG if catalog is None else catalog
    try:
        return cat[name]
    except KeyError:
        if name in INSTALLABLE:
            raise UnknownRule(f"rule {name} is not installed yet") from None
        raise UnknownRule(f"unknown rule {name!r}") from None


__all__ = [
    "Application",
    "BASE_CATALOG",
    "CircularRule",
    "INSTALLABLE",
    "Match",
    "NoMatch",
    "RewriteError",
    "RewriteRule",
    "Selector",
    "SideConditionError",
    "Template",
    "UnknownRule",
    "apply_rule",
    "apply_rule_traced",
    "find_match",
    "get_rule",
    "label_parity",
    "parse_selector",
    "swap_labels",
    "template_rule",
]
