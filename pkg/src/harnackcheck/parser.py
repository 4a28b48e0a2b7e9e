"""Recursive-descent parser for the derivation DSL.

Grammar (whitespace-insensitive, ``#`` starts a line comment)::

    expr    := ['+'|'-'] product (('+'|'-') product)*
    product := unary ('*' unary)*
    unary   := '-' unary | atom
    atom    := INT ['/' INT] | 't' ['^' ['-'] INT]
             | NAME ['[' [labels ';'] indices ']']
             | 'grad' '[' NAME ']' '(' expr ')'
             | 'heat' '(' expr ')'
             | 'sum' '[' NAME (',' NAME)* ']' '(' expr ')'
             | '(' expr ')'

``grad`` of a product is distributed with the Leibniz rule while parsing and
``heat`` distributes over sums; ``heat`` of ``t^k * F`` picks up ``k t^(k-1) F``.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction

from .expr import (
    FRAME,
    LABEL,
    Factor,
    TensorExpr,
    TensorExprError,
    Term,
    index_classes_of,
    lookup,
    rename_dummies_apart,
)


class DSLSyntaxError(TensorExprError):
    def __init__(self, msg: str, text: str = "", pos: int = 0):
        self.pos = pos
        self.line = text.count("\n", 0, pos) + 1
        self.column = pos - (text.rfind("\n", 0, pos) + 1) + 1
        super().__init__(f"{msg} (line {self.line}, column {self.column})")


_TOKEN = re.compile(
    r"""
    (?P<ws>\s+|\#[^\n]*)
  | (?P<num>\d+)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>[-+*/^()\[\];,])
    """,
    re.VERBOSE,
)


@dataclass
class Token:
    kind: str
    value: str
    pos: int


def tokenize(text: str) -> list[Token]:
    out = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise DSLSyntaxError(f"unexpected character {text[pos]!r}", text, pos)
        kind = m.lastgroup
        if kind != "ws":
            out.append(Token(kind, m.group(), pos))
        pos = m.end()
    out.append(Token("eof", "", len(text)))
    return out


def apply_grad(v: str, e: TensorExpr) -> TensorExpr:
    """grad[v] of an expression, distributed over products (LEIB-GRAD)."""
    terms = []
    for t in e.terms:
        if any(f.heat for f in t.factors):
            raise TensorExprError("grad of a heat-operator factor is not supported")
        if v in t.dummies:
            t = rename_dummies_apart(t, {v})
        for k, f in enumerate(t.factors):
            if f.decl.constant:
                continue
            nf = Factor(f.symbol, f.indices, (v,) + f.grads, False)
            terms.append(Term(t.coeff, t.tpow, t.factors[:k] + (nf,) + t.factors[k + 1 :]))
    out = TensorExpr.from_terms(terms)
    if not terms:
        return TensorExpr((), e.free | {v})
    return out


def apply_heat(e: TensorExpr) -> TensorExpr:
    """(d/dt - Laplacian) applied termwise; factors of a term form one group."""
    terms = []
    for t in e.terms:
        if any(f.heat for f in t.factors):
            raise TensorExprError("nested heat operators are not supported")
        if t.tpow:
            terms.append(Term(t.coeff * t.tpow, t.tpow - 1, t.factors))
        if t.factors and not all(f.decl.constant for f in t.factors):
            terms.append(
                Term(t.coeff, t.tpow, tuple(Factor(f.symbol, f.indices, f.grads, True) for f in t.factors))
            )
    return TensorExpr.from_terms(terms) if terms else TensorExpr((), e.free)


class Parser:
    def __init__(self, text: str):
        self.text = text
        self.toks = tokenize(text)
        self.i = 0

    # -- helpers
    def peek(self) -> Token:
        return self.toks[self.i]

    def take(self) -> Token:
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, value: str) -> Token:
        t = self.take()
        if t.value != value:
            raise DSLSyntaxError(f"expected {value!r}, found {t.value or 'end of input'!r}", self.text, t.pos)
        return t

    def error(self, msg: str, tok: Token | None = None):
        tok = tok or self.peek()
        raise DSLSyntaxError(msg, self.text, tok.pos)

    # -- grammar
    def parse(self) -> TensorExpr:
        if self.peek().kind == "eof":
            self.error("empty expression")
        e = self.expr()
        if self.peek().kind != "eof":
            self.error(f"unexpected {self.peek().value!r}")
        return e

    def expr(self) -> TensorExpr:
        sign = 1
        if self.peek().value in "+-" and self.peek().kind == "op":
            sign = -1 if self.take().value == "-" else 1
        acc = self.product().scale(sign)
        while self.peek().kind == "op" and self.peek().value in ("+", "-"):
            op = self.take()
            rhs = self.product()
            try:
                acc = acc + rhs if op.value == "+" else acc - rhs
            except TensorExprError as exc:
                self.error(str(exc), op)
        return acc

    def product(self) -> TensorExpr:
        acc = self.unary()
        while self.peek().value == "*" and self.peek().kind == "op":
            op = self.take()
            rhs = self.unary()
            try:
                acc = acc * rhs
            except TensorExprError as exc:
                self.error(str(exc), op)
        return acc

    def unary(self) -> TensorExpr:
        if self.peek().value == "-" and self.peek().kind == "op":
            self.take()
            return -self.unary()
        return self.atom()

    def atom(self) -> TensorExpr:
        tok = self.peek()
        if tok.kind == "num":
            self.take()
            num = int(tok.value)
            if self.peek().value == "/":
                self.take()
                den = self.take()
                if den.kind != "num" or int(den.value) == 0:
                    self.error("expected nonzero integer denominator", den)
                return TensorExpr.scalar(Fraction(num, int(den.value)))
            return TensorExpr.scalar(num)
        if tok.value == "(":
            self.take()
            e = self.expr()
            self.expect(")")
            return e
        if tok.kind != "name":
            self.error(f"unexpected {tok.value or 'end of input'!r}")
        self.take()
        name = tok.value
        if name == "t":
            power = 1
            if self.peek().value == "^":
                self.take()
                neg = False
                if self.peek().value == "-":
                    self.take()
                    neg = True
                p = self.take()
                if p.kind != "num":
                    self.error("expected integer exponent", p)
                power = -int(p.value) if neg else int(p.value)
            return TensorExpr.scalar(1, power)
        if name == "grad":
            self.expect("[")
            v = self.take()
            if v.kind != "name":
                self.error("expected index name", v)
            self.expect("]")
            self.expect("(")
            inner = self.expr()
            self.expect(")")
            return apply_grad(v.value, inner)
        if name == "heat":
            self.expect("(")
            inner = self.expr()
            self.expect(")")
            try:
                return apply_heat(inner)
            except TensorExprError as exc:
                self.error(str(exc), tok)
        if name == "sum":
            self.expect("[")
            labels = [self.name_token().value]
            while self.peek().value == ",":
                self.take()
                labels.append(self.name_token().value)
            self.expect("]")
            self.expect("(")
            inner = self.expr()
            self.expect(")")
            for t in inner.terms:
                classes = index_classes_of(t)
                for lab in labels:
                    if lab not in t.dummies or classes.get(lab) != LABEL:
                        self.error(f"sum label {lab!r} is not a summed frame label in every term", tok)
            return inner
        return self.symbol(tok)

    def name_token(self) -> Token:
        t = self.take()
        if t.kind != "name":
            self.error("expected index name", t)
        return t

    def symbol(self, tok: Token) -> TensorExpr:
        try:
            decl = lookup(tok.value)
        except TensorExprError as exc:
            self.error(str(exc), tok)
        labels: list[str] = []
        frame: list[str] = []
        if self.peek().value == "[":
            self.take()
            cur = frame
            if self.peek().value != "]":
                cur.append(self.name_token().value)
                while self.peek().value in (",", ";"):
                    sep = self.take()
                    if sep.value == ";":
                        if cur is labels or labels:
                            self.error("more than one ';' in index list", sep)
                        labels, frame = frame, []
                        cur = frame
                    cur.append(self.name_token().value)
            self.expect("]")
        if len(labels) != decl.n_labels or len(frame) != decl.n_frame:
            self.error(
                f"arity error: {decl.name} takes {decl.n_labels} label(s) and {decl.n_frame} frame "
                f"index(es), got {len(labels)} and {len(frame)}",
                tok,
            )
        term = Term(Fraction(1), 0, (Factor(decl.name, tuple(labels + frame)),))
        try:
            return TensorExpr((term,))
        except TensorExprError as exc:
            self.error(str(exc), tok)


def parse(text: str) -> TensorExpr:
    """Parse a DSL string into a :class:`TensorExpr`."""
    return Parser(text).parse()


def parse_term(text: str) -> Term:
    e = parse(text)
    if len(e.terms) != 1:
        raise TensorExprError(f"expected a single term, got {len(e.terms)}: {text!r}")
    return e.terms[0]
