"""Derivation scripts: parsing, step verification and reports.

Script syntax::

    # comment
    step DS6 {
      source: "free text";
      lhs: <expr>;                      # starts a chain
      rhs: <expr>; apply: RULE@sel; ... # one link: previous expr = this expr
      rhs: <expr>; ...                  # further links continue the chain
      install: NAME: <pattern> => <replacement>;
      model: bianchi1;                  # numeric family for the chains below
    }                                   # ("none" disables the cross-check)

A link passes when ``canonicalize(previous - target)`` is reduced to zero by
its listed rule applications, performed in order on that difference.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping

from .expr import TensorExpr, TensorExprError, canonicalize
from .parser import DSLSyntaxError, parse
from .rewrite import (
    BASE_CATALOG,
    RewriteError,
    RewriteRule,
    Template,
    apply_rule_traced,
    parse_selector,
)


class ScriptError(ValueError):
    """Malformed script (reported with file, line and column)."""

    def __init__(self, msg: str, path: str = "<script>", line: int = 0, column: int = 0):
        self.path, self.line, self.column = path, line, column
        super().__init__(f"{path}:{line}:{column}: {msg}")


class DependencyError(ScriptError):
    pass


@dataclass(frozen=True)
class RuleCall:
    rule: str
    selector: str
    line: int = 0

    def __str__(self) -> str:
        return f"{self.rule}@{self.selector}"


@dataclass(frozen=True)
class Link:
    target: TensorExpr
    text: str
    rules: tuple[RuleCall, ...]
    line: int = 0


@dataclass(frozen=True)
class Chain:
    start: TensorExpr
    text: str
    links: tuple[Link, ...]
    line: int = 0
    model: str = ""


@dataclass(frozen=True)
class Install:
    name: str
    template: Template
    chain: int  # index of the chain justifying it
    line: int = 0


@dataclass(frozen=True)
class DerivationStep:
    id: str
    chains: tuple[Chain, ...]
    installs: tuple[Install, ...] = ()
    source: str = ""
    model: str = ""
    line: int = 0

    def rules_used(self) -> list[str]:
        return [c.rule for ch in self.chains for l in ch.links for c in l.rules]


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------


def _line_col(text: str, pos: int) -> tuple[int, int]:
    line = text.count("\n", 0, pos) + 1
    return line, pos - (text.rfind("\n", 0, pos) + 1) + 1


def _strip_comments(text: str) -> str:
    out = []
    for line in text.split("\n"):
        quoted = False
        cut = len(line)
        for i, ch in enumerate(line):
            if ch == '"':
                quoted = not quoted
            elif ch == "#" and not quoted:
                cut = i
                break
        out.append(line[:cut] + " " * (len(line) - cut))
    return "\n".join(out)


def _split_statements(text: str, start: int, end: int) -> list[tuple[int, str]]:
    """Split text[start:end] on ';' at bracket depth 0, outside quotes."""
    out = []
    depth = 0
    quoted = False
    begin = start
    for i in range(start, end):
        ch = text[i]
        if ch == '"':
            quoted = not quoted
        elif quoted:
            continue
        elif ch in "([":
            depth += 1
        elif ch in ")]":
            depth -= 1
        elif ch == ";" and depth == 0:
            out.append((begin, text[begin:i]))
            begin = i + 1
    tail = text[begin:end]
    if tail.strip():
        out.append((begin, tail))
    return out


class _Reader:
    def __init__(self, text: str, path: str):
        self.raw = text
        self.text = _strip_comments(text)
        self.path = path

    def error(self, msg: str, pos: int, cls=ScriptError):
        line, col = _line_col(self.raw, pos)
        raise cls(msg, self.path, line, col)

    def expr(self, src: str, pos: int) -> TensorExpr:
        lead = len(src) - len(src.lstrip())
        try:
            return parse(src)
        except DSLSyntaxError as exc:
            self.error(str(exc).rsplit(" (line", 1)[0], pos + exc.pos)
        except TensorExprError as exc:
            self.error(str(exc), pos + lead)

    def steps(self) -> list[DerivationStep]:
        text = self.text
        steps = []
        ids = set()
        i = 0
        n = len(text)
        while True:
            while i < n and text[i].isspace():
                i += 1
            if i >= n:
                break
            if not text.startswith("step", i):
                self.error("expected 'step'", i)
            j = i + 4
            k = text.find("{", j)
            if k < 0:
                self.error("expected '{' after step id", j)
            sid = text[j:k].strip()
            if not sid or not sid.replace("-", "").replace("_", "").isalnum():
                self.error(f"bad step id {sid!r}", j)
            if sid in ids:
                self.error(f"duplicate step id {sid}", j)
            ids.add(sid)
            depth = 0
            quoted = False
            end = -1
            for m in range(k, n):
                ch = text[m]
                if ch == '"':
                    quoted = not quoted
                elif not quoted and ch == "{":
                    depth += 1
                elif not quoted and ch == "}":
                    depth -= 1
                    if depth == 0:
                        end = m
                        break
            if end < 0:
                self.error(f"unterminated step {sid}", i)
            steps.append(self.step(sid, k + 1, end, i))
            i = end + 1
        return steps

    def step(self, sid: str, start: int, end: int, at: int) -> DerivationStep:
        chains: list[Chain] = []
        installs: list[Install] = []
        source = ""
        model = ""
        chain_model = ""
        cur_start = None  # (expr, text, pos, model)
        links: list[Link] = []

        def close_chain():
            nonlocal cur_start, links
            if cur_start is not None:
                if not links:
                    self.error("chain has no rhs", cur_start[2])
                chains.append(Chain(cur_start[0], cur_start[1].strip(), tuple(links),
                                    _line_col(self.raw, cur_start[2])[0], cur_start[3]))
            cur_start, links = None, []

        for pos, stmt in _split_statements(self.text, start, end):
            body = stmt.strip()
            if not body:
                continue
            off = pos + (len(stmt) - len(stmt.lstrip()))
            key, sep, value = body.partition(":")
            key = key.strip()
            if not sep:
                self.error(f"expected 'key: value', got {body[:30]!r}", off)
            vpos = off + body.index(":") + 1
            if key == "source":
                source = value.strip().strip('"')
            elif key == "model":
                chain_model = value.strip()
                if not chains and cur_start is None:
                    model = chain_model
            elif key == "lhs":
                close_chain()
                cur_start = (self.expr(value, vpos), value, off, chain_model)
            elif key == "rhs":
                if cur_start is None:
                    self.error("rhs before lhs", off)
                tgt = self.expr(value, vpos)
                links.append(Link(tgt, value.strip(), (), _line_col(self.raw, off)[0]))
            elif key == "apply":
                if not links:
                    self.error("apply before any rhs", off)
                name, at_, sel = value.strip().partition("@")
                name = name.strip()
                sel = sel.strip() if at_ else "all"
                try:
                    parse_selector(sel)
                except (RewriteError, TensorExprError) as exc:
                    self.error(str(exc), vpos)
                last = links[-1]
                links[-1] = Link(last.target, last.text, last.rules + (RuleCall(name, sel, _line_col(self.raw, off)[0]),), last.line)
            elif key == "install":
                name, sep2, rest = value.partition(":")
                if not sep2 or "=>" not in rest:
                    self.error("install expects NAME: pattern => replacement", off)
                pat, _, rep = rest.partition("=>")
                if cur_start is None and not chains:
                    self.error("install needs a preceding chain", off)
                close_chain()
                ppos = vpos + len(name) + 1
                try:
                    pe = self.expr(pat, ppos)
                    if len(pe.terms) != 1:
                        raise RewriteError("install pattern must be a single term")
                    tpl = Template(pe.terms[0], self.expr(rep, ppos + len(pat) + 2))
                except RewriteError as exc:
                    self.error(str(exc), ppos)
                installs.append(Install(name.strip(), tpl, len(chains) - 1, _line_col(self.raw, off)[0]))
            else:
                self.error(f"unknown statement {key!r}", off)
        close_chain()
        if not chains:
            self.error(f"step {sid} has no claims", at)
        return DerivationStep(sid, tuple(chains), tuple(installs), source, model, _line_col(self.raw, at)[0])


def parse_script(text: str, path: str = "<script>") -> list[DerivationStep]:
    steps = _Reader(text, path).steps()
    check_dependencies(steps, path)
    return steps


def load_script(path: str | Path) -> list[DerivationStep]:
    p = Path(path)
    return parse_script(p.read_text(encoding="utf-8"), str(p))


def check_dependencies(steps: list[DerivationStep], path: str = "<script>") -> None:
    known = set(BASE_CATALOG)
    for st in steps:
        for ch in st.chains:
            for link in ch.links:
                for call in link.rules:
                    if call.rule not in known:
                        raise DependencyError(
                            f"step {st.id} uses rule {call.rule} before any step installs it", path, call.line, 1
                        )
        known.update(i.name for i in st.installs)


# ---------------------------------------------------------------------------
# verification
# ---------------------------------------------------------------------------


@dataclass
class LinkReport:
    chain: int
    link: int
    passed: bool
    residual_count: int
    residual: list[str]
    trace: list[str]
    error: str | None = None
    numeric: dict | None = None


@dataclass
class StepReport:
    id: str
    passed: bool
    source: str
    links: list[LinkReport]
    installed: list[str] = field(default_factory=list)
    error: str | None = None

    @property
    def first_mismatch(self) -> str | None:
        for l in self.links:
            if not l.passed:
                return l.residual[0] if l.residual else l.error
        return None

    @property
    def residual_count(self) -> int:
        return sum(l.residual_count for l in self.links)

    def to_json(self) -> dict:
        d = asdict(self)
        d["residual_count"] = self.residual_count
        d["first_mismatch"] = self.first_mismatch
        return d

    def to_text(self) -> str:
        head = f"{'PASS' if self.passed else 'FAIL'} {self.id}"
        if self.source:
            head += f"  ({self.source})"
        lines = [head]
        for l in self.links:
            status = "ok" if l.passed else "FAIL"
            lines.append(f"  chain {l.chain + 1} link {l.link + 1}: {status}")
            for t in l.trace:
                lines.append(f"    {t}")
            if l.error:
                lines.append(f"    error: {l.error}")
            if not l.passed and l.residual:
                lines.append(f"    residual ({l.residual_count} term(s)): {' '.join(l.residual[:5])}")
            if l.numeric:
                lines.append(f"    numeric: {l.numeric}")
        for name in self.installed:
            lines.append(f"  installed {name}")
        if self.error:
            lines.append(f"  error: {self.error}")
        return "\n".join(lines)


def _has_heat(e: TensorExpr) -> bool:
    return any(f.heat for t in e.terms for f in t.factors)


def _proportional(a: TensorExpr, b: TensorExpr) -> bool:
    a, b = canonicalize(a), canonicalize(b)
    if len(a.terms) != len(b.terms) or not a.terms:
        return False
    bk = {t.key(): t.coeff for t in b.terms}
    ratio = None
    for t in a.terms:
        if t.key() not in bk:
            return False
        r = t.coeff / bk[t.key()]
        if ratio is None:
            ratio = r
        elif r != ratio:
            return False
    return True


def verify_link(prev: TensorExpr, link: Link, catalog: Mapping[str, RewriteRule]) -> tuple[bool, TensorExpr, list[str], str | None]:
    trace: list[str] = []
    try:
        diff = canonicalize(prev - link.target)
    except TensorExprError as exc:
        return False, TensorExpr(), trace, str(exc)
    for call in link.rules:
        if call.rule not in catalog:
            return False, diff, trace, f"rule {call.rule} is not installed"
        try:
            diff, info = apply_rule_traced(diff, catalog[call.rule], call.selector)
        except TensorExprError as exc:
            trace.append(f"{call}: {exc}")
            return False, diff, trace, f"{call} failed: {exc}"
        trace.append(str(info))
    return diff.is_zero(), diff, trace, None


def verify_step(
    step: DerivationStep,
    catalog: Mapping[str, RewriteRule] | None = None,
    numeric_trials: int = 0,
) -> tuple[StepReport, dict[str, RewriteRule]]:
    """Verify every link of ``step``.  Returns the report and the catalog
    extended with the step's installs (unchanged if the step failed)."""
    cat = dict(BASE_CATALOG if catalog is None else catalog)
    reports = []
    for ci, chain in enumerate(step.chains):
        prev = chain.start
        for li, link in enumerate(chain.links):
            ok, resid, trace, err = verify_link(prev, link, cat)
            rep = LinkReport(ci, li, ok, len(resid.terms), [str(TensorExpr((t,))) for t in resid.terms], trace, err)
            family = chain.model or step.model
            if numeric_trials and family not in ("", "none") and not (_has_heat(prev) or _has_heat(link.target)):
                from .numeric import randomized_equal

                v = randomized_equal(prev, link.target, family, trials=numeric_trials)
                rep.numeric = v.to_json()
                rep.passed = rep.passed and v.passed
            reports.append(rep)
            prev = link.target
    passed = all(r.passed for r in reports)
    report = StepReport(step.id, passed, step.source, reports)
    if passed:
        for inst in step.installs:
            chain = step.chains[inst.chain]
            claim = chain.start - chain.links[-1].target
            given = TensorExpr((inst.template.pattern,)) - inst.template.replacement
            if not _proportional(given, claim):
                report.passed = False
                report.error = f"install {inst.name}: rule is not a multiple of the verified claim"
                return report, dict(BASE_CATALOG if catalog is None else catalog)
            cat[inst.name] = RewriteRule(inst.name, (inst.template,), model=step.model or "full",
                                         doc=f"installed by {step.id}")
            report.installed.append(inst.name)
    return report, cat


@dataclass
class ScriptReport:
    steps: list[StepReport]

    @property
    def passed(self) -> bool:
        return all(s.passed for s in self.steps)

    def to_json(self) -> dict:
        return {"passed": self.passed, "steps": [s.to_json() for s in self.steps]}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=2)

    def to_text(self) -> str:
        body = "\n".join(s.to_text() for s in self.steps)
        n_pass = sum(s.passed for s in self.steps)
        tail = f"{n_pass}/{len(self.steps)} steps passed"
        return f"{body}\n{tail}" if body else tail


def run_steps(steps: list[DerivationStep], numeric_trials: int = 0) -> ScriptReport:
    cat: dict[str, RewriteRule] = dict(BASE_CATALOG)
    out = []
    for st in steps:
        rep, cat = verify_step(st, cat, numeric_trials)
        out.append(rep)
    return ScriptReport(out)


def run_script(path: str | Path, numeric_trials: int = 0) -> ScriptReport:
    return run_steps(load_script(path), numeric_trials)


def bundled(name: str) -> Path:
    return Path(__file__).parent / "data" / name


__all__ = [
    "Chain",
    "DependencyError",
    "DerivationStep",
    "Install",
    "Link",
    "LinkReport",
    "RuleCall",
    "ScriptError",
    "ScriptReport",
    "StepReport",
    "bundled",
    "check_dependencies",
    "load_script",
    "parse_script",
    "run_script",
    "run_steps",
    "verify_link",
    "verify_step",
]
