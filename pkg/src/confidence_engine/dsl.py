"""Plain-text model format (``.cid`` files).

A model is a sequence of statements::

    # comment
    variable p_rep : probability { prior jeffreys }
    variable mort  : probability = chain(m_rep, p_rep, m_norep)
    variable delta : difference = mort_a - mort_b
    study timi { on p_rep; successes 78; trials 118; }
    option zero_cell = half;
    option report = delta, mort;

Parsing never raises anything but :class:`ModelError`, whose diagnostics all
carry a :class:`SourceSpan` into the input.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Union

from .errors import ModelError
from .gaussian import VariableId
from .solver import Chain, CompiledModel, CompiledVariable, Difference, Evidence, Linear
from .transforms import HALF_CELL, PriorSpec, Scale, StudyArm, rct_summary

KEYWORDS = frozenset(
    {
        "variable", "study", "option", "probability", "difference", "real", "prior",
        "jeffreys", "normal", "chain", "on", "successes", "trials", "zero_cell", "half",
        "error", "report",
    }
)


@dataclass(frozen=True)
class SourceSpan:
    line: int
    column: int
    length: int
    offset: int = 0


@dataclass(frozen=True)
class Diagnostic:
    span: SourceSpan
    message: str

    def format(self, source: str = "<model>") -> str:
        return f"{source}:{self.span.line}:{self.span.column}: error: {self.message}"


@dataclass(frozen=True)
class Name:
    text: str
    span: SourceSpan


@dataclass(frozen=True)
class ChainExpr:
    m_rep: Name
    p_rep: Name
    m_norep: Name
    span: SourceSpan

    @property
    def args(self) -> tuple[Name, ...]:
        return (self.m_rep, self.p_rep, self.m_norep)


@dataclass(frozen=True)
class DiffExpr:
    left: Name
    right: Name
    span: SourceSpan

    @property
    def args(self) -> tuple[Name, ...]:
        return (self.left, self.right)


Expr = Union[ChainExpr, DiffExpr]


@dataclass(frozen=True)
class VariableDecl:
    name: Name
    scale: Scale
    prior: PriorSpec | None
    expr: Expr | None
    span: SourceSpan


@dataclass(frozen=True)
class StudyDecl:
    name: Name
    target: Name
    successes: int
    trials: int
    span: SourceSpan


@dataclass(frozen=True)
class OptionDecl:
    key: str
    # zero_cell: float or None ("error"); report: tuple of Names
    value: object
    span: SourceSpan


Declaration = Union[VariableDecl, StudyDecl, OptionDecl]


@dataclass(frozen=True)
class ModelSpec:
    declarations: tuple[Declaration, ...] = ()

    @property
    def variables(self) -> list[VariableDecl]:
        return [d for d in self.declarations if isinstance(d, VariableDecl)]

    @property
    def studies(self) -> list[StudyDecl]:
        return [d for d in self.declarations if isinstance(d, StudyDecl)]

    @property
    def zero_cell(self) -> float | None:
        value = HALF_CELL
        for d in self.declarations:
            if isinstance(d, OptionDecl) and d.key == "zero_cell":
                value = d.value
        return value

    @property
    def report(self) -> tuple[Name, ...]:
        names: tuple[Name, ...] = ()
        for d in self.declarations:
            if isinstance(d, OptionDecl) and d.key == "report":
                names = d.value
        return names


# --------------------------------------------------------------------------
# Lexing


@dataclass(frozen=True)
class Token:
    kind: str  # ident | number | punct | eof
    text: str
    span: SourceSpan


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+)
  | (?P<comment>\#[^\n]*)
  | (?P<number>(?:[0-9]+(?:\.[0-9]*)?|\.[0-9]+)(?:[eE][+-]?[0-9]+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<punct>[:=\{\}\(\),;\-])
    """,
    re.VERBOSE,
)


class _Source:
    def __init__(self, text: str):
        self.text = text
        self._line_starts = [0] + [m.end() for m in re.finditer("\n", text)]

    def span(self, offset: int, length: int) -> SourceSpan:
        offset = max(0, min(offset, len(self.text)))
        length = max(0, min(length, len(self.text) - offset))
        lo, hi = 0, len(self._line_starts) - 1
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if self._line_starts[mid] <= offset:
                lo = mid
            else:
                hi = mid - 1
        return SourceSpan(lo + 1, offset - self._line_starts[lo] + 1, length, offset)

    def join(self, a: SourceSpan, b: SourceSpan) -> SourceSpan:
        return self.span(a.offset, b.offset + b.length - a.offset)


def _lex(src: _Source, diags: list[Diagnostic]) -> list[Token]:
    text = src.text
    tokens: list[Token] = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            diags.append(Diagnostic(src.span(pos, 1), f"unexpected character {text[pos]!r}"))
            pos += 1
            continue
        kind = m.lastgroup
        if kind not in ("ws", "comment"):
            tokens.append(Token(kind, m.group(), src.span(pos, m.end() - pos)))
        pos = m.end()
    tokens.append(Token("eof", "", src.span(len(text), 0)))
    return tokens


# --------------------------------------------------------------------------
# Parsing


class _Syntax(Exception):
    def __init__(self, diag: Diagnostic):
        self.diag = diag


class _Parser:
    def __init__(self, src: _Source, tokens: list[Token]):
        self.src = src
        self.toks = tokens
        self.i = 0

    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def advance(self) -> Token:
        t = self.toks[self.i]
        if t.kind != "eof":
            self.i += 1
        return t

    def fail(self, message: str, tok: Token | None = None):
        tok = tok or self.tok
        found = "end of input" if tok.kind == "eof" else repr(tok.text)
        raise _Syntax(Diagnostic(tok.span, f"{message}, found {found}"))

    def expect(self, text: str) -> Token:
        if self.tok.text != text or self.tok.kind == "number":
            self.fail(f"expected {text!r}")
        return self.advance()

    def accept(self, text: str) -> Token | None:
        if self.tok.text == text and self.tok.kind != "number":
            return self.advance()
        return None

    def ident(self, what: str) -> Name:
        t = self.tok
        if t.kind != "ident":
            self.fail(f"expected {what}")
        if t.text in KEYWORDS:
            self.fail(f"expected {what} (reserved word cannot be used as a name)")
        self.advance()
        return Name(t.text, t.span)

    def integer(self, what: str) -> int:
        t = self.tok
        if t.kind != "number" or not t.text.isdigit():
            self.fail(f"expected a nonnegative integer for {what}")
        if len(t.text) > 15:
            raise _Syntax(Diagnostic(t.span, f"{what} value is too large"))
        self.advance()
        return int(t.text)

    def real(self, what: str) -> float:
        neg = self.accept("-")
        t = self.tok
        if t.kind != "number":
            self.fail(f"expected a number for {what}")
        self.advance()
        value = float(t.text)
        if not math.isfinite(value):
            raise _Syntax(Diagnostic(t.span, f"{what} is not a finite number"))
        return -value if neg else value

    def model(self, diags: list[Diagnostic]) -> list[Declaration]:
        decls: list[Declaration] = []
        while self.tok.kind != "eof":
            start = self.i
            try:
                decls.append(self.statement())
            except _Syntax as err:
                diags.append(err.diag)
                if self.i == start:
                    self.advance()
                self.recover()
        return decls

    def recover(self):
        while self.tok.kind != "eof" and self.tok.text not in ("variable", "study", "option"):
            self.advance()

    def statement(self) -> Declaration:
        t = self.tok
        if t.kind == "ident" and t.text == "variable":
            return self.vardecl()
        if t.kind == "ident" and t.text == "study":
            return self.studydecl()
        if t.kind == "ident" and t.text == "option":
            return self.optiondecl()
        self.fail("expected 'variable', 'study' or 'option'")

    def vardecl(self) -> VariableDecl:
        first = self.advance()
        name = self.ident("a variable name")
        self.expect(":")
        st = self.tok
        try:
            scale = Scale(st.text) if st.kind == "ident" else None
        except ValueError:
            scale = None
        if scale is None:
            self.fail("expected a scale ('probability', 'difference' or 'real')")
        last = self.advance()
        prior: PriorSpec | None = None
        expr: Expr | None = None
        if self.accept("="):
            expr = self.expr()
            last_span = expr.span
        elif self.accept("{"):
            self.expect("prior")
            prior = self.prior()
            last_span = self.expect("}").span
        else:
            last_span = last.span
        semi = self.accept(";")
        if semi is not None:
            last_span = semi.span
        if prior is None and expr is None:
            prior = PriorSpec.jeffreys()
        return VariableDecl(name, scale, prior, expr, self.src.join(first.span, last_span))

    def prior(self) -> PriorSpec:
        if self.accept("jeffreys"):
            return PriorSpec.jeffreys()
        kw = self.tok
        self.expect("normal")
        self.expect("(")
        mean = self.real("the prior mean")
        self.expect(",")
        var = self.real("the prior variance")
        close = self.expect(")")
        if var < 0:
            raise _Syntax(
                Diagnostic(self.src.join(kw.span, close.span), "prior variance must be nonnegative")
            )
        return PriorSpec.normal(mean, var)

    def expr(self) -> Expr:
        t = self.tok
        if t.kind == "ident" and t.text == "chain":
            self.advance()
            self.expect("(")
            a = self.ident("an argument name")
            self.expect(",")
            b = self.ident("an argument name")
            self.expect(",")
            c = self.ident("an argument name")
            close = self.expect(")")
            return ChainExpr(a, b, c, self.src.join(t.span, close.span))
        left = self.ident("'chain(...)' or a difference 'a - b'")
        self.expect("-")
        right = self.ident("an argument name")
        return DiffExpr(left, right, self.src.join(left.span, right.span))

    def studydecl(self) -> StudyDecl:
        first = self.advance()
        name = self.ident("a study name")
        self.expect("{")
        self.expect("on")
        target = self.ident("the observed variable")
        self.expect(";")
        self.expect("successes")
        s = self.integer("successes")
        self.expect(";")
        self.expect("trials")
        n = self.integer("trials")
        self.expect(";")
        close = self.expect("}")
        return StudyDecl(name, target, s, n, self.src.join(first.span, close.span))

    def optiondecl(self) -> OptionDecl:
        first = self.advance()
        key = self.tok
        if key.text == "zero_cell":
            self.advance()
            self.expect("=")
            vt = self.tok
            if self.accept("half"):
                value: object = HALF_CELL
            elif self.accept("error"):
                value = None
            elif vt.kind == "number":
                value = self.real("the zero-cell constant")
                if not value > 0:
                    raise _Syntax(Diagnostic(vt.span, "zero-cell constant must be positive"))
            else:
                self.fail("expected 'half', 'error' or a positive number")
        elif key.text == "report":
            self.advance()
            self.expect("=")
            names = [self.ident("a variable name")]
            while self.accept(","):
                names.append(self.ident("a variable name"))
            value = tuple(names)
        else:
            self.fail("expected 'zero_cell' or 'report'")
        semi = self.expect(";")
        return OptionDecl(key.text, value, self.src.join(first.span, semi.span))


# --------------------------------------------------------------------------
# Semantic checks


def _expected_scale(decl: VariableDecl, scales: dict[str, Scale]) -> tuple[Scale, ...] | None:
    """Allowed declared scales for ``decl.expr`` given argument scales."""
    arg_scales = [scales.get(a.text) for a in decl.expr.args]
    if isinstance(decl.expr, ChainExpr):
        if all(s is Scale.PROBABILITY for s in arg_scales):
            return (Scale.PROBABILITY,)
        return None
    if all(s is Scale.PROBABILITY for s in arg_scales):
        return (Scale.DIFFERENCE,)
    if all(s is Scale.REAL for s in arg_scales):
        return (Scale.REAL,)
    return None


def analyze(spec: ModelSpec) -> list[Diagnostic]:
    """Name resolution, scale rules, study sanity and acyclicity."""
    diags: list[Diagnostic] = []
    seen: dict[str, Name] = {}
    scales: dict[str, Scale] = {}
    for d in spec.declarations:
        if isinstance(d, (VariableDecl, StudyDecl)):
            if d.name.text in seen:
                diags.append(Diagnostic(d.name.span, f"duplicate name {d.name.text!r}"))
            else:
                seen[d.name.text] = d.name
        if isinstance(d, VariableDecl) and d.name.text not in scales:
            scales[d.name.text] = d.scale

    variables = {}
    for v in spec.variables:
        variables.setdefault(v.name.text, v)

    for v in spec.variables:
        if v.expr is None:
            continue
        unknown = [a for a in v.expr.args if a.text not in scales]
        for a in unknown:
            diags.append(Diagnostic(a.span, f"unknown variable {a.text!r}"))
        if unknown:
            continue
        allowed = _expected_scale(v, scales)
        arg_desc = ", ".join(f"{a.text}: {scales[a.text]}" for a in v.expr.args)
        if allowed is None:
            kind = "chain" if isinstance(v.expr, ChainExpr) else "difference"
            need = "probability" if kind == "chain" else "probability or real (not mixed)"
            diags.append(
                Diagnostic(
                    v.expr.span,
                    f"scale mismatch: {kind} arguments must be {need} ({arg_desc})",
                )
            )
        elif v.scale not in allowed:
            diags.append(
                Diagnostic(
                    v.expr.span,
                    f"scale mismatch: expression yields {allowed[0]} but "
                    f"{v.name.text!r} is declared {v.scale}",
                )
            )

    # Cycles among function references.
    state: dict[str, int] = {}
    reported: set[str] = set()

    def visit(name: str, stack: list[str]):
        state[name] = 1
        v = variables[name]
        for a in v.expr.args if v.expr else ():
            if a.text not in variables:
                continue
            if state.get(a.text) == 1:
                path = stack + [name]
                cyc = path[path.index(a.text):]
                for member in cyc:
                    if member not in reported:
                        reported.add(member)
                        mv = variables[member]
                        diags.append(
                            Diagnostic(
                                mv.expr.span if mv.expr else mv.name.span,
                                f"cycle in definitions: {' -> '.join(cyc + [a.text])}",
                            )
                        )
                        break
            elif a.text not in state:
                visit(a.text, stack + [name])
        state[name] = 2

    for name in variables:
        if name not in state:
            visit(name, [])

    zero_cell = spec.zero_cell
    for s in spec.studies:
        if s.target.text not in scales:
            diags.append(Diagnostic(s.target.span, f"unknown variable {s.target.text!r}"))
        elif scales[s.target.text] is not Scale.PROBABILITY:
            diags.append(
                Diagnostic(
                    s.target.span,
                    f"scale mismatch: study {s.name.text!r} observes {s.target.text!r}, "
                    f"which is {scales[s.target.text]} rather than probability",
                )
            )
        if s.trials < 1:
            diags.append(Diagnostic(s.span, "trials must be at least 1"))
        elif s.successes > s.trials:
            diags.append(
                Diagnostic(s.span, f"successes ({s.successes}) exceed trials ({s.trials})")
            )
        elif zero_cell is None and s.successes in (0, s.trials):
            diags.append(
                Diagnostic(
                    s.span,
                    f"study {s.name.text!r} has an empty cell and option zero_cell = error",
                )
            )

    seen_opts: set[str] = set()
    for d in spec.declarations:
        if isinstance(d, OptionDecl):
            if d.key in seen_opts:
                diags.append(Diagnostic(d.span, f"option {d.key!r} given more than once"))
            seen_opts.add(d.key)
            if d.key == "report":
                for n in d.value:
                    if n.text not in scales:
                        diags.append(Diagnostic(n.span, f"unknown variable {n.text!r}"))
    return diags


def parse(text: str | bytes) -> ModelSpec:
    """Parse model text. Raises :class:`ModelError` listing every diagnostic."""
    spec, diags = parse_with_diagnostics(text)
    if diags:
        raise ModelError(diags)
    return spec


def parse_with_diagnostics(text: str | bytes) -> tuple[ModelSpec | None, list[Diagnostic]]:
    if isinstance(text, (bytes, bytearray)):
        try:
            text = bytes(text).decode("utf-8")
        except UnicodeDecodeError as err:
            prefix = bytes(text[: err.start]).decode("utf-8", errors="replace")
            src = _Source(prefix)
            return None, [Diagnostic(src.span(len(prefix), 0), "input is not valid UTF-8")]
    src = _Source(text)
    diags: list[Diagnostic] = []
    tokens = _lex(src, diags)
    decls = _Parser(src, tokens).model(diags)
    spec = ModelSpec(tuple(decls))
    if not diags:
        diags.extend(analyze(spec))
    diags.sort(key=lambda d: d.span.offset)
    return (spec if not diags else None), diags


# --------------------------------------------------------------------------
# Serialization and compilation


def _num(x: float) -> str:
    return repr(float(x))


def serialize(spec: ModelSpec) -> str:
    """Canonical text for ``spec``; ``parse(serialize(spec))`` compiles identically."""
    lines = ["# confidence-engine model"]
    for d in spec.declarations:
        if isinstance(d, VariableDecl):
            head = f"variable {d.name.text} : {d.scale}"
            if isinstance(d.expr, ChainExpr):
                a, b, c = (x.text for x in d.expr.args)
                lines.append(f"{head} = chain({a}, {b}, {c})")
            elif isinstance(d.expr, DiffExpr):
                lines.append(f"{head} = {d.expr.left.text} - {d.expr.right.text}")
            elif d.prior is None or d.prior.kind == "jeffreys":
                lines.append(f"{head} {{ prior jeffreys }}")
            else:
                lines.append(
                    f"{head} {{ prior normal({_num(d.prior.mean)}, {_num(d.prior.variance)}) }}"
                )
        elif isinstance(d, StudyDecl):
            lines.append(
                f"study {d.name.text} {{ on {d.target.text}; "
                f"successes {d.successes}; trials {d.trials}; }}"
            )
        elif d.key == "zero_cell":
            if d.value is None:
                value = "error"
            elif d.value == HALF_CELL:
                value = "half"
            else:
                value = _num(d.value)
            lines.append(f"option zero_cell = {value};")
        else:
            lines.append(f"option report = {', '.join(n.text for n in d.value)};")
    return "\n".join(lines) + "\n"


def compile_model(spec: ModelSpec) -> CompiledModel:
    """Resolve names and reduce studies to Gaussian evidence."""
    diags = analyze(spec)
    if diags:
        raise ModelError(diags)
    ids = {v.name.text: VariableId(i, v.name.text) for i, v in enumerate(spec.variables)}
    variables = []
    for v in spec.variables:
        vid = ids[v.name.text]
        if v.expr is None:
            variables.append(CompiledVariable(vid, v.scale, prior=v.prior))
            continue
        args = [ids[a.text] for a in v.expr.args]
        if isinstance(v.expr, ChainExpr):
            fn = Chain(*args)
        elif v.scale is Scale.REAL:
            fn = Linear(tuple(args), (1.0, -1.0))
        else:
            fn = Difference(*args)
        variables.append(CompiledVariable(vid, v.scale, function=fn))
    zero_cell = spec.zero_cell
    evidence = []
    for s in spec.studies:
        arm = StudyArm(s.successes, s.trials, ids[s.target.text])
        evidence.append(Evidence(s.name.text, arm.target, rct_summary(arm, zero_cell), arm))
    report = tuple(ids[n.text] for n in spec.report)
    return CompiledModel(tuple(variables), tuple(evidence), zero_cell, report)


def load(text: str | bytes) -> CompiledModel:
    return compile_model(parse(text))
