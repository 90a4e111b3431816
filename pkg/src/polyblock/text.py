"""Textual IR: parser and printer.

Grammar (whitespace-insensitive, ``//`` comments to end of line)::

    block      := "block" "[" [index ("," index)*] "]" [":" int]
                  "(" tag* (constraint | refinement)* ")" "{" statement* "}"
    index      := name ":" int | name "=" affine
    tag        := "#" name
    constraint := affine ">=" "0"
    refinement := dir name "[" affine-list "]" [":" agg] dtype "(" ints ")" ":" "(" ints ")"
                  ["@" name "[" affine "]" ":" int]
    statement  := [int ":"] ( block
                            | "$"name "=" op "(" args ")"
                            | name "=" "store" "(" "$"name ")"
                            | "special" name "(" names ")" )

Ranged indexes must precede aliases. ``dir`` is one of ``in out inout none``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .ir import (
    AGGREGATIONS,
    DIRECTIONS,
    DTYPES,
    INTRINSICS,
    SPECIALS,
    AffineExpr,
    Block,
    Constraint,
    IndexDecl,
    Intrinsic,
    Location,
    Program,
    Refinement,
    SourceSpan,
    Special,
    format_affine,
)


class ParseError(Exception):
    def __init__(self, message: str, span: SourceSpan | None = None):
        super().__init__(message)
        self.message = message
        self.span = span

    def __str__(self) -> str:
        if self.span is None:
            return self.message
        return f"{self.span.line}:{self.span.column}: {self.message}"


class IRSyntaxError(ParseError):
    code = "SyntaxError"


class ScopeError(ParseError):
    code = "ScopeError"


_TOKEN = re.compile(
    r"(?P<ws>[ \t\r\n]+|//[^\n]*)"
    r"|(?P<int>\d+)"
    r"|(?P<temp>\$[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<name>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<tag>\#[A-Za-z0-9_:.\-]+)"
    r"|(?P<op>>=|[\[\](){}:,=+\-*@])"
)


@dataclass
class Tok:
    kind: str
    text: str
    span: SourceSpan


def tokenize(text: str) -> list[Tok]:
    toks = []
    pos = 0
    line, line_start = 1, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            span = SourceSpan(line, pos - line_start + 1, pos, pos + 1)
            raise IRSyntaxError(f"unexpected character {text[pos]!r}", span)
        kind = m.lastgroup
        span = SourceSpan(line, pos - line_start + 1, pos, m.end())
        if kind != "ws":
            toks.append(Tok(kind, m.group(), span))
        for i in range(pos, m.end()):
            if text[i] == "\n":
                line += 1
                line_start = i + 1
        pos = m.end()
    toks.append(Tok("eof", "", SourceSpan(line, pos - line_start + 1, pos, pos)))
    return toks


class _Parser:
    def __init__(self, text: str, check_scopes: bool):
        self.toks = tokenize(text)
        self.i = 0
        self.check_scopes = check_scopes

    @property
    def tok(self) -> Tok:
        return self.toks[self.i]

    def peek(self, k: int = 1) -> Tok:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def error(self, msg: str, tok: Tok | None = None):
        tok = tok or self.tok
        found = tok.text or "end of input"
        raise IRSyntaxError(f"{msg}, found {found!r}", tok.span)

    def at(self, text: str) -> bool:
        return self.tok.text == text and self.tok.kind in ("op", "name")

    def expect(self, text: str) -> Tok:
        if not self.at(text):
            self.error(f"expected {text!r}")
        t = self.tok
        self.i += 1
        return t

    def accept(self, text: str) -> bool:
        if self.at(text):
            self.i += 1
            return True
        return False

    def expect_kind(self, kind: str, what: str) -> Tok:
        if self.tok.kind != kind:
            self.error(f"expected {what}")
        t = self.tok
        self.i += 1
        return t

    def integer(self) -> int:
        neg = self.accept("-")
        v = int(self.expect_kind("int", "integer").text)
        return -v if neg else v

    def int_list(self) -> tuple[int, ...]:
        self.expect("(")
        vals = []
        if not self.at(")"):
            vals.append(self.integer())
            while self.accept(","):
                vals.append(self.integer())
        self.expect(")")
        return tuple(vals)

    # affine := term (("+"|"-") term)* ; term := int ["*" name] | name ["*" int]
    def affine(self) -> AffineExpr:
        sign = -1 if self.accept("-") else 1
        out = self.term() * sign
        while self.at("+") or self.at("-"):
            sign = 1 if self.tok.text == "+" else -1
            self.i += 1
            out = out + self.term() * sign
        return out

    def term(self) -> AffineExpr:
        if self.tok.kind == "int":
            v = int(self.tok.text)
            self.i += 1
            if self.accept("*"):
                return AffineExpr.var(self.expect_kind("name", "index name").text, v)
            return AffineExpr.const(v)
        if self.tok.kind == "name":
            name = self.tok.text
            self.i += 1
            if self.accept("*"):
                return AffineExpr.var(name, int(self.expect_kind("int", "integer").text))
            return AffineExpr.var(name)
        self.error("expected affine term")

    def check_names(self, expr: AffineExpr, scope: set[str], tok: Tok):
        if not self.check_scopes:
            return
        for n in expr.names:
            if n not in scope:
                raise ScopeError(f"index {n!r} is not declared in this block", tok.span)

    def block(self, parent_scope: set[str]) -> Block:
        start = self.expect("block")
        self.expect("[")
        indexes: list[IndexDecl] = []
        seen_alias = False
        if not self.at("]"):
            while True:
                name_tok = self.expect_kind("name", "index name")
                if self.accept(":"):
                    if seen_alias:
                        self.error("ranged indexes must precede aliases", name_tok)
                    indexes.append(IndexDecl(name_tok.text, range=self.integer()))
                elif self.accept("="):
                    at = self.tok
                    expr = self.affine()
                    self.check_names(expr, parent_scope, at)
                    indexes.append(IndexDecl(name_tok.text, alias=expr))
                    seen_alias = True
                else:
                    self.error("expected ':' or '=' after index name")
                if not self.accept(","):
                    break
        self.expect("]")
        count = None
        if self.accept(":"):
            count = self.integer()
        scope = {i.name for i in indexes}
        self.expect("(")
        tags = set()
        while self.tok.kind == "tag":
            tags.add(self.tok.text[1:])
            self.i += 1
        constraints, refinements = [], []
        while not self.at(")"):
            if self.tok.kind == "name" and self.tok.text in DIRECTIONS and self.peek().kind == "name":
                refinements.append(self.refinement(scope))
            else:
                at = self.tok
                expr = self.affine()
                self.expect(">=")
                if self.integer() != 0:
                    self.error("constraints must compare against 0", at)
                self.check_names(expr, scope, at)
                constraints.append(Constraint(expr, span=at.span))
        self.expect(")")
        self.expect("{")
        declared = {r.buffer for r in refinements}
        stmts = []
        while not self.at("}"):
            stmts.append(self.statement(scope, declared))
        end = self.expect("}")
        span = SourceSpan(start.span.line, start.span.column, start.span.start, end.span.end)
        return Block(
            tuple(indexes), tuple(constraints), tuple(refinements), tuple(stmts),
            frozenset(tags), count, span,
        )

    def refinement(self, scope: set[str]) -> Refinement:
        start = self.tok
        direction = self.expect_kind("name", "direction").text
        buffer = self.expect_kind("name", "buffer name").text
        self.expect("[")
        offsets = []
        if not self.at("]"):
            while True:
                at = self.tok
                e = self.affine()
                self.check_names(e, scope, at)
                offsets.append(e)
                if not self.accept(","):
                    break
        self.expect("]")
        agg = None
        if self.accept(":"):
            t = self.expect_kind("name", "aggregation")
            if t.text not in AGGREGATIONS:
                self.error("unknown aggregation", t)
            agg = t.text
        dt = self.expect_kind("name", "dtype")
        if dt.text not in DTYPES:
            self.error("unknown dtype", dt)
        sizes = self.int_list()
        self.expect(":")
        strides = self.int_list()
        if not (len(offsets) == len(sizes) == len(strides)):
            raise IRSyntaxError(
                f"refinement {buffer!r} has {len(offsets)} offsets, {len(sizes)} sizes, {len(strides)} strides",
                start.span,
            )
        location = None
        if self.accept("@"):
            unit = self.expect_kind("name", "memory unit").text
            self.expect("[")
            at = self.tok
            bank = self.affine()
            self.check_names(bank, scope, at)
            self.expect("]")
            self.expect(":")
            location = Location(unit, bank, self.integer())
        return Refinement(
            direction, buffer, tuple(offsets), sizes, strides, dt.text, agg, location, start.span
        )

    def statement(self, scope: set[str], declared: set[str]):
        if self.tok.kind == "int" and self.peek().text == ":":
            self.i += 2
        t = self.tok
        if self.at("block"):
            return self.block(scope)
        if self.at("special"):
            self.i += 1
            name = self.expect_kind("name", "special name")
            if name.text not in SPECIALS:
                self.error("unknown special", name)
            self.expect("(")
            args = []
            if not self.at(")"):
                while True:
                    a = self.expect_kind("name", "buffer name")
                    self._check_buffer(a, declared)
                    args.append(a.text)
                    if not self.accept(","):
                        break
            self.expect(")")
            return Special(name.text, tuple(args), t.span)
        if t.kind == "temp":
            self.i += 1
            self.expect("=")
            op = self.expect_kind("name", "intrinsic")
            if op.text not in INTRINSICS or op.text == "store":
                self.error("unknown intrinsic", op)
            self.expect("(")
            if op.text == "load":
                b = self.expect_kind("name", "buffer name")
                self._check_buffer(b, declared)
                self.expect(")")
                return Intrinsic("load", (), t.text, b.text, span=t.span)
            if op.text == "constant":
                v = self.integer()
                self.expect(")")
                return Intrinsic("constant", (), t.text, value=v, span=t.span)
            args = []
            if not self.at(")"):
                while True:
                    args.append(self.expect_kind("temp", "scalar temp").text)
                    if not self.accept(","):
                        break
            self.expect(")")
            return Intrinsic(op.text, tuple(args), t.text, span=t.span)
        if t.kind == "name":
            self._check_buffer(t, declared)
            self.i += 1
            self.expect("=")
            self.expect("store")
            self.expect("(")
            v = self.expect_kind("temp", "scalar temp").text
            self.expect(")")
            return Intrinsic("store", (v,), None, t.text, span=t.span)
        self.error("expected statement")

    def _check_buffer(self, tok: Tok, declared: set[str]):
        if self.check_scopes and tok.text not in declared:
            raise ScopeError(f"buffer {tok.text!r} is not declared in this block", tok.span)


def parse_program(text: str, check_scopes: bool = True) -> Program:
    p = _Parser(text, check_scopes)
    root = p.block(set())
    if p.tok.kind != "eof":
        p.error("expected end of input")
    if root.count is None:
        root = Block(root.indexes, root.constraints, root.refinements, root.statements,
                     root.tags, 1, root.span)
    return Program(root)


def parse_block(text: str, check_scopes: bool = False) -> Block:
    p = _Parser(text, check_scopes)
    b = p.block(set())
    if p.tok.kind != "eof":
        p.error("expected end of input")
    return b


# --------------------------------------------------------------------------
# Printer
# --------------------------------------------------------------------------


def _fmt_ints(xs) -> str:
    return "(" + ", ".join(str(x) for x in xs) + ")"


def format_refinement(r: Refinement) -> str:
    s = f"{r.direction} {r.buffer}[" + ", ".join(format_affine(o) for o in r.offsets) + "]"
    if r.agg is not None:
        s += f":{r.agg}"
    s += f" {r.dtype}{_fmt_ints(r.sizes)}:{_fmt_ints(r.strides)}"
    if r.location is not None:
        loc = r.location
        s += f" @{loc.unit}[{format_affine(loc.bank)}]:{loc.address}"
    return s


def format_statement(s) -> str:
    if isinstance(s, Special):
        return f"special {s.name}(" + ", ".join(s.args) + ")"
    if s.name == "store":
        return f"{s.buffer} = store({s.operands[0]})"
    if s.name == "load":
        return f"{s.result} = load({s.buffer})"
    if s.name == "constant":
        return f"{s.result} = constant({s.value})"
    return f"{s.result} = {s.name}(" + ", ".join(s.operands) + ")"


def print_block(b: Block, depth: int = 0) -> str:
    lines: list[str] = []
    _emit(b, depth, lines)
    return "\n".join(lines)


def _emit(b: Block, depth: int, lines: list[str]):
    pad = "\t" * depth
    idx = []
    for i in b.indexes:
        idx.append(f"{i.name}={format_affine(i.alias)}" if i.is_alias else f"{i.name}:{i.range}")
    head = f"block [{', '.join(idx)}]"
    if b.count is not None:
        head += f":{b.count}"
    lines.append(f"{pad}{head} (")
    for t in sorted(b.tags):
        lines.append(f"{pad}\t#{t}")
    for c in b.constraints:
        lines.append(f"{pad}\t{format_affine(c.expr, constant_first=True)} >= 0")
    for r in b.refinements:
        lines.append(f"{pad}\t{format_refinement(r)}")
    lines.append(f"{pad}) {{")
    for n, s in enumerate(b.statements):
        if isinstance(s, Block):
            lines.append(f"{pad}\t{n}:")
            _emit(s, depth + 1, lines)
        else:
            lines.append(f"{pad}\t{n}: {format_statement(s)}")
    lines.append(f"{pad}}}")


def print_program(p: Program) -> str:
    return print_block(p.root) + "\n"
