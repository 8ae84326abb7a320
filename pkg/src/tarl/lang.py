"""MiniBot: the small indentation-structured controller language.

MiniBot is the subset of Python needed to write a single-node pub/sub robot
controller: function definitions, globals, ``while``/``if``/``try``, scalar
arithmetic and calls.  ``import`` and ``from`` lines are accepted and skipped.

AST nodes are frozen dataclasses.  Source positions are excluded from
equality, so two programs compare equal when they are structurally identical
regardless of layout.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Iterator, Union

from tarl.errors import ParseError

# ---------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class Num:
    text: str
    value: float
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Bool:
    value: bool
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Str:
    raw: str  # including quotes
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)

    @property
    def value(self) -> str:
        return self.raw[1:-1]


@dataclass(frozen=True)
class Name:
    id: str
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Attr:
    parts: tuple[str, ...]
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)

    @property
    def root(self) -> str:
        return self.parts[0]

    @property
    def dotted(self) -> str:
        return ".".join(self.parts)


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Compare:
    op: str
    left: "Expr"
    right: "Expr"
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class BoolOp:
    op: str
    left: "Expr"
    right: "Expr"
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Unary:
    op: str  # "-" or "not"
    operand: "Expr"
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Call:
    func: Union[Name, Attr]
    args: tuple["Expr", ...]
    keywords: tuple[tuple[str, "Expr"], ...] = ()
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


Expr = Union[Num, Bool, Str, Name, Attr, BinOp, Compare, BoolOp, Unary, Call]
Target = Union[Name, Attr]


@dataclass(frozen=True)
class FuncDef:
    name: str
    params: tuple[str, ...]
    body: tuple["Stmt", ...]
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Assign:
    target: Target
    value: Expr
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class MultiAssign:
    targets: tuple[Target, ...]
    values: tuple[Expr, ...]
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Global:
    names: tuple[str, ...]
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class While:
    test: Expr
    body: tuple["Stmt", ...]
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class If:
    test: Expr
    body: tuple["Stmt", ...]
    orelse: tuple["Stmt", ...] = ()
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)
    else_line: int | None = field(default=None, compare=False)


@dataclass(frozen=True)
class TryExcept:
    body: tuple["Stmt", ...]
    exc: str
    handler: tuple["Stmt", ...]
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)
    except_line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class ExprStmt:
    expr: Expr
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Pass:
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


Stmt = Union[FuncDef, Assign, MultiAssign, Global, While, If, TryExcept, ExprStmt, Pass]


@dataclass(frozen=True)
class Program:
    statements: tuple[Stmt, ...]
    ignored_lines: tuple[int, ...] = field(default=(), compare=False)

    @property
    def entry(self) -> If | None:
        for stmt in self.statements:
            if isinstance(stmt, If) and is_main_guard(stmt):
                return stmt
        return None

    def functions(self) -> dict[str, FuncDef]:
        return {s.name: s for s in walk_statements(self.statements) if isinstance(s, FuncDef)}


@dataclass(frozen=True)
class SourceFile:
    text: str
    path: str = "<string>"

    def lines(self) -> list[str]:
        return self.text.split("\n")


def is_main_guard(stmt: Stmt) -> bool:
    if not isinstance(stmt, If):
        return False
    t = stmt.test
    return (
        isinstance(t, Compare)
        and t.op == "=="
        and isinstance(t.left, Name)
        and t.left.id == "__name__"
        and isinstance(t.right, Str)
        and t.right.value == "__main__"
    )


def child_blocks(stmt: Stmt) -> list[tuple[Stmt, ...]]:
    if isinstance(stmt, (FuncDef, While)):
        return [stmt.body]
    if isinstance(stmt, If):
        return [stmt.body, stmt.orelse]
    if isinstance(stmt, TryExcept):
        return [stmt.body, stmt.handler]
    return []


def walk_statements(stmts) -> Iterator[Stmt]:
    """Pre-order walk over statements, descending into every block."""
    for s in stmts:
        yield s
        for block in child_blocks(s):
            yield from walk_statements(block)


def walk_expr(e: Expr) -> Iterator[Expr]:
    yield e
    if isinstance(e, (BinOp, Compare, BoolOp)):
        yield from walk_expr(e.left)
        yield from walk_expr(e.right)
    elif isinstance(e, Unary):
        yield from walk_expr(e.operand)
    elif isinstance(e, Call):
        yield from walk_expr(e.func)
        for a in e.args:
            yield from walk_expr(a)
        for _, v in e.keywords:
            yield from walk_expr(v)


def stmt_exprs(stmt: Stmt) -> list[Expr]:
    """Expressions evaluated by the statement itself (not its nested blocks)."""
    if isinstance(stmt, Assign):
        return [stmt.target, stmt.value]
    if isinstance(stmt, MultiAssign):
        return list(stmt.targets) + list(stmt.values)
    if isinstance(stmt, (While, If)):
        return [stmt.test]
    if isinstance(stmt, ExprStmt):
        return [stmt.expr]
    return []


# ---------------------------------------------------------------------------
# Lexer

KEYWORDS = {
    "def", "while", "if", "else", "try", "except", "global", "pass",
    "True", "False", "and", "or", "not",
}

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t]+)
  | (?P<comment>\#.*)
  | (?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<str>'[^'\n]*'|"[^"\n]*")
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>==|!=|<=|>=|[-+*/<>=(),:.])
    """,
    re.VERBOSE,
)


@dataclass
class Token:
    kind: str  # num, str, name, kw, op
    text: str
    line: int
    col: int


@dataclass
class LogicalLine:
    line: int
    indent: int
    tokens: list[Token]


def tokenize_line(text: str, lineno: int) -> list[Token]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unknown token {text[pos]!r}", lineno, pos + 1)
        kind = m.lastgroup
        if kind == "name" and m.group() in KEYWORDS:
            kind = "kw"
        if kind not in ("ws", "comment"):
            tokens.append(Token(kind, m.group(), lineno, pos + 1))
        pos = m.end()
    return tokens


def logical_lines(source: SourceFile) -> tuple[list[LogicalLine], list[int]]:
    """Split source into non-blank lines; returns (lines, skipped import lines)."""
    out, ignored = [], []
    for i, raw in enumerate(source.lines(), start=1):
        raw = raw.rstrip("\r")
        stripped = raw.lstrip(" \t")
        if not stripped or stripped.startswith("#"):
            continue
        lead = raw[: len(raw) - len(stripped)]
        if "\t" in lead:
            raise ParseError("tab in indentation", i, 1)
        tokens = tokenize_line(stripped, i)
        for t in tokens:
            t.col += len(lead)
        if tokens[0].kind == "name" and tokens[0].text in ("import", "from"):
            ignored.append(i)
            continue
        out.append(LogicalLine(i, len(lead), tokens))
    return out, ignored


# ---------------------------------------------------------------------------
# Parser


class _ExprParser:
    def __init__(self, tokens: list[Token], line: int):
        self.toks = tokens
        self.i = 0
        self.line = line

    def peek(self, offset: int = 0) -> Token | None:
        j = self.i + offset
        return self.toks[j] if j < len(self.toks) else None

    def at(self, *texts: str) -> bool:
        t = self.peek()
        return t is not None and t.kind in ("op", "kw") and t.text in texts

    def take(self) -> Token:
        t = self.peek()
        if t is None:
            raise ParseError("unexpected end of line", self.line, self._end_col())
        self.i += 1
        return t

    def expect(self, text: str) -> Token:
        t = self.peek()
        if t is None or t.text != text or t.kind not in ("op", "kw"):
            found = "end of line" if t is None else repr(t.text)
            col = self._end_col() if t is None else t.col
            raise ParseError(f"expected {text!r}, found {found}", self.line, col)
        self.i += 1
        return t

    def _end_col(self) -> int:
        if not self.toks:
            return 1
        last = self.toks[-1]
        return last.col + len(last.text)

    def done(self) -> bool:
        return self.i >= len(self.toks)

    # precedence climbing, loosest first
    def expr(self) -> Expr:
        return self.or_expr()

    def or_expr(self) -> Expr:
        left = self.and_expr()
        while self.at("or"):
            t = self.take()
            left = BoolOp("or", left, self.and_expr(), t.line, t.col)
        return left

    def and_expr(self) -> Expr:
        left = self.not_expr()
        while self.at("and"):
            t = self.take()
            left = BoolOp("and", left, self.not_expr(), t.line, t.col)
        return left

    def not_expr(self) -> Expr:
        if self.at("not"):
            t = self.take()
            return Unary("not", self.not_expr(), t.line, t.col)
        return self.comparison()

    def comparison(self) -> Expr:
        left = self.additive()
        if self.at("<", ">", "<=", ">=", "==", "!="):
            t = self.take()
            left = Compare(t.text, left, self.additive(), t.line, t.col)
            if self.at("<", ">", "<=", ">=", "==", "!="):
                t = self.peek()
                raise ParseError("chained comparisons are not supported", t.line, t.col)
        return left

    def additive(self) -> Expr:
        left = self.multiplicative()
        while self.at("+", "-"):
            t = self.take()
            left = BinOp(t.text, left, self.multiplicative(), t.line, t.col)
        return left

    def multiplicative(self) -> Expr:
        left = self.unary()
        while self.at("*", "/"):
            t = self.take()
            left = BinOp(t.text, left, self.unary(), t.line, t.col)
        return left

    def unary(self) -> Expr:
        if self.at("-"):
            t = self.take()
            return Unary("-", self.unary(), t.line, t.col)
        return self.atom()

    def atom(self) -> Expr:
        t = self.take()
        if t.kind == "num":
            return Num(t.text, float(t.text), t.line, t.col)
        if t.kind == "str":
            return Str(t.text, t.line, t.col)
        if t.kind == "kw" and t.text in ("True", "False"):
            return Bool(t.text == "True", t.line, t.col)
        if t.kind == "op" and t.text == "(":
            inner = self.expr()
            self.expect(")")
            return inner
        if t.kind == "name":
            ref = self.dotted_rest(t)
            if self.at("("):
                return self.call_rest(ref)
            return ref
        raise ParseError(f"unexpected token {t.text!r}", t.line, t.col)

    def dotted_rest(self, first: Token) -> Name | Attr:
        parts = [first.text]
        while self.at("."):
            self.take()
            t = self.take()
            if t.kind != "name":
                raise ParseError("expected attribute name", t.line, t.col)
            parts.append(t.text)
        if len(parts) == 1:
            return Name(first.text, first.line, first.col)
        return Attr(tuple(parts), first.line, first.col)

    def call_rest(self, func: Name | Attr) -> Call:
        self.expect("(")
        args, kwargs = [], []
        if not self.at(")"):
            while True:
                t0, t1 = self.peek(), self.peek(1)
                if (
                    t0 is not None and t0.kind == "name"
                    and t1 is not None and t1.kind == "op" and t1.text == "="
                ):
                    self.i += 2
                    kwargs.append((t0.text, self.expr()))
                else:
                    if kwargs:
                        raise ParseError("positional argument after keyword", t0.line, t0.col)
                    args.append(self.expr())
                if not self.at(","):
                    break
                self.take()
        self.expect(")")
        return Call(func, tuple(args), tuple(kwargs), func.line, func.col)


class _Parser:
    def __init__(self, lines: list[LogicalLine]):
        self.lines = lines
        self.i = 0

    def block(self, indent: int) -> list[Stmt]:
        stmts = []
        while self.i < len(self.lines):
            ln = self.lines[self.i]
            if ln.indent < indent:
                break
            if ln.indent > indent:
                raise ParseError("unexpected indent", ln.line, 1)
            stmts.append(self.statement(ln, indent))
        return stmts

    def suite(self, header: LogicalLine, rest: list[Token], indent: int) -> tuple[Stmt, ...]:
        """Body after a ``:``; either inline simple statement or an indented block."""
        if rest:
            inline = LogicalLine(header.line, indent + 1, rest)
            return (self.simple(inline, rest),)
        if self.i >= len(self.lines) or self.lines[self.i].indent <= indent:
            raise ParseError("expected an indented block", header.line, len(header.tokens) + 1)
        body = self.block(self.lines[self.i].indent)
        if self.i < len(self.lines) and self.lines[self.i].indent > indent:
            ln = self.lines[self.i]
            raise ParseError("inconsistent dedent", ln.line, 1)
        return tuple(body)

    @staticmethod
    def split_colon(ln: LogicalLine, start: int) -> tuple[list[Token], list[Token]]:
        depth = 0
        for j in range(start, len(ln.tokens)):
            t = ln.tokens[j]
            if t.kind == "op":
                if t.text == "(":
                    depth += 1
                elif t.text == ")":
                    depth -= 1
                elif t.text == ":" and depth == 0:
                    return ln.tokens[start:j], ln.tokens[j + 1:]
        last = ln.tokens[-1]
        raise ParseError("expected ':'", ln.line, last.col + len(last.text))

    def full_expr(self, tokens: list[Token], line: int, col: int) -> Expr:
        if not tokens:
            raise ParseError("expected expression", line, col)
        p = _ExprParser(tokens, line)
        e = p.expr()
        if not p.done():
            t = p.peek()
            raise ParseError(f"unexpected token {t.text!r}", t.line, t.col)
        return e

    def statement(self, ln: LogicalLine, indent: int) -> Stmt:
        self.i += 1
        first = ln.tokens[0]
        if first.kind == "kw":
            kw = first.text
            if kw == "def":
                return self.funcdef(ln, indent)
            if kw in ("while", "if"):
                cond, rest = self.split_colon(ln, 1)
                test = self.full_expr(cond, ln.line, first.col + len(kw) + 1)
                body = self.suite(ln, rest, indent)
                if kw == "while":
                    return While(test, body, ln.line, first.col)
                orelse, else_line = (), None
                nxt = self.lines[self.i] if self.i < len(self.lines) else None
                if nxt is not None and nxt.indent == indent and nxt.tokens[0].text == "else" \
                        and nxt.tokens[0].kind == "kw":
                    self.i += 1
                    _, erest = self.split_colon(nxt, 1)
                    orelse, else_line = self.suite(nxt, erest, indent), nxt.line
                return If(test, body, orelse, ln.line, first.col, else_line)
            if kw == "try":
                head, rest = self.split_colon(ln, 1)
                if head:
                    raise ParseError("unexpected token after 'try'", ln.line, head[0].col)
                body = self.suite(ln, rest, indent)
                nxt = self.lines[self.i] if self.i < len(self.lines) else None
                if nxt is None or nxt.indent != indent or nxt.tokens[0].text != "except":
                    raise ParseError("'try' without 'except'", ln.line, first.col)
                self.i += 1
                exc_toks, erest = self._except_header(nxt)
                if not exc_toks or exc_toks[0].kind != "name":
                    raise ParseError("expected exception name", nxt.line, nxt.tokens[0].col + 7)
                exc = _ExprParser(exc_toks, nxt.line)
                ref = exc.dotted_rest(exc.take())
                if not exc.done():
                    t = exc.peek()
                    raise ParseError(f"unexpected token {t.text!r}", t.line, t.col)
                name = ref.id if isinstance(ref, Name) else ref.dotted
                handler = self.suite(nxt, erest, indent)
                return TryExcept(body, name, handler, ln.line, first.col, nxt.line)
            if kw == "except":
                raise ParseError("'except' without 'try'", ln.line, first.col)
            if kw == "else":
                raise ParseError("'else' without 'if'", ln.line, first.col)
        stmt = self.simple(ln, ln.tokens)
        return stmt

    def _except_header(self, ln: LogicalLine) -> tuple[list[Token], list[Token]]:
        # the trailing ':' is optional on an except clause
        try:
            return self.split_colon(ln, 1)
        except ParseError:
            return ln.tokens[1:], []

    def funcdef(self, ln: LogicalLine, indent: int) -> FuncDef:
        toks = ln.tokens
        if len(toks) < 2 or toks[1].kind != "name":
            raise ParseError("expected function name", ln.line, toks[0].col + 4)
        head, rest = self.split_colon(ln, 2)
        p = _ExprParser(head, ln.line)
        p.expect("(")
        params = []
        if not p.at(")"):
            while True:
                t = p.take()
                if t.kind != "name":
                    raise ParseError("expected parameter name", t.line, t.col)
                params.append(t.text)
                if not p.at(","):
                    break
                p.take()
        p.expect(")")
        if not p.done():
            t = p.peek()
            raise ParseError(f"unexpected token {t.text!r}", t.line, t.col)
        body = self.suite(ln, rest, indent)
        return FuncDef(toks[1].text, tuple(params), body, ln.line, toks[0].col)

    def simple(self, ln: LogicalLine, toks: list[Token]) -> Stmt:
        first = toks[0]
        if first.kind == "kw" and first.text == "pass":
            if len(toks) > 1:
                raise ParseError("unexpected token after 'pass'", ln.line, toks[1].col)
            return Pass(ln.line, first.col)
        if first.kind == "kw" and first.text == "global":
            names = []
            rest = toks[1:]
            for j, t in enumerate(rest):
                want_name = j % 2 == 0
                if want_name and t.kind != "name":
                    raise ParseError("expected identifier", t.line, t.col)
                if not want_name and t.text != ",":
                    raise ParseError("expected ','", t.line, t.col)
                if want_name:
                    names.append(t.text)
            if not names or len(rest) % 2 == 0:
                raise ParseError("malformed global statement", ln.line, first.col)
            return Global(tuple(names), ln.line, first.col)
        if first.kind == "kw" and first.text in ("def", "while", "if", "try", "else", "except"):
            raise ParseError(f"compound statement {first.text!r} not allowed here", ln.line, first.col)

        eq = [j for j, t in enumerate(toks) if t.kind == "op" and t.text == "=" and self._depth(toks, j) == 0]
        if not eq:
            return ExprStmt(self.full_expr(toks, ln.line, first.col), ln.line, first.col)
        if len(eq) > 1:
            t = toks[eq[1]]
            raise ParseError("chained assignment is not supported", t.line, t.col)
        lhs, rhs = toks[: eq[0]], toks[eq[0] + 1:]
        targets = [self._target(part, ln) for part in self._split_commas(lhs, ln)]
        values = [self.full_expr(part, ln.line, toks[eq[0]].col + 1) for part in self._split_commas(rhs, ln)]
        if len(targets) != len(values):
            raise ParseError(
                f"assignment arity mismatch ({len(targets)} targets, {len(values)} values)",
                ln.line, toks[eq[0]].col,
            )
        if len(targets) == 1:
            return Assign(targets[0], values[0], ln.line, first.col)
        return MultiAssign(tuple(targets), tuple(values), ln.line, first.col)

    @staticmethod
    def _depth(toks: list[Token], upto: int) -> int:
        d = 0
        for t in toks[:upto]:
            if t.kind == "op" and t.text == "(":
                d += 1
            elif t.kind == "op" and t.text == ")":
                d -= 1
        return d

    @staticmethod
    def _split_commas(toks: list[Token], ln: LogicalLine) -> list[list[Token]]:
        parts, cur, depth = [], [], 0
        for t in toks:
            if t.kind == "op" and t.text == "(":
                depth += 1
            elif t.kind == "op" and t.text == ")":
                depth -= 1
            if t.kind == "op" and t.text == "," and depth == 0:
                parts.append(cur)
                cur = []
            else:
                cur.append(t)
        parts.append(cur)
        for part in parts:
            if not part:
                raise ParseError("empty element in assignment", ln.line, 1)
        return parts

    def _target(self, toks: list[Token], ln: LogicalLine) -> Target:
        p = _ExprParser(toks, ln.line)
        t = p.take()
        if t.kind != "name":
            raise ParseError("invalid assignment target", t.line, t.col)
        ref = p.dotted_rest(t)
        if not p.done():
            t = p.peek()
            raise ParseError("invalid assignment target", t.line, t.col)
        return ref


def parse(source: SourceFile | str) -> Program:
    if isinstance(source, str):
        source = SourceFile(source)
    lines, ignored = logical_lines(source)
    if lines and lines[0].indent != 0:
        raise ParseError("unexpected indent", lines[0].line, 1)
    parser = _Parser(lines)
    stmts = parser.block(0)
    if parser.i < len(parser.lines):
        ln = parser.lines[parser.i]
        raise ParseError("unindent does not match any outer level", ln.line, 1)
    return Program(tuple(stmts), tuple(ignored))


def parse_file(path) -> Program:
    with open(path, encoding="utf-8") as fh:
        return parse(SourceFile(fh.read(), str(path)))


# ---------------------------------------------------------------------------
# Unparser

_PREC = {"or": 1, "and": 2, "not": 3, "cmp": 4, "+": 5, "-": 5, "*": 6, "/": 6, "neg": 7}
_ATOM = 8


def _prec(e: Expr) -> int:
    if isinstance(e, BoolOp):
        return _PREC[e.op]
    if isinstance(e, Unary):
        return _PREC["not"] if e.op == "not" else _PREC["neg"]
    if isinstance(e, Compare):
        return _PREC["cmp"]
    if isinstance(e, BinOp):
        return _PREC[e.op]
    return _ATOM


def _wrap(e: Expr, parens: bool) -> str:
    s = unparse_expr(e)
    return f"({s})" if parens else s


def unparse_expr(e: Expr) -> str:
    if isinstance(e, Num):
        return e.text
    if isinstance(e, Bool):
        return "True" if e.value else "False"
    if isinstance(e, Str):
        return e.raw
    if isinstance(e, Name):
        return e.id
    if isinstance(e, Attr):
        return e.dotted
    if isinstance(e, (BinOp, BoolOp)):
        p = _prec(e)
        return f"{_wrap(e.left, _prec(e.left) < p)} {e.op} {_wrap(e.right, _prec(e.right) <= p)}"
    if isinstance(e, Compare):
        p = _prec(e)
        return f"{_wrap(e.left, _prec(e.left) <= p)} {e.op} {_wrap(e.right, _prec(e.right) <= p)}"
    if isinstance(e, Unary):
        if e.op == "not":
            return f"not {_wrap(e.operand, _prec(e.operand) < _PREC['not'])}"
        return f"-{_wrap(e.operand, _prec(e.operand) < _PREC['neg'])}"
    if isinstance(e, Call):
        args = [unparse_expr(a) for a in e.args]
        args += [f"{k}={unparse_expr(v)}" for k, v in e.keywords]
        return f"{unparse_expr(e.func)}({', '.join(args)})"
    raise TypeError(f"not an expression: {e!r}")


def stmt_text(stmt: Stmt) -> str:
    """Single-line display text; compound statements render their header only."""
    if isinstance(stmt, FuncDef):
        return f"def {stmt.name}({', '.join(stmt.params)})"
    if isinstance(stmt, Assign):
        return f"{unparse_expr(stmt.target)} = {unparse_expr(stmt.value)}"
    if isinstance(stmt, MultiAssign):
        lhs = ", ".join(unparse_expr(t) for t in stmt.targets)
        rhs = ", ".join(unparse_expr(v) for v in stmt.values)
        return f"{lhs} = {rhs}"
    if isinstance(stmt, Global):
        return "global " + ", ".join(stmt.names)
    if isinstance(stmt, While):
        return f"while {unparse_expr(stmt.test)}"
    if isinstance(stmt, If):
        return f"if {unparse_expr(stmt.test)}"
    if isinstance(stmt, TryExcept):
        return "try"
    if isinstance(stmt, ExprStmt):
        return unparse_expr(stmt.expr)
    if isinstance(stmt, Pass):
        return "pass"
    raise TypeError(f"not a statement: {stmt!r}")


def _emit(stmts, depth: int, out: list[str]) -> None:
    pad = "    " * depth
    for i, s in enumerate(stmts):
        if depth == 0 and i > 0 and isinstance(s, (FuncDef, If, TryExcept)):
            out.append("")
        if isinstance(s, (FuncDef, While, If)):
            out.append(f"{pad}{stmt_text(s)}:")
            _emit(s.body, depth + 1, out)
            if isinstance(s, If) and s.orelse:
                out.append(f"{pad}else:")
                _emit(s.orelse, depth + 1, out)
        elif isinstance(s, TryExcept):
            out.append(f"{pad}try:")
            _emit(s.body, depth + 1, out)
            out.append(f"{pad}except {s.exc}:")
            _emit(s.handler, depth + 1, out)
        else:
            out.append(pad + stmt_text(s))


def unparse(program: Program, path: str = "<unparsed>") -> SourceFile:
    out: list[str] = []
    _emit(program.statements, 0, out)
    return SourceFile("\n".join(out) + "\n" if out else "", path)


# ---------------------------------------------------------------------------
# Numeric literals


@dataclass(frozen=True)
class LiteralRef:
    """Position of a numeric literal: statement line plus left-to-right index."""

    line: int
    index: int
    text: str


def _expr_literals(e: Expr) -> Iterator[Num]:
    # walk_expr visits left before right, which is source order for this grammar
    for node in walk_expr(e):
        if isinstance(node, Num):
            yield node


def find_numeric_literals(stmt: Stmt) -> list[tuple[LiteralRef, float]]:
    nums = [n for e in stmt_exprs(stmt) for n in _expr_literals(e)]
    return [(LiteralRef(stmt.line, i, n.text), n.value) for i, n in enumerate(nums)]


def format_number(value: float) -> str:
    if float(value).is_integer() and abs(value) < 1e15:
        return str(int(value))
    return repr(float(value))


def _replace_nth_num(e: Expr, counter: list[int], index: int, new: Num) -> Expr:
    if isinstance(e, Num):
        hit = counter[0] == index
        counter[0] += 1
        return replace(new, line=e.line, col=e.col) if hit else e
    if isinstance(e, (BinOp, Compare, BoolOp)):
        left = _replace_nth_num(e.left, counter, index, new)
        right = _replace_nth_num(e.right, counter, index, new)
        return replace(e, left=left, right=right)
    if isinstance(e, Unary):
        return replace(e, operand=_replace_nth_num(e.operand, counter, index, new))
    if isinstance(e, Call):
        args = tuple(_replace_nth_num(a, counter, index, new) for a in e.args)
        kws = tuple((k, _replace_nth_num(v, counter, index, new)) for k, v in e.keywords)
        return replace(e, args=args, keywords=kws)
    return e


def replace_literal(stmt: Stmt, ref: LiteralRef, value: float) -> Stmt:
    """Return ``stmt`` with the referenced numeric literal set to ``value``."""
    new = Num(format_number(value), float(value))
    counter = [0]
    if isinstance(stmt, Assign):
        return replace(stmt, value=_replace_nth_num(stmt.value, counter, ref.index, new))
    if isinstance(stmt, MultiAssign):
        vals = tuple(_replace_nth_num(v, counter, ref.index, new) for v in stmt.values)
        return replace(stmt, values=vals)
    if isinstance(stmt, (While, If)):
        return replace(stmt, test=_replace_nth_num(stmt.test, counter, ref.index, new))
    if isinstance(stmt, ExprStmt):
        return replace(stmt, expr=_replace_nth_num(stmt.expr, counter, ref.index, new))
    raise ValueError(f"statement at line {stmt.line} has no literal #{ref.index}")


def find_statement(program: Program, line: int) -> Stmt | None:
    for s in walk_statements(program.statements):
        if s.line == line:
            return s
    return None


def _map_block(stmts, fn):
    out = []
    for s in stmts:
        r = fn(s)
        if r is not s:
            out.extend(r if isinstance(r, list) else [r])
            continue
        if isinstance(s, (FuncDef, While)):
            s = replace(s, body=tuple(_map_block(s.body, fn)))
        elif isinstance(s, If):
            s = replace(s, body=tuple(_map_block(s.body, fn)), orelse=tuple(_map_block(s.orelse, fn)))
        elif isinstance(s, TryExcept):
            s = replace(s, body=tuple(_map_block(s.body, fn)), handler=tuple(_map_block(s.handler, fn)))
        out.append(s)
    return out


def rewrite(program: Program, fn) -> Program:
    """Rebuild ``program`` applying ``fn`` to every statement.

    ``fn`` returns the statement unchanged (identity) to recurse into it, or a
    replacement statement / list of statements to splice in its place.
    """
    return Program(tuple(_map_block(program.statements, fn)), program.ignored_lines)
