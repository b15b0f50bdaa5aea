"""Lexer and recursive-descent parser for the fdctmc modeling language.

The accepted language is a small guarded-command dialect::

    fdctmc
    const double rate = 1.39;
    module m
      fdelay f = 1.0;
      s : [0..2] init 0;
      [L] s=1 --f-> 0.3:(s'=0) + 0.7:(s'=2);
      [] s=0 -> rate:(s'=1);
    endmodule
    label "target" = s=2;
    rewards
      true : 1.0;
      [L] true : 0.5;
    endrewards
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterator, Union


class ParseError(ValueError):
    def __init__(self, message: str, line: int = 0, column: int = 0):
        self.message = message
        self.line = line
        self.column = column
        super().__init__(f"{line}:{column}: {message}" if line else message)


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    line: int
    column: int


KEYWORDS = {
    "fdctmc", "const", "int", "double", "module", "endmodule", "fdelay",
    "init", "label", "rewards", "endrewards", "true", "false",
}

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<comment>//[^\n]*)
  | (?P<number>(?:\d+\.(?!\.)\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<string>"[^"\n]*")
  | (?P<op>->|--|\.\.|<=|>=|!=|[=<>&|!+\-*/()\[\]:;,'])
    """,
    re.VERBOSE,
)


def tokenize(text: str) -> Iterator[Token]:
    line, line_start, pos = 1, 0, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        col = pos - line_start + 1
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind in ("ws", "comment"):
            pass
        elif kind == "ident" and m.group() in KEYWORDS:
            yield Token(m.group(), m.group(), line, col)
        elif kind == "op":
            yield Token(m.group(), m.group(), line, col)
        else:
            yield Token(kind, m.group(), line, col)
        pos = m.end()
    yield Token("eof", "", line, pos - line_start + 1)


# expressions ---------------------------------------------------------------

@dataclass(frozen=True)
class Num:
    value: float | int


@dataclass(frozen=True)
class Name:
    name: str
    line: int = 0
    column: int = 0


@dataclass(frozen=True)
class Unary:
    op: str
    operand: "Expr"


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple["Expr", ...]


Expr = Union[Num, Name, Unary, Binary, Call]

_FUNCS = {"min": min, "max": max}


def evaluate(expr: Expr, env: dict[str, float | int | bool]):
    if isinstance(expr, Num):
        return expr.value
    if isinstance(expr, Name):
        try:
            return env[expr.name]
        except KeyError:
            raise ParseError(f"unknown identifier {expr.name!r}", expr.line, expr.column) from None
    if isinstance(expr, Unary):
        v = evaluate(expr.operand, env)
        return (not v) if expr.op == "!" else -v
    if isinstance(expr, Call):
        return _FUNCS[expr.func](*(evaluate(a, env) for a in expr.args))
    op = expr.op
    if op == "&":
        return bool(evaluate(expr.left, env)) and bool(evaluate(expr.right, env))
    if op == "|":
        return bool(evaluate(expr.left, env)) or bool(evaluate(expr.right, env))
    a = evaluate(expr.left, env)
    b = evaluate(expr.right, env)
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if op == "/":
        return a / b
    if op == "=":
        return a == b
    if op == "!=":
        return a != b
    if op == "<":
        return a < b
    if op == "<=":
        return a <= b
    if op == ">":
        return a > b
    if op == ">=":
        return a >= b
    raise AssertionError(op)


# declarations --------------------------------------------------------------

@dataclass(frozen=True)
class Constant:
    name: str
    type: str
    value: Expr | None
    line: int = 0


@dataclass(frozen=True)
class FdDeclaration:
    name: str
    delay: Expr
    line: int = 0


@dataclass(frozen=True)
class Variable:
    name: str
    low: Expr
    high: Expr
    init: Expr | None
    line: int = 0


@dataclass(frozen=True)
class Update:
    weight: Expr
    assignments: tuple[tuple[str, Expr], ...]


@dataclass(frozen=True)
class Command:
    label: str
    guard: Expr
    event: str | None
    updates: tuple[Update, ...]
    line: int = 0


@dataclass(frozen=True)
class Module:
    name: str
    fdelays: tuple[FdDeclaration, ...]
    variables: tuple[Variable, ...]
    commands: tuple[Command, ...]


@dataclass(frozen=True)
class RewardItem:
    label: str | None  # None for rate items, "" for unlabeled transitions
    guard: Expr
    value: Expr
    line: int = 0


@dataclass(frozen=True)
class RewardBlock:
    name: str | None
    items: tuple[RewardItem, ...]


@dataclass
class Ast:
    constants: list[Constant] = field(default_factory=list)
    modules: list[Module] = field(default_factory=list)
    labels: dict[str, Expr] = field(default_factory=dict)
    rewards: list[RewardBlock] = field(default_factory=list)


class Parser:
    def __init__(self, text: str):
        self.tokens = list(tokenize(text))
        self.pos = 0

    # token helpers
    @property
    def tok(self) -> Token:
        return self.tokens[self.pos]

    def peek(self, offset: int = 1) -> Token:
        return self.tokens[min(self.pos + offset, len(self.tokens) - 1)]

    def error(self, message: str, tok: Token | None = None) -> ParseError:
        tok = tok or self.tok
        return ParseError(message, tok.line, tok.column)

    def accept(self, kind: str) -> Token | None:
        if self.tok.kind == kind:
            tok = self.tok
            self.pos += 1
            return tok
        return None

    def expect(self, kind: str, what: str | None = None) -> Token:
        tok = self.accept(kind)
        if tok is None:
            found = self.tok.text or "end of input"
            raise self.error(f"expected {what or repr(kind)}, found {found!r}")
        return tok

    # grammar
    def parse(self) -> Ast:
        if self.tok.kind != "fdctmc":
            raise self.error("expected keyword fdctmc")
        self.pos += 1
        ast = Ast()
        seen: set[str] = set()
        while self.tok.kind != "eof":
            kind = self.tok.kind
            if kind == "const":
                c = self.constant()
                if c.name in seen:
                    raise ParseError(f"duplicate declaration of {c.name!r}", c.line)
                seen.add(c.name)
                ast.constants.append(c)
            elif kind == "module":
                ast.modules.append(self.module(seen))
            elif kind == "label":
                tok = self.tok
                name, guard = self.label()
                if name in ast.labels:
                    raise self.error(f"duplicate label {name!r}", tok)
                ast.labels[name] = guard
            elif kind == "rewards":
                ast.rewards.append(self.reward_block())
            else:
                raise self.error(f"unexpected {self.tok.text!r} at top level")
        return ast

    def constant(self) -> Constant:
        line = self.expect("const").line
        ctype = "double"
        if self.tok.kind in ("int", "double"):
            ctype = self.tok.kind
            self.pos += 1
        name = self.expect("ident", "constant name").text
        value = None
        if self.accept("="):
            value = self.expr()
        self.expect(";")
        return Constant(name, ctype, value, line)

    def module(self, seen: set[str]) -> Module:
        self.expect("module")
        name = self.expect("ident", "module name").text
        fdelays: list[FdDeclaration] = []
        variables: list[Variable] = []
        commands: list[Command] = []
        while self.tok.kind == "fdelay":
            line = self.tok.line
            self.pos += 1
            ev = self.expect("ident", "fd event name")
            self.expect("=")
            delay = self.expr()
            self.expect(";")
            if any(f.name == ev.text for f in fdelays):
                raise self.error(f"duplicate fd event {ev.text!r}", ev)
            fdelays.append(FdDeclaration(ev.text, delay, line))
        while self.tok.kind == "ident" and self.peek().kind == ":":
            var = self.variable()
            if var.name in seen:
                raise ParseError(f"duplicate declaration of {var.name!r}", var.line)
            seen.add(var.name)
            variables.append(var)
        while self.tok.kind == "[":
            commands.append(self.command())
        if self.tok.kind == "fdelay":
            raise self.error("fd events must be declared immediately after the module name")
        self.expect("endmodule")
        return Module(name, tuple(fdelays), tuple(variables), tuple(commands))

    def variable(self) -> Variable:
        tok = self.expect("ident")
        self.expect(":")
        self.expect("[")
        low = self.expr()
        self.expect("..")
        high = self.expr()
        self.expect("]")
        init = None
        if self.accept("init"):
            init = self.expr()
        self.expect(";")
        return Variable(tok.text, low, high, init, tok.line)

    def command(self) -> Command:
        line = self.expect("[").line
        label = ""
        if self.tok.kind == "ident":
            label = self.tok.text
            self.pos += 1
        self.expect("]")
        guard = self.expr()
        event = None
        if self.accept("--"):
            event = self.expect("ident", "fd event name").text
            self.expect("->")
        else:
            self.expect("->", "'->' or '--'")
        updates = [self.update()]
        while self.accept("+"):
            updates.append(self.update())
        self.expect(";")
        return Command(label, guard, event, tuple(updates), line)

    def update(self) -> Update:
        if self.tok.kind == "true":
            self.pos += 1
            return Update(Num(1), ())
        weight: Expr = Num(1)
        if self.tok.kind != "(" or not self._looks_like_assignment():
            weight = self.expr()
            self.expect(":")
        assignments = []
        if self.accept("true"):
            return Update(weight, ())
        while True:
            self.expect("(")
            var = self.expect("ident", "variable name").text
            self.expect("'")
            self.expect("=")
            value = self.expr()
            self.expect(")")
            assignments.append((var, value))
            if not self.accept("&"):
                break
        return Update(weight, tuple(assignments))

    def _looks_like_assignment(self) -> bool:
        return self.peek().kind == "ident" and self.peek(2).kind == "'"

    def label(self) -> tuple[str, Expr]:
        self.expect("label")
        name = self.expect("string", "label name").text[1:-1]
        self.expect("=")
        guard = self.expr()
        self.expect(";")
        return name, guard

    def reward_block(self) -> RewardBlock:
        self.expect("rewards")
        name = None
        if self.tok.kind == "string":
            name = self.tok.text[1:-1]
            self.pos += 1
        items = []
        while self.tok.kind != "endrewards":
            line = self.tok.line
            label = None
            if self.accept("["):
                label = ""
                if self.tok.kind == "ident":
                    label = self.tok.text
                    self.pos += 1
                self.expect("]")
            guard = self.expr()
            self.expect(":")
            value = self.expr()
            self.expect(";")
            items.append(RewardItem(label, guard, value, line))
        self.expect("endrewards")
        return RewardBlock(name, tuple(items))

    # expressions, lowest precedence first
    def expr(self) -> Expr:
        left = self.conj()
        while self.accept("|"):
            left = Binary("|", left, self.conj())
        return left

    def conj(self) -> Expr:
        left = self.neg()
        while self.accept("&"):
            left = Binary("&", left, self.neg())
        return left

    def neg(self) -> Expr:
        if self.accept("!"):
            return Unary("!", self.neg())
        return self.comparison()

    def comparison(self) -> Expr:
        left = self.additive()
        if self.tok.kind in ("=", "!=", "<", "<=", ">", ">="):
            op = self.tok.kind
            self.pos += 1
            left = Binary(op, left, self.additive())
        return left

    def additive(self) -> Expr:
        left = self.term()
        while self.tok.kind in ("+", "-"):
            op = self.tok.kind
            self.pos += 1
            left = Binary(op, left, self.term())
        return left

    def term(self) -> Expr:
        left = self.unary()
        while self.tok.kind in ("*", "/"):
            op = self.tok.kind
            self.pos += 1
            left = Binary(op, left, self.unary())
        return left

    def unary(self) -> Expr:
        if self.accept("-"):
            return Unary("-", self.unary())
        return self.atom()

    def atom(self) -> Expr:
        tok = self.tok
        if tok.kind == "number":
            self.pos += 1
            text = tok.text
            if re.fullmatch(r"\d+", text):
                return Num(int(text))
            return Num(float(text))
        if tok.kind in ("true", "false"):
            self.pos += 1
            return Num(tok.kind == "true")
        if tok.kind == "ident":
            self.pos += 1
            if tok.text in _FUNCS and self.tok.kind == "(":
                self.pos += 1
                args = [self.expr()]
                while self.accept(","):
                    args.append(self.expr())
                self.expect(")")
                return Call(tok.text, tuple(args))
            return Name(tok.text, tok.line, tok.column)
        if self.accept("("):
            e = self.expr()
            self.expect(")")
            return e
        raise self.error(f"unexpected {tok.text or 'end of input'!r} in expression")


def parse(text: str) -> Ast:
    """Parse model source text into an :class:`Ast`."""
    return Parser(text).parse()
