"""Lexer + recursive-descent parser for the monitor DSL.

Grammar (EBNF):

    program   := "constraint" STRING "mode" ("during" | "on_completion")
                 tolDecl* "{" expr "}" "fail" STRING
    tolDecl   := "tol" IDENT "=" NUMBER UNIT
    expr      := "if" expr "then" expr "else" expr | orExpr
    orExpr    := andExpr ("or" andExpr)*
    andExpr   := notExpr ("and" notExpr)*
    notExpr   := "not" notExpr | cmp
    cmp       := sum (("<" | "<=" | ">" | ">=" | "=") sum
                      | "within" sum "of" sum)?
    sum       := term (("+" | "-") term)*
    term      := factor (("*" | "/") factor)*
    factor    := "-" factor | atom
    atom      := NUMBER UNIT? | "e" "(" INT ")" | BUILTIN "(" args ")"
               | "at" "(" expr "," INT ")" | AXIS | TOLNAME
               | "(" expr ")" | "[" "e" "(" INT ")" ("," "e" "(" INT ")")* "]"

Numbers with a unit are converted to SI at parse time. Parse errors carry
line, column, and the expected-token set.
"""

from __future__ import annotations

import re

from camlab.errors import CamlabError
from camlab.conlang.ast import (
    AXES,
    BUILTINS,
    UNITS,
    At,
    AxisRef,
    BinOp,
    Call,
    ElemList,
    ElemRef,
    IfElse,
    Mode,
    MonitorProgram,
    Num,
    ToleranceDecl,
    TolRef,
    Unary,
    Within,
)

__all__ = ["parse", "DslSyntaxError", "DuplicateTolerance"]

KEYWORDS = {
    "constraint",
    "mode",
    "during",
    "on_completion",
    "tol",
    "fail",
    "and",
    "or",
    "not",
    "if",
    "then",
    "else",
    "within",
    "of",
}

RESERVED = KEYWORDS | set(UNITS) | set(BUILTINS) | set(AXES) | {"e", "at"}


class DslSyntaxError(CamlabError):
    def __init__(self, line: int, col: int, expected, found: str):
        self.line = line
        self.col = col
        self.expected = tuple(expected) if not isinstance(expected, str) else (expected,)
        self.found = found
        exp = " or ".join(self.expected)
        super().__init__(f"line {line}, col {col}: expected {exp}, found {found}")


class DuplicateTolerance(CamlabError):
    pass


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<comment>\#[^\n]*)
  | (?P<string>"(?:[^"\\]|\\.)*")
  | (?P<number>\d+\.\d+(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?|\d+(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<sym><=|>=|[{}()\[\],+\-*/<>=])
    """,
    re.VERBOSE,
)


class _Token:
    __slots__ = ("kind", "text", "line", "col")

    def __init__(self, kind, text, line, col):
        self.kind = kind
        self.text = text
        self.line = line
        self.col = col

    def __repr__(self):
        return f"{self.kind}({self.text!r})"


def _lex(source: str):
    tokens = []
    line, col, pos = 1, 1, 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if m is None:
            raise DslSyntaxError(line, col, "a token", repr(source[pos]))
        kind = m.lastgroup
        text = m.group()
        if kind == "nl":
            line += 1
            col = 1
        elif kind in ("ws", "comment"):
            col += len(text)
        else:
            tokens.append(_Token(kind, text, line, col))
            col += len(text)
        pos = m.end()
    tokens.append(_Token("eof", "<eof>", line, col))
    return tokens


class _Parser:
    def __init__(self, tokens):
        self.tokens = tokens
        self.i = 0
        self.tolerances: dict = {}

    # -- token helpers

    def peek(self) -> _Token:
        return self.tokens[self.i]

    def next(self) -> _Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def fail(self, expected):
        tok = self.peek()
        raise DslSyntaxError(tok.line, tok.col, expected, tok.text)

    def expect(self, text: str) -> _Token:
        tok = self.peek()
        if tok.text != text:
            self.fail(f"'{text}'")
        return self.next()

    def expect_kind(self, kind: str) -> _Token:
        tok = self.peek()
        if tok.kind != kind:
            self.fail(kind)
        return self.next()

    def at_text(self, text: str) -> bool:
        return self.peek().text == text

    # -- grammar

    def program(self, cid=None) -> MonitorProgram:
        self.expect("constraint")
        name = self.string()
        self.expect("mode")
        tok = self.peek()
        if tok.text == "during":
            mode = Mode.DURING
        elif tok.text == "on_completion":
            mode = Mode.ON_COMPLETION
        else:
            self.fail(("'during'", "'on_completion'"))
        self.next()
        decls = []
        while self.at_text("tol"):
            decls.append(self.tol_decl())
        self.expect("{")
        body = self.expr()
        self.expect("}")
        self.expect("fail")
        template = self.string()
        if self.peek().kind != "eof":
            self.fail("end of program")
        return MonitorProgram(
            name=name,
            mode=mode,
            tolerances=tuple(decls),
            body=body,
            reason_template=template,
            cid=cid if cid is not None else name,
        )

    def string(self) -> str:
        tok = self.expect_kind("string")
        return tok.text[1:-1].replace('\\"', '"').replace("\\\\", "\\")

    def tol_decl(self) -> ToleranceDecl:
        self.expect("tol")
        tok = self.expect_kind("ident")
        name = tok.text
        if name in RESERVED:
            raise DslSyntaxError(tok.line, tok.col, "a fresh tolerance name", name)
        if name in self.tolerances:
            raise DuplicateTolerance(f"tolerance '{name}' declared twice")
        self.expect("=")
        sign = 1.0
        if self.at_text("-"):
            self.next()
            sign = -1.0
        num = self.expect_kind("number")
        unit_tok = self.expect_kind("ident")
        if unit_tok.text not in UNITS:
            raise DslSyntaxError(unit_tok.line, unit_tok.col, "a unit (m/cm/mm/rad/deg/count)", unit_tok.text)
        dim, factor = UNITS[unit_tok.text]
        decl = ToleranceDecl(name=name, value=sign * float(num.text) * factor, dim=dim)
        self.tolerances[name] = decl
        return decl

    def expr(self):
        if self.at_text("if"):
            self.next()
            cond = self.expr()
            self.expect("then")
            then = self.expr()
            self.expect("else")
            other = self.expr()
            return IfElse(cond, then, other)
        return self.or_expr()

    def or_expr(self):
        node = self.and_expr()
        while self.at_text("or"):
            self.next()
            node = BinOp("or", node, self.and_expr())
        return node

    def and_expr(self):
        node = self.not_expr()
        while self.at_text("and"):
            self.next()
            node = BinOp("and", node, self.not_expr())
        return node

    def not_expr(self):
        if self.at_text("not"):
            self.next()
            return Unary("not", self.not_expr())
        return self.cmp()

    def cmp(self):
        node = self.sum()
        tok = self.peek()
        if tok.text in ("<", "<=", ">", ">=", "="):
            self.next()
            return BinOp(tok.text, node, self.sum())
        if tok.text == "within":
            self.next()
            tol = self.sum()
            self.expect("of")
            return Within(node, tol, self.sum())
        return node

    def sum(self):
        node = self.term()
        while self.peek().text in ("+", "-"):
            op = self.next().text
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.factor()
        while self.peek().text in ("*", "/"):
            op = self.next().text
            node = BinOp(op, node, self.factor())
        return node

    def factor(self):
        if self.at_text("-"):
            self.next()
            return Unary("-", self.factor())
        return self.atom()

    def int_literal(self) -> int:
        tok = self.expect_kind("number")
        value = float(tok.text)
        if value != int(value) or value < 0:
            raise DslSyntaxError(tok.line, tok.col, "a non-negative integer", tok.text)
        return int(value)

    def atom(self):
        tok = self.peek()
        if tok.kind == "number":
            self.next()
            value = float(tok.text)
            nxt = self.peek()
            if nxt.kind == "ident" and nxt.text in UNITS:
                self.next()
                dim, factor = UNITS[nxt.text]
                return Num(value * factor, dim)
            return Num(value, "none")
        if tok.text == "(":
            self.next()
            node = self.expr()
            self.expect(")")
            return node
        if tok.text == "[":
            self.next()
            eids = [self.elem_ref().eid]
            while self.at_text(","):
                self.next()
                eids.append(self.elem_ref().eid)
            self.expect("]")
            return ElemList(tuple(eids))
        if tok.kind == "ident":
            if tok.text == "e":
                return self.elem_ref()
            if tok.text == "at":
                self.next()
                self.expect("(")
                inner = self.expr()
                self.expect(",")
                ticks = self.int_literal()
                self.expect(")")
                return At(inner, ticks)
            if tok.text in BUILTINS:
                self.next()
                self.expect("(")
                args = [self.expr()]
                while self.at_text(","):
                    self.next()
                    args.append(self.expr())
                self.expect(")")
                return Call(tok.text, tuple(args))
            if tok.text in AXES:
                self.next()
                return AxisRef(tok.text)
            if tok.text in self.tolerances:
                self.next()
                return TolRef(tok.text)
            raise DslSyntaxError(
                tok.line, tok.col, "a declared tolerance, builtin, axis, or e(id)", tok.text
            )
        self.fail("an expression")

    def elem_ref(self) -> ElemRef:
        self.expect("e")
        self.expect("(")
        eid = self.int_literal()
        self.expect(")")
        return ElemRef(eid)


def parse(source: str, cid: str | None = None) -> MonitorProgram:
    """Parse DSL source into a MonitorProgram.

    Raises DslSyntaxError (with line/col/expected) or DuplicateTolerance.
    """
    return _Parser(_lex(source)).program(cid=cid)
