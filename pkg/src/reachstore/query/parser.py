"""Recursive-descent parser for the filter language.

Precedence, loosest first: ``||``, ``&&``, comparisons (non-associative),
``+ -``, ``* /``, unary ``! -``. String literals use single quotes with
backslash escapes (``\\'`` and ``\\\\``).
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from ..errors import FilterSyntaxError
from .ast import Binary, BinaryOp, Expr, FieldRef, Literal, Unary, UnaryOp

I64_MAX = 2**63 - 1

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<float>\d+\.\d+(?:[eE][+-]?\d+)?|\d+[eE][+-]?\d+)
  | (?P<int>\d+)
  | (?P<str>'(?:[^'\\]|\\.)*')
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>\|\||&&|==|!=|<=|>=|[<>+\-*/!().])
    """,
    re.VERBOSE | re.DOTALL,
)

_COMPARE = {op.value: op for op in BinaryOp if op.is_comparison}
_ADD = {"+": BinaryOp.ADD, "-": BinaryOp.SUB}
_MUL = {"*": BinaryOp.MUL, "/": BinaryOp.DIV}
_ATOM_START = ("literal", "identifier", "'('")


@dataclass
class Token:
    kind: str  # int, float, str, ident, kw, op, eof
    text: str
    pos: int


def tokenize(text: str) -> list[Token]:
    out: list[Token] = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            if text[pos] == "'":
                raise FilterSyntaxError(pos, ["closing quote"], "end of input")
            raise FilterSyntaxError(pos, ["token"], text[pos])
        kind = m.lastgroup
        if kind != "ws":
            tok = m.group()
            if kind == "ident" and tok in ("true", "false"):
                kind = "kw"
            out.append(Token(kind, tok, pos))
        pos = m.end()
    out.append(Token("eof", "", len(text)))
    return out


def _unescape(body: str) -> str:
    return re.sub(r"\\(.)", r"\1", body, flags=re.DOTALL)


class _Parser:
    def __init__(self, text: str):
        self.toks = tokenize(text)
        self.i = 0

    def peek(self) -> Token:
        return self.toks[self.i]

    def advance(self) -> Token:
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def at_op(self, *ops: str) -> bool:
        tok = self.peek()
        return tok.kind == "op" and tok.text in ops

    def fail(self, expected) -> FilterSyntaxError:
        tok = self.peek()
        return FilterSyntaxError(tok.pos, expected, tok.text or "end of input")

    def parse(self) -> Expr:
        expr = self.or_()
        if self.peek().kind != "eof":
            raise self.fail(["end of input", "operator"])
        return expr

    def or_(self) -> Expr:
        node = self.and_()
        while self.at_op("||"):
            self.advance()
            node = Binary(BinaryOp.OR, node, self.and_())
        return node

    def and_(self) -> Expr:
        node = self.cmp()
        while self.at_op("&&"):
            self.advance()
            node = Binary(BinaryOp.AND, node, self.cmp())
        return node

    def cmp(self) -> Expr:
        node = self.sum()
        if self.at_op(*_COMPARE):
            op = _COMPARE[self.advance().text]
            node = Binary(op, node, self.sum())
        return node

    def sum(self) -> Expr:
        node = self.term()
        while self.at_op(*_ADD):
            op = _ADD[self.advance().text]
            node = Binary(op, node, self.term())
        return node

    def term(self) -> Expr:
        node = self.unary()
        while self.at_op(*_MUL):
            op = _MUL[self.advance().text]
            node = Binary(op, node, self.unary())
        return node

    def unary(self) -> Expr:
        if self.at_op("!"):
            self.advance()
            return Unary(UnaryOp.NOT, self.atom())
        if self.at_op("-"):
            self.advance()
            return Unary(UnaryOp.NEG, self.atom())
        return self.atom()

    def atom(self) -> Expr:
        tok = self.peek()
        if tok.kind == "int":
            self.advance()
            value = int(tok.text)
            if value > I64_MAX:
                raise FilterSyntaxError(tok.pos, ["64-bit integer"], tok.text)
            return Literal(value, "int")
        if tok.kind == "float":
            self.advance()
            return Literal(float(tok.text), "double")
        if tok.kind == "str":
            self.advance()
            return Literal(_unescape(tok.text[1:-1]), "str")
        if tok.kind == "kw":
            self.advance()
            return Literal(tok.text == "true", "bool")
        if tok.kind == "ident":
            self.advance()
            path = [tok.text]
            while self.at_op("."):
                self.advance()
                nxt = self.peek()
                if nxt.kind != "ident":
                    raise self.fail(["identifier"])
                path.append(self.advance().text)
            return FieldRef(tuple(path))
        if self.at_op("("):
            self.advance()
            node = self.or_()
            if not self.at_op(")"):
                raise self.fail(["')'", "operator"])
            self.advance()
            return node
        raise self.fail(_ATOM_START)


def parse_filter(text: str) -> Expr:
    """Parse filter ``text``; raises :class:`FilterSyntaxError`."""
    return _Parser(text).parse()
