"""Filter expression tree and its canonical text form."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Any, Union


class UnaryOp(enum.Enum):
    NOT = "!"
    NEG = "-"


class BinaryOp(enum.Enum):
    OR = "||"
    AND = "&&"
    EQ = "=="
    NE = "!="
    LT = "<"
    LE = "<="
    GT = ">"
    GE = ">="
    ADD = "+"
    SUB = "-"
    MUL = "*"
    DIV = "/"

    @property
    def is_logical(self) -> bool:
        return self in (BinaryOp.AND, BinaryOp.OR)

    @property
    def is_comparison(self) -> bool:
        return self in _COMPARISONS

    @property
    def is_arithmetic(self) -> bool:
        return self in (BinaryOp.ADD, BinaryOp.SUB, BinaryOp.MUL, BinaryOp.DIV)


_COMPARISONS = frozenset(
    {BinaryOp.EQ, BinaryOp.NE, BinaryOp.LT, BinaryOp.LE, BinaryOp.GT, BinaryOp.GE}
)

# Literal kinds; "int" covers every integer literal (64-bit).
LITERAL_KINDS = ("int", "double", "bool", "str")


@dataclass(frozen=True)
class Literal:
    value: Any
    kind: str
    type: str | None = field(default=None, compare=False)


@dataclass(frozen=True)
class FieldRef:
    path: tuple[str, ...]
    type: str | None = field(default=None, compare=False)
    #: Resolved (class name, slot) per path segment, filled by the checker.
    slots: tuple[tuple[str, int], ...] = field(default=(), compare=False)

    @property
    def dotted(self) -> str:
        return ".".join(self.path)


@dataclass(frozen=True)
class Unary:
    op: UnaryOp
    operand: Expr
    type: str | None = field(default=None, compare=False)


@dataclass(frozen=True)
class Binary:
    op: BinaryOp
    lhs: Expr
    rhs: Expr
    type: str | None = field(default=None, compare=False)


Expr = Union[Literal, FieldRef, Unary, Binary]


def render_literal(lit: Literal) -> str:
    if lit.kind == "bool":
        return "true" if lit.value else "false"
    if lit.kind == "str":
        return "'" + lit.value.replace("\\", "\\\\").replace("'", "\\'") + "'"
    if lit.kind == "double":
        v = lit.value
        if math.isinf(v):
            return "1e999"
        text = repr(v)
        return text if any(c in text for c in ".e") else text + ".0"
    return str(lit.value)


def pretty(expr: Expr) -> str:
    """Fully parenthesized text that parses back to an equal tree."""
    if isinstance(expr, Literal):
        return render_literal(expr)
    if isinstance(expr, FieldRef):
        return expr.dotted
    if isinstance(expr, Unary):
        return f"({expr.op.value}{pretty(expr.operand)})"
    return f"({pretty(expr.lhs)} {expr.op.value} {pretty(expr.rhs)})"


def field_refs(expr: Expr) -> list[FieldRef]:
    if isinstance(expr, FieldRef):
        return [expr]
    if isinstance(expr, Unary):
        return field_refs(expr.operand)
    if isinstance(expr, Binary):
        return field_refs(expr.lhs) + field_refs(expr.rhs)
    return []
