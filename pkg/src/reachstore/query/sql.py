"""Translation of typed filters to SQL over the table-per-class mapping.

SQL comparisons with NULL yield UNKNOWN, while the filter language treats
them as false. Under an even number of negations UNKNOWN already behaves
as false at the WHERE clause, so comparisons there are emitted bare. Under
a negation, or where a boolean is used as a value, each comparison is
guarded with ``IS NOT NULL`` on the columns it reads so that it yields a
definite FALSE.
"""

from __future__ import annotations

import enum

from ..errors import Unsupported
from ..metamodel import Registry, RegisteredClass
from ..store import schema
from .ast import Binary, BinaryOp, Expr, FieldRef, Literal, Unary

_SQL_OPS = {
    BinaryOp.OR: "OR",
    BinaryOp.AND: "AND",
    BinaryOp.EQ: "=",
    BinaryOp.NE: "<>",
    BinaryOp.LT: "<",
    BinaryOp.LE: "<=",
    BinaryOp.GT: ">",
    BinaryOp.GE: ">=",
    BinaryOp.ADD: "+",
    BinaryOp.SUB: "-",
    BinaryOp.MUL: "*",
    BinaryOp.DIV: "/",
}


class Polarity(enum.Enum):
    POS = "pos"  # unknown may stand in for false
    NEG = "neg"  # under an odd number of negations
    EXACT = "exact"  # used as a value; must be two-valued


def _flip(p: Polarity) -> Polarity:
    return {Polarity.POS: Polarity.NEG, Polarity.NEG: Polarity.POS}.get(p, p)


def table_for(rc: RegisteredClass, registry: Registry | None = None) -> str:
    if registry is not None:
        return schema.table_names(registry)[rc.class_id]
    return schema._sanitize(rc.name)


def translate_where(expr: Expr, collation: str | None = None) -> str:
    """SQL predicate for a typed boolean filter."""
    return _Translator(collation).boolean(expr, Polarity.POS)


def translate_sql(
    expr: Expr,
    rc: RegisteredClass,
    registry: Registry | None = None,
    *,
    table: str | None = None,
    collation: str | None = None,
) -> str:
    """``SELECT oid FROM <table> WHERE <predicate>`` for ``expr`` over ``rc``."""
    if table is None:
        table = table_for(rc, registry)
    return f"SELECT oid FROM {table} WHERE {translate_where(expr, collation)}"


class _Translator:
    def __init__(self, collation: str | None):
        self.collation = collation

    def boolean(self, e: Expr, pol: Polarity) -> str:
        if isinstance(e, Literal):
            return "(TRUE)" if e.value else "(FALSE)"
        if isinstance(e, FieldRef):
            col = self.column(e)
            return self.guard(f"({col} = TRUE)", [col], pol)
        if isinstance(e, Unary):
            return f"(NOT {self.boolean(e.operand, _flip(pol))})"
        if e.op.is_logical:
            return f"({self.boolean(e.lhs, pol)} {_SQL_OPS[e.op]} {self.boolean(e.rhs, pol)})"
        if e.op.is_comparison:
            lhs, rhs = self.value(e.lhs), self.value(e.rhs)
            if self.collation and e.lhs.type == "str":
                lhs = f"{lhs} COLLATE {self.collation}"
            cols = _leaf_columns(e.lhs, self) + _leaf_columns(e.rhs, self)
            return self.guard(f"({lhs} {_SQL_OPS[e.op]} {rhs})", cols, pol)
        raise Unsupported(f"'{e.op.value}' is not a boolean operator")

    def guard(self, sql: str, cols: list[str], pol: Polarity) -> str:
        if pol is Polarity.POS or not cols:
            return sql
        seen = list(dict.fromkeys(cols))
        nn = " AND ".join(f"({c} IS NOT NULL)" for c in seen)
        return f"({sql} AND {nn})"

    def value(self, e: Expr) -> str:
        if e.type == "bool":
            if isinstance(e, FieldRef):
                return self.column(e)
            if isinstance(e, Literal):
                return "TRUE" if e.value else "FALSE"
            return self.boolean(e, Polarity.EXACT)
        if isinstance(e, Literal):
            return schema.sql_literal(e.value)
        if isinstance(e, FieldRef):
            return self.column(e)
        if isinstance(e, Unary):
            return f"(-{self.value(e.operand)})"
        return f"({self.value(e.lhs)} {_SQL_OPS[e.op]} {self.value(e.rhs)})"

    def column(self, e: FieldRef) -> str:
        if len(e.path) != 1:
            raise Unsupported(f"path {e.dotted} needs a join; only single fields translate")
        return schema.quote_ident(e.path[0])


def _leaf_columns(e: Expr, tr: _Translator) -> list[str]:
    """Columns whose Null would make a comparison on ``e`` unknown.

    Boolean subexpressions are translated two-valued, so they stop the walk.
    """
    if isinstance(e, FieldRef):
        return [tr.column(e)]
    if e.type == "bool" and not isinstance(e, Literal):
        return []
    if isinstance(e, Unary):
        return _leaf_columns(e.operand, tr)
    if isinstance(e, Binary):
        return _leaf_columns(e.lhs, tr) + _leaf_columns(e.rhs, tr)
    return []
