"""Filter language: parser, type checker, evaluator, SQL translator."""

from .ast import Binary, BinaryOp, Expr, FieldRef, Literal, Unary, UnaryOp, pretty
from .checker import check_value, type_check
from .evaluator import evaluate, evaluate_value
from .execute import IN_MEMORY, SQL_PUSHDOWN, Query, QueryPlan, execute_query, plan_query
from .parser import parse_filter
from .sql import translate_sql, translate_where

__all__ = [
    "Binary",
    "BinaryOp",
    "Expr",
    "FieldRef",
    "IN_MEMORY",
    "Literal",
    "Query",
    "QueryPlan",
    "SQL_PUSHDOWN",
    "Unary",
    "UnaryOp",
    "check_value",
    "evaluate",
    "evaluate_value",
    "execute_query",
    "parse_filter",
    "plan_query",
    "pretty",
    "translate_sql",
    "translate_where",
    "type_check",
]
