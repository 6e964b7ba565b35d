"""In-memory evaluation of typed filters.

Evaluation is strict: both operands of every operator are evaluated.
Arithmetic propagates Null; any comparison with a Null operand is false,
and a Null boolean counts as false wherever a truth value is needed.
"""

from __future__ import annotations

import math
from typing import Any

from ..errors import EvalError
from ..metamodel import ObjectId
from .ast import BinaryOp, Expr, FieldRef, Literal, Unary, UnaryOp


def evaluate(expr: Expr, instance) -> bool:
    return evaluate_value(expr, instance) is True


def evaluate_value(expr: Expr, instance) -> Any:
    if isinstance(expr, Literal):
        return expr.value
    if isinstance(expr, FieldRef):
        return _read_path(expr, instance)
    if isinstance(expr, Unary):
        v = evaluate_value(expr.operand, instance)
        if expr.op is UnaryOp.NOT:
            return v is not True
        return None if v is None else -v
    a = evaluate_value(expr.lhs, instance)
    b = evaluate_value(expr.rhs, instance)
    op = expr.op
    if op is BinaryOp.AND:
        return a is True and b is True
    if op is BinaryOp.OR:
        return a is True or b is True
    if op.is_comparison:
        if a is None or b is None:
            return False
        return _compare(op, a, b)
    if a is None or b is None:
        return None
    return arith(op, a, b)


def _read_path(ref: FieldRef, instance) -> Any:
    if ref.slots:
        value = instance.jdo_get_raw(ref.slots[0][1])
    else:
        value = instance.raw(ref.path[0])
    for name in ref.path[1:]:
        if value is None:
            return None
        if isinstance(value, ObjectId):
            pm = instance.jdo_manager
            if pm is None:
                raise EvalError(f"cannot follow {ref.dotted}: instance is not managed")
            value = pm.get_object_by_id(value)
        instance = value
        value = instance.raw(name)
    return value


def _compare(op: BinaryOp, a: Any, b: Any) -> bool:
    if op is BinaryOp.EQ:
        return a == b
    if op is BinaryOp.NE:
        return a != b
    if op is BinaryOp.LT:
        return a < b
    if op is BinaryOp.LE:
        return a <= b
    if op is BinaryOp.GT:
        return a > b
    return a >= b


def arith(op: BinaryOp, a: Any, b: Any) -> Any:
    if op is BinaryOp.ADD:
        return a + b
    if op is BinaryOp.SUB:
        return a - b
    if op is BinaryOp.MUL:
        return a * b
    if isinstance(a, int) and isinstance(b, int):
        if b == 0:
            raise EvalError("integer division by zero")
        q = abs(a) // abs(b)
        return q if (a < 0) == (b < 0) else -q
    return ieee_div(float(a), float(b))


def ieee_div(a: float, b: float) -> float:
    if b != 0.0:
        return a / b
    if a != a or a == 0.0:
        return math.nan
    return math.inf if (a > 0) == (math.copysign(1.0, b) > 0) else -math.inf
