"""Static typing of filter expressions against a registered class."""

from __future__ import annotations

from ..errors import TypeMismatch, UnknownField, UnregisteredClass
from ..metamodel import ANY_CLASS, Registry, RegisteredClass
from .ast import Binary, BinaryOp, Expr, FieldRef, Literal, Unary, UnaryOp

NUMERIC_RANK = {"int": 0, "long": 1, "double": 2}
I32 = 2**31


def widen(a: str, b: str) -> str:
    return a if NUMERIC_RANK[a] >= NUMERIC_RANK[b] else b


def is_numeric(t: str) -> bool:
    return t in NUMERIC_RANK


def type_check(expr: Expr, rc: RegisteredClass, registry: Registry | None = None) -> Expr:
    """Return a copy of ``expr`` with every node typed; the root must be bool.

    ``registry`` is needed only to follow multi-segment reference paths.
    """
    typed = _Checker(rc, registry).check(expr)
    if typed.type != "bool":
        raise TypeMismatch(f"filter must be boolean, got {typed.type}")
    return typed


def check_value(expr: Expr, rc: RegisteredClass, registry: Registry | None = None) -> Expr:
    """Type ``expr`` without requiring a boolean root (mapper expressions)."""
    return _Checker(rc, registry).check(expr)


class _Checker:
    def __init__(self, rc: RegisteredClass, registry: Registry | None):
        self.rc = rc
        self.registry = registry

    def check(self, e: Expr) -> Expr:
        if isinstance(e, Literal):
            t = e.kind
            if t == "int" and not -I32 <= e.value < I32:
                t = "long"
            return Literal(e.value, e.kind, t)
        if isinstance(e, FieldRef):
            return self.field(e)
        if isinstance(e, Unary):
            inner = self.check(e.operand)
            if e.op is UnaryOp.NOT:
                if inner.type != "bool":
                    raise TypeMismatch(f"'!' needs a boolean operand, got {inner.type}")
                return Unary(e.op, inner, "bool")
            if not is_numeric(inner.type):
                raise TypeMismatch(f"unary '-' needs a number, got {inner.type}")
            return Unary(e.op, inner, inner.type)
        lhs, rhs = self.check(e.lhs), self.check(e.rhs)
        lt, rt = lhs.type, rhs.type
        op = e.op
        if op.is_logical:
            if lt != "bool" or rt != "bool":
                raise TypeMismatch(f"'{op.value}' needs boolean operands, got {lt} and {rt}")
            return Binary(op, lhs, rhs, "bool")
        if op.is_comparison:
            if is_numeric(lt) and is_numeric(rt):
                pass
            elif lt == rt == "str":
                pass
            elif lt == rt == "bool":
                if op not in (BinaryOp.EQ, BinaryOp.NE):
                    raise TypeMismatch(f"booleans support only == and !=, not '{op.value}'")
            else:
                raise TypeMismatch(f"cannot compare {lt} with {rt} using '{op.value}'")
            return Binary(op, lhs, rhs, "bool")
        if not (is_numeric(lt) and is_numeric(rt)):
            raise TypeMismatch(f"'{op.value}' needs numeric operands, got {lt} and {rt}")
        return Binary(op, lhs, rhs, widen(lt, rt))

    def field(self, e: FieldRef) -> FieldRef:
        rc = self.rc
        resolved = []
        for i, name in enumerate(e.path):
            slot = rc.slot_index.get(name)
            if slot is None:
                raise UnknownField(f"{rc.name}.{name}")
            kind = rc.slots[slot].kind
            resolved.append((rc.name, slot))
            last = i == len(e.path) - 1
            if kind.is_reflist:
                raise TypeMismatch(f"list field {rc.name}.{name} cannot appear in a filter")
            if kind.is_ref:
                if last:
                    raise TypeMismatch(f"reference field {rc.name}.{name} is not a value")
                if kind.target == ANY_CLASS:
                    raise TypeMismatch(f"{rc.name}.{name} is untyped and cannot be followed")
                if self.registry is None:
                    raise TypeMismatch(f"cannot follow {rc.name}.{name} without a registry")
                try:
                    rc = self.registry.by_name(kind.target)
                except UnregisteredClass:
                    raise UnknownField(f"{rc.name}.{name} -> {kind.target}") from None
                continue
            if not last:
                raise TypeMismatch(f"{rc.name}.{name} is not a reference")
            return FieldRef(e.path, kind.base, tuple(resolved))
        raise AssertionError("empty path")
