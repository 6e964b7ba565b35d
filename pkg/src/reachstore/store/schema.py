"""Relational mapping: table-per-class with flattened inheritance.

Every live class gets its own table holding all of its slots, superclass
slots included. References are stored as sequence numbers; the
``refmeta`` side table records each reference's store and class.
"""

from __future__ import annotations

import math
import re
from typing import Any

from ..errors import Unsupported
from ..metamodel import FieldSpec, Registry, RegisteredClass
from .minisql import KEYWORDS

REFMETA = "refmeta"
META = "reachstore_meta"

_SQL92_RESERVED = {
    "ALL", "ALTER", "AS", "ASC", "BETWEEN", "BY", "CASE", "CAST", "CHECK",
    "COLUMN", "CONSTRAINT", "CROSS", "DEFAULT", "DESC", "DISTINCT", "ELSE",
    "END", "EXISTS", "FOREIGN", "FULL", "GROUP", "HAVING", "IN", "INNER",
    "JOIN", "LEFT", "LIKE", "LIMIT", "ON", "ORDER", "OUTER", "REFERENCES",
    "RIGHT", "THEN", "UNION", "UNIQUE", "USER", "USING", "WHEN", "WITH",
}
RESERVED = KEYWORDS | _SQL92_RESERVED

_SIMPLE_IDENT = re.compile(r"[a-z_][a-z0-9_]*\Z")

SQL_TYPES = {
    "int": "BIGINT",
    "long": "BIGINT",
    "double": "DOUBLE PRECISION",
    "bool": "BOOLEAN",
    "str": "VARCHAR",
    "ref": "BIGINT",
}


def quote_ident(name: str) -> str:
    if _SIMPLE_IDENT.match(name) and name.upper() not in RESERVED:
        return name
    return '"' + name.replace('"', '""') + '"'


def _sanitize(name: str) -> str:
    out = re.sub(r"[^a-z0-9_]", "_", name.lower())
    if not out or out[0].isdigit():
        out = "t_" + out
    if out.upper() in RESERVED or out in (REFMETA, META):
        out += "_t"
    return out


def table_names(registry: Registry) -> dict[int, str]:
    """Deterministic class id -> table name.

    Retired classes keep their names reserved so that table names never
    shift as the registry grows.
    """
    names: dict[int, str] = {}
    used: set[str] = set()
    for rc in registry:
        name = _sanitize(rc.name)
        if name in used:
            name = f"{name}_{rc.class_id}"
        used.add(name)
        names[rc.class_id] = name
    return names


def column_name(field: FieldSpec) -> str:
    if field.name.lower() == "oid":
        raise Unsupported("a field named 'oid' collides with the key column")
    return quote_ident(field.name)


def child_table(table: str, field: FieldSpec) -> str:
    return f"{table}__{_sanitize(field.name)}"


def class_ddl(table: str, rc: RegisteredClass) -> list[str]:
    cols = ["oid BIGINT PRIMARY KEY"]
    children = []
    for f in rc.slots:
        if f.kind.is_reflist:
            children.append(
                f"CREATE TABLE {child_table(table, f)} "
                "(parent_oid BIGINT, idx BIGINT, target BIGINT, PRIMARY KEY (parent_oid, idx))"
            )
        else:
            cols.append(f"{column_name(f)} {SQL_TYPES[f.kind.base]}")
    return [f"CREATE TABLE {table} ({', '.join(cols)})"] + children


REFMETA_DDL = (
    f"CREATE TABLE {REFMETA} (parent_oid BIGINT, slot BIGINT, idx BIGINT, "
    "store VARCHAR, class_id BIGINT, PRIMARY KEY (parent_oid, slot, idx))"
)
META_DDL = f"CREATE TABLE {META} (name VARCHAR PRIMARY KEY, value VARCHAR)"


def has_refs(rc: RegisteredClass) -> bool:
    return any(f.kind.base in ("ref", "reflist") for f in rc.slots)


def create_schema(registry: Registry) -> list[str]:
    """DDL for every live class in the registry, in class id order."""
    names = table_names(registry)
    ddl: list[str] = []
    for rc in registry.live_classes():
        ddl.extend(class_ddl(names[rc.class_id], rc))
    if any(has_refs(rc) for rc in registry.live_classes()):
        ddl.append(REFMETA_DDL)
    return ddl


def sql_literal(value: Any) -> str:
    if value is None:
        return "NULL"
    if value is True:
        return "TRUE"
    if value is False:
        return "FALSE"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if math.isnan(value):
            return "(0.0 / 0.0)"
        if math.isinf(value):
            return "1e999" if value > 0 else "-1e999"
        return repr(value)
    if isinstance(value, str):
        return "'" + value.replace("'", "''") + "'"
    raise Unsupported(f"no SQL literal for {type(value).__name__}")
