"""A miniature relational engine for the SQL-92 subset the store emits.

Supports ``CREATE TABLE``, ``DROP TABLE``, ``INSERT``, ``UPDATE``, ``DELETE``
and single-table ``SELECT ... WHERE``, with SQL three-valued logic. It shares
no code with the filter-language evaluator so the two can check each other.

Strings compare by their UTF-8 bytes. Integer division truncates toward
zero and raises on a zero divisor; double division follows IEEE-754.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Any

from ..errors import SqlError


class SqlDivisionByZero(SqlError):
    pass


KEYWORDS = {
    "SELECT", "FROM", "WHERE", "AND", "OR", "NOT", "NULL", "TRUE", "FALSE",
    "IS", "CREATE", "TABLE", "DROP", "INSERT", "INTO", "VALUES", "UPDATE",
    "SET", "DELETE", "PRIMARY", "KEY", "COLLATE", "BIGINT", "DOUBLE",
    "PRECISION", "BOOLEAN", "VARCHAR",
}

COLUMN_TYPES = ("BIGINT", "DOUBLE PRECISION", "BOOLEAN", "VARCHAR")

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<string>'(?:[^']|'')*')
  | (?P<qident>"(?:[^"]|"")+")
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op><>|!=|<=|>=|[=<>+\-*/(),;])
    """,
    re.VERBOSE,
)


@dataclass
class Tok:
    kind: str  # number, string, ident, kw, op, eof
    text: str
    value: Any = None


def tokenize(sql: str) -> list[Tok]:
    out = []
    pos = 0
    while pos < len(sql):
        m = _TOKEN_RE.match(sql, pos)
        if m is None:
            raise SqlError(f"unexpected character {sql[pos]!r} at {pos}")
        pos = m.end()
        kind = m.lastgroup
        text = m.group()
        if kind == "ws":
            continue
        if kind == "number":
            is_float = any(c in text for c in ".eE")
            out.append(Tok("number", text, float(text) if is_float else int(text)))
        elif kind == "string":
            out.append(Tok("string", text, text[1:-1].replace("''", "'")))
        elif kind == "qident":
            out.append(Tok("ident", text, text[1:-1].replace('""', '"')))
        elif kind == "ident":
            if text.upper() in KEYWORDS:
                out.append(Tok("kw", text.upper()))
            else:
                out.append(Tok("ident", text, text.lower()))
        else:
            out.append(Tok("op", "<>" if text == "!=" else text))
    out.append(Tok("eof", ""))
    return out


# -- expression nodes (tuples keep the evaluator small) ---------------------
# ("lit", v) ("col", name) ("not", e) ("and", a, b) ("or", a, b)
# ("cmp", op, a, b) ("isnull", e, negated) ("arith", op, a, b) ("neg", e)


class _Parser:
    def __init__(self, sql: str):
        self.toks = tokenize(sql)
        self.i = 0

    def peek(self) -> Tok:
        return self.toks[self.i]

    def next(self) -> Tok:
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def accept_kw(self, *words: str) -> bool:
        tok = self.peek()
        if tok.kind == "kw" and tok.text == words[0]:
            save = self.i
            for w in words:
                t = self.next()
                if t.kind != "kw" or t.text != w:
                    self.i = save
                    return False
            return True
        return False

    def expect_kw(self, *words: str) -> None:
        if not self.accept_kw(*words):
            raise SqlError(f"expected {' '.join(words)} near {self.peek().text!r}")

    def accept_op(self, op: str) -> bool:
        tok = self.peek()
        if tok.kind == "op" and tok.text == op:
            self.i += 1
            return True
        return False

    def expect_op(self, op: str) -> None:
        if not self.accept_op(op):
            raise SqlError(f"expected {op!r} near {self.peek().text!r}")

    def ident(self) -> str:
        tok = self.next()
        if tok.kind != "ident":
            raise SqlError(f"expected identifier, got {tok.text!r}")
        return tok.value

    # statements

    def statement(self):
        tok = self.peek()
        if tok.kind != "kw":
            raise SqlError(f"unexpected {tok.text!r}")
        if tok.text == "CREATE":
            stmt = self.create()
        elif tok.text == "DROP":
            self.next()
            self.expect_kw("TABLE")
            stmt = ("drop", self.ident())
        elif tok.text == "INSERT":
            stmt = self.insert()
        elif tok.text == "UPDATE":
            stmt = self.update()
        elif tok.text == "DELETE":
            self.next()
            self.expect_kw("FROM")
            table = self.ident()
            where = self.expr() if self.accept_kw("WHERE") else None
            stmt = ("delete", table, where)
        elif tok.text == "SELECT":
            stmt = self.select()
        else:
            raise SqlError(f"unsupported statement {tok.text}")
        self.accept_op(";")
        if self.peek().kind != "eof":
            raise SqlError(f"trailing input near {self.peek().text!r}")
        return stmt

    def create(self):
        self.expect_kw("CREATE")
        self.expect_kw("TABLE")
        name = self.ident()
        self.expect_op("(")
        columns: list[tuple[str, str]] = []
        pk: list[str] = []
        while True:
            if self.accept_kw("PRIMARY", "KEY"):
                self.expect_op("(")
                pk.append(self.ident())
                while self.accept_op(","):
                    pk.append(self.ident())
                self.expect_op(")")
            else:
                col = self.ident()
                columns.append((col, self.column_type()))
                if self.accept_kw("PRIMARY", "KEY"):
                    pk.append(col)
            if not self.accept_op(","):
                break
        self.expect_op(")")
        return ("create", name, columns, pk)

    def column_type(self) -> str:
        if self.accept_kw("DOUBLE", "PRECISION"):
            return "DOUBLE PRECISION"
        tok = self.next()
        if tok.kind == "kw" and tok.text in ("BIGINT", "BOOLEAN", "VARCHAR"):
            return tok.text
        raise SqlError(f"unknown column type {tok.text!r}")

    def insert(self):
        self.expect_kw("INSERT")
        self.expect_kw("INTO")
        table = self.ident()
        self.expect_op("(")
        cols = [self.ident()]
        while self.accept_op(","):
            cols.append(self.ident())
        self.expect_op(")")
        self.expect_kw("VALUES")
        self.expect_op("(")
        vals = [self.expr()]
        while self.accept_op(","):
            vals.append(self.expr())
        self.expect_op(")")
        if len(cols) != len(vals):
            raise SqlError("column/value count mismatch")
        return ("insert", table, cols, vals)

    def update(self):
        self.expect_kw("UPDATE")
        table = self.ident()
        self.expect_kw("SET")
        sets = []
        while True:
            col = self.ident()
            self.expect_op("=")
            sets.append((col, self.expr()))
            if not self.accept_op(","):
                break
        where = self.expr() if self.accept_kw("WHERE") else None
        return ("update", table, sets, where)

    def select(self):
        self.expect_kw("SELECT")
        if self.accept_op("*"):
            cols = None
        else:
            cols = [self.ident()]
            while self.accept_op(","):
                cols.append(self.ident())
        self.expect_kw("FROM")
        table = self.ident()
        where = self.expr() if self.accept_kw("WHERE") else None
        return ("select", table, cols, where)

    # expressions

    def expr(self):
        node = self.and_()
        while self.accept_kw("OR"):
            node = ("or", node, self.and_())
        return node

    def and_(self):
        node = self.not_()
        while self.accept_kw("AND"):
            node = ("and", node, self.not_())
        return node

    def not_(self):
        if self.accept_kw("NOT"):
            return ("not", self.not_())
        return self.comparison()

    def comparison(self):
        node = self.additive()
        tok = self.peek()
        if tok.kind == "op" and tok.text in ("=", "<>", "<", "<=", ">", ">="):
            self.next()
            return ("cmp", tok.text, node, self.additive())
        if self.accept_kw("IS"):
            negated = self.accept_kw("NOT")
            self.expect_kw("NULL")
            return ("isnull", node, negated)
        return node

    def additive(self):
        node = self.multiplicative()
        while True:
            tok = self.peek()
            if tok.kind == "op" and tok.text in ("+", "-"):
                self.next()
                node = ("arith", tok.text, node, self.multiplicative())
            else:
                return node

    def multiplicative(self):
        node = self.unary()
        while True:
            tok = self.peek()
            if tok.kind == "op" and tok.text in ("*", "/"):
                self.next()
                node = ("arith", tok.text, node, self.unary())
            else:
                return node

    def unary(self):
        if self.accept_op("-"):
            return ("neg", self.unary())
        if self.accept_op("+"):
            return self.unary()
        return self.primary()

    def primary(self):
        tok = self.next()
        if tok.kind in ("number", "string"):
            node = ("lit", tok.value)
        elif tok.kind == "kw" and tok.text in ("TRUE", "FALSE", "NULL"):
            node = ("lit", {"TRUE": True, "FALSE": False, "NULL": None}[tok.text])
        elif tok.kind == "ident":
            node = ("col", tok.value)
        elif tok.kind == "op" and tok.text == "(":
            node = self.expr()
            self.expect_op(")")
        else:
            raise SqlError(f"unexpected {tok.text!r} in expression")
        if self.accept_kw("COLLATE"):
            self.ident()  # byte-wise comparison is the only collation
        return node


def parse(sql: str):
    return _Parser(sql).statement()


# -- evaluation -------------------------------------------------------------


def _is_num(v: Any) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _eval(node, row: dict[str, Any]) -> Any:
    tag = node[0]
    if tag == "lit":
        return node[1]
    if tag == "col":
        try:
            return row[node[1]]
        except KeyError:
            raise SqlError(f"unknown column {node[1]!r}") from None
    if tag == "and":
        a, b = _eval(node[1], row), _eval(node[2], row)
        _bool_operand(a), _bool_operand(b)
        if a is False or b is False:
            return False
        if a is None or b is None:
            return None
        return True
    if tag == "or":
        a, b = _eval(node[1], row), _eval(node[2], row)
        _bool_operand(a), _bool_operand(b)
        if a is True or b is True:
            return True
        if a is None or b is None:
            return None
        return False
    if tag == "not":
        a = _eval(node[1], row)
        _bool_operand(a)
        return None if a is None else not a
    if tag == "isnull":
        v = _eval(node[1], row)
        return (v is not None) if node[2] else (v is None)
    if tag == "cmp":
        return _compare(node[1], _eval(node[2], row), _eval(node[3], row))
    if tag == "neg":
        v = _eval(node[1], row)
        if v is None:
            return None
        if not _is_num(v):
            raise SqlError("negation of a non-number")
        return -v
    if tag == "arith":
        return _arith(node[1], _eval(node[2], row), _eval(node[3], row))
    raise SqlError(f"bad node {tag}")


def _bool_operand(v: Any) -> None:
    if v is not None and not isinstance(v, bool):
        raise SqlError("boolean operator applied to a non-boolean")


def _compare(op: str, a: Any, b: Any) -> bool | None:
    if a is None or b is None:
        return None
    if isinstance(a, str) and isinstance(b, str):
        a, b = a.encode("utf-8"), b.encode("utf-8")
    elif isinstance(a, bool) and isinstance(b, bool):
        if op not in ("=", "<>"):
            raise SqlError("booleans only support = and <>")
    elif not (_is_num(a) and _is_num(b)):
        raise SqlError(f"cannot compare {type(a).__name__} with {type(b).__name__}")
    if op == "=":
        return a == b
    if op == "<>":
        return a != b
    if op == "<":
        return a < b
    if op == "<=":
        return a <= b
    if op == ">":
        return a > b
    return a >= b


def _arith(op: str, a: Any, b: Any) -> Any:
    if a is None or b is None:
        return None
    if not (_is_num(a) and _is_num(b)):
        raise SqlError("arithmetic on a non-number")
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if isinstance(a, int) and isinstance(b, int):
        if b == 0:
            raise SqlDivisionByZero("integer division by zero")
        q = abs(a) // abs(b)
        return q if (a >= 0) == (b >= 0) else -q
    a, b = float(a), float(b)
    if b == 0.0:
        if a == 0.0 or math.isnan(a):
            return math.nan
        return math.copysign(math.inf, a) * math.copysign(1.0, b)
    return a / b


def _coerce(col_type: str, v: Any) -> Any:
    if v is None:
        return None
    if col_type == "BIGINT":
        if isinstance(v, bool) or not isinstance(v, int):
            raise SqlError(f"BIGINT column given {v!r}")
        return v
    if col_type == "DOUBLE PRECISION":
        if not _is_num(v):
            raise SqlError(f"DOUBLE PRECISION column given {v!r}")
        return float(v)
    if col_type == "BOOLEAN":
        if not isinstance(v, bool):
            raise SqlError(f"BOOLEAN column given {v!r}")
        return v
    if not isinstance(v, str):
        raise SqlError(f"VARCHAR column given {v!r}")
    return v


@dataclass
class Table:
    name: str
    columns: list[tuple[str, str]]
    pk: list[str]
    rows: dict[tuple, list[Any]] = field(default_factory=dict)

    def __post_init__(self):
        self.col_index = {c: i for i, (c, _) in enumerate(self.columns)}
        self.pk_index = [self.col_index[c] for c in self.pk]
        self._prefix: dict[Any, set[tuple]] | None = None

    def put_row(self, key: tuple, row: list[Any]) -> None:
        if self._prefix is not None and key not in self.rows:
            self._prefix.setdefault(key[0], set()).add(key)
        self.rows[key] = row

    def del_row(self, key: tuple) -> None:
        del self.rows[key]
        if self._prefix is not None:
            self._prefix[key[0]].discard(key)

    def reset_rows(self, rows: dict[tuple, list[Any]]) -> None:
        self.rows = rows
        self._prefix = None

    def _prefix_keys(self, value: Any) -> list[tuple]:
        if self._prefix is None:
            idx: dict[Any, set[tuple]] = {}
            for k in self.rows:
                idx.setdefault(k[0], set()).add(k)
            self._prefix = idx
        return sorted(self._prefix.get(value, ()))

    def key(self, row: list[Any]) -> tuple:
        return tuple(row[i] for i in self.pk_index)

    def as_dict(self, row: list[Any]) -> dict[str, Any]:
        return {c: row[i] for i, (c, _) in enumerate(self.columns)}

    def match(self, where, row: list[Any]) -> bool:
        if where is None:
            return True
        return _eval(where, self.as_dict(row)) is True

    def candidate_keys(self, where) -> list[tuple]:
        # Index probe when a top-level conjunct is `first_pk_col = literal`.
        for node in _conjuncts(where):
            if (
                node[0] == "cmp"
                and node[1] == "="
                and node[2] == ("col", self.pk[0])
                and node[3][0] == "lit"
            ):
                value = node[3][1]
                if len(self.pk) == 1:
                    return [(value,)] if (value,) in self.rows else []
                return self._prefix_keys(value)
        return sorted(self.rows)


def _conjuncts(where) -> list:
    if where is None:
        return []
    if where[0] == "and":
        return _conjuncts(where[1]) + _conjuncts(where[2])
    return [where]


@dataclass
class Result:
    columns: list[str]
    rows: list[tuple]
    rowcount: int = 0


class Engine:
    """In-memory tables plus one level of transaction (copy-on-write)."""

    def __init__(self):
        self.tables: dict[str, Table] = {}
        self._snapshot: dict[str, Table | None] | None = None
        self._row_snap: dict[str, dict] | None = None

    # transactions

    def begin(self) -> None:
        if self._snapshot is not None:
            raise SqlError("transaction already open")
        self._snapshot = dict(self.tables)
        self._row_snap = {}

    def commit(self) -> None:
        self._snapshot = None
        self._row_snap = None

    def rollback(self) -> None:
        if self._snapshot is None:
            return
        for name, rows in self._row_snap.items():
            table = self._snapshot.get(name)
            if table is not None:
                table.reset_rows(rows)
        self.tables = self._snapshot
        self._snapshot = None
        self._row_snap = None

    def _touch(self, table: Table) -> None:
        if self._row_snap is not None and table.name not in self._row_snap:
            self._row_snap[table.name] = dict(table.rows)

    # execution

    def table(self, name: str) -> Table:
        try:
            return self.tables[name]
        except KeyError:
            raise SqlError(f"no such table {name!r}") from None

    def has_table(self, name: str) -> bool:
        return name in self.tables

    def has_row(self, table: str, key: tuple) -> bool:
        return key in self.table(table).rows

    def execute(self, sql: str) -> Result:
        stmt = parse(sql)
        tag = stmt[0]
        if tag == "create":
            _, name, columns, pk = stmt
            if name in self.tables:
                raise SqlError(f"table {name!r} exists")
            if not pk:
                raise SqlError(f"table {name!r} needs a primary key")
            self.tables[name] = Table(name, columns, pk)
            return Result([], [])
        if tag == "drop":
            if stmt[1] not in self.tables:
                raise SqlError(f"no such table {stmt[1]!r}")
            del self.tables[stmt[1]]
            return Result([], [])
        if tag == "insert":
            return self._insert(*stmt[1:])
        if tag == "update":
            return self._update(*stmt[1:])
        if tag == "delete":
            table = self.table(stmt[1])
            self._touch(table)
            doomed = [k for k in table.candidate_keys(stmt[2]) if table.match(stmt[2], table.rows[k])]
            for k in doomed:
                table.del_row(k)
            return Result([], [], len(doomed))
        _, name, cols, where = stmt
        table = self.table(name)
        names = cols if cols is not None else [c for c, _ in table.columns]
        idx = []
        for c in names:
            if c not in table.col_index:
                raise SqlError(f"unknown column {c!r}")
            idx.append(table.col_index[c])
        rows = []
        for k in table.candidate_keys(where):
            row = table.rows[k]
            if table.match(where, row):
                rows.append(tuple(row[i] for i in idx))
        return Result(names, rows, len(rows))

    def _insert(self, name, cols, vals) -> Result:
        table = self.table(name)
        row: list[Any] = [None] * len(table.columns)
        for c, e in zip(cols, vals):
            if c not in table.col_index:
                raise SqlError(f"unknown column {c!r}")
            i = table.col_index[c]
            row[i] = _coerce(table.columns[i][1], _eval(e, {}))
        key = table.key(row)
        if any(v is None for v in key):
            raise SqlError("NULL primary key")
        if key in table.rows:
            raise SqlError(f"duplicate key {key} in {name}")
        self._touch(table)
        table.put_row(key, row)
        return Result([], [], 1)

    def _update(self, name, sets, where) -> Result:
        table = self.table(name)
        self._touch(table)
        n = 0
        for k in table.candidate_keys(where):
            row = table.rows[k]
            if not table.match(where, row):
                continue
            env = table.as_dict(row)
            new = list(row)
            for c, e in sets:
                if c not in table.col_index:
                    raise SqlError(f"unknown column {c!r}")
                i = table.col_index[c]
                new[i] = _coerce(table.columns[i][1], _eval(e, env))
            if table.key(new) != k:
                raise SqlError("primary key updates are not supported")
            table.rows[k] = new
            n += 1
        return Result([], [], n)
