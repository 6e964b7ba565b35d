"""Independent oracles shared by the query tests and the acceptance suite.

Expressions are plain tuples so nothing here depends on the package's AST:

    ("lit", value, type)  ("field", name, type)  ("!", e)  ("neg", e)
    (op, lhs, rhs) with op in || && == != < <= > >= + - * /
"""

from __future__ import annotations

import math
import random
from collections import deque
from fractions import Fraction

import numpy as np

FIELDS = {"i": "int", "l": "long", "d": "double", "b": "bool", "s": "str"}
REC_FIELDS = "i:int l:long d:double b:bool s:str"
NUMERIC = ("int", "long", "double")
RANK = {"int": 0, "long": 1, "double": 2}
CMP = ("==", "!=", "<", "<=", ">", ">=")
ARITH = ("+", "-", "*", "/")
PREC = {"||": 1, "&&": 2, **{c: 3 for c in CMP}, "+": 4, "-": 4, "*": 5, "/": 5}
STRINGS = ("", "a", "ab", "b", "it's", "z\\", "Ä")


class OracleError(Exception):
    """Integer division by zero in the reference evaluator."""


# -- generation ----------------------------------------------------------------


def _literal(rng: random.Random, t: str):
    if t == "int":
        return ("lit", rng.choice([0, 1, 2, 3, 7, 10, 20, 100, rng.randint(0, 1000)]), "int")
    if t == "long":
        return ("lit", rng.choice([3_000_000_000, 2**40, 2**31]), "long")
    if t == "double":
        return ("lit", rng.choice([0.0, 0.5, 1.5, 2.0, 20.0, 1e3, 1e-05, float(rng.randint(0, 50))]), "double")
    if t == "bool":
        return ("lit", rng.random() < 0.5, "bool")
    return ("lit", rng.choice(STRINGS), "str")


def gen_value(rng: random.Random, t: str, depth: int):
    """A random expression of numeric type ``t``."""
    if depth <= 0 or rng.random() < 0.35:
        names = [n for n, ft in FIELDS.items() if ft == t]
        if names and rng.random() < 0.6:
            return ("field", names[0], t)
        if t == "long" and rng.random() < 0.5:
            return ("field", "i", "int")
        return _literal(rng, t)
    if rng.random() < 0.12:
        return ("neg", gen_value(rng, t, depth - 1))
    op = rng.choice(ARITH)
    # operand types whose widening is t
    lower = [x for x in NUMERIC if RANK[x] <= RANK[t]]
    a = rng.choice(lower)
    b = t if RANK[a] < RANK[t] else rng.choice(lower)
    if rng.random() < 0.5:
        a, b = b, a
    return (op, gen_value(rng, a, depth - 1), gen_value(rng, b, depth - 1))


def gen_bool(rng: random.Random, depth: int):
    """A random well-typed boolean expression."""
    r = rng.random()
    if depth <= 0 or r < 0.15:
        return ("field", "b", "bool") if rng.random() < 0.6 else _literal(rng, "bool")
    if r < 0.35:
        return (rng.choice(("&&", "||")), gen_bool(rng, depth - 1), gen_bool(rng, depth - 1))
    if r < 0.45:
        return ("!", gen_bool(rng, depth - 1))
    if r < 0.55:
        lhs = ("field", "s", "str") if rng.random() < 0.7 else _literal(rng, "str")
        return (rng.choice(CMP), lhs, _literal(rng, "str") if rng.random() < 0.8 else ("field", "s", "str"))
    if r < 0.65:
        return (rng.choice(("==", "!=")), gen_bool(rng, depth - 1), gen_bool(rng, depth - 1))
    ta, tb = rng.choice(NUMERIC), rng.choice(NUMERIC)
    return (rng.choice(CMP), gen_value(rng, ta, depth - 1), gen_value(rng, tb, depth - 1))


def type_of(e) -> str:
    tag = e[0]
    if tag in ("lit", "field"):
        return e[2]
    if tag == "!" or tag in CMP or tag in ("&&", "||"):
        return "bool"
    if tag == "neg":
        return type_of(e[1])
    a, b = type_of(e[1]), type_of(e[2])
    return a if RANK[a] >= RANK[b] else b


# -- rendering -------------------------------------------------------------------


def _lit_text(value, t: str) -> str:
    if t == "bool":
        return "true" if value else "false"
    if t == "str":
        return "'" + value.replace("\\", "\\\\").replace("'", "\\'") + "'"
    if t == "double":
        text = repr(float(value))
        return text if ("." in text or "e" in text) else text + ".0"
    return str(value)


def render_full(e) -> str:
    """Every operator parenthesized."""
    tag = e[0]
    if tag == "lit":
        return _lit_text(e[1], e[2])
    if tag == "field":
        return e[1]
    if tag == "!":
        return f"(!{render_full(e[1])})"
    if tag == "neg":
        return f"(-{render_full(e[1])})"
    return f"({render_full(e[1])} {tag} {render_full(e[2])})"


def _prec(e) -> int:
    tag = e[0]
    if tag in ("lit", "field"):
        return 7
    if tag in ("!", "neg"):
        return 6
    return PREC[tag]


def render_min(e, rng: random.Random | None = None) -> str:
    """Only the parentheses precedence requires, with random spacing."""
    sp = (lambda: rng.choice(["", " ", "  "])) if rng else (lambda: " ")
    tag = e[0]
    if tag == "lit":
        return _lit_text(e[1], e[2])
    if tag == "field":
        return e[1]
    if tag in ("!", "neg"):
        inner = render_min(e[1], rng)
        if _prec(e[1]) < 7:
            inner = f"({inner})"
        return ("!" if tag == "!" else "-") + inner
    p = PREC[tag]
    lhs, rhs = render_min(e[1], rng), render_min(e[2], rng)
    if _prec(e[1]) < p or (p == 3 and _prec(e[1]) == 3):
        lhs = f"({lhs})"
    if _prec(e[2]) <= p:
        rhs = f"({rhs})"
    return f"{lhs}{sp()}{tag}{sp()}{rhs}"


# -- reference evaluation ----------------------------------------------------------


def _ieee_div(a: float, b: float) -> float:
    with np.errstate(all="ignore"):
        return float(np.float64(a) / np.float64(b))


def oracle_value(e, rec: dict):
    tag = e[0]
    if tag == "lit":
        return e[1]
    if tag == "field":
        return rec[e[1]]
    if tag == "!":
        return oracle_value(e[1], rec) is not True
    if tag == "neg":
        v = oracle_value(e[1], rec)
        return None if v is None else -v
    a, b = oracle_value(e[1], rec), oracle_value(e[2], rec)
    if tag == "&&":
        return a is True and b is True
    if tag == "||":
        return a is True or b is True
    if tag in CMP:
        if a is None or b is None:
            return False
        return {
            "==": a == b, "!=": a != b, "<": a < b, "<=": a <= b, ">": a > b, ">=": a >= b,
        }[tag]
    if a is None or b is None:
        return None
    if tag == "+":
        return a + b
    if tag == "-":
        return a - b
    if tag == "*":
        return a * b
    if type_of(e) != "double":
        if b == 0:
            raise OracleError
        return int(Fraction(a, b))
    return _ieee_div(float(a), float(b))


def oracle_select(e, records: list[dict]) -> set[int]:
    """Indices of records that satisfy ``e``; raises OracleError if any row faults."""
    out = set()
    for idx, rec in enumerate(records):
        if oracle_value(e, rec) is True:
            out.add(idx)
    return out


# -- datasets ---------------------------------------------------------------------


def random_record(rng: random.Random, null_rate: float = 0.1) -> dict:
    def maybe(v):
        return None if rng.random() < null_rate else v

    return {
        "i": maybe(rng.randint(-20, 20)),
        "l": maybe(rng.choice([rng.randint(-10**6, 10**6), 3_000_000_000, 0])),
        "d": maybe(rng.choice([rng.uniform(-50, 50), 0.0, -0.0, 20.0, math.inf, -math.inf, math.nan])),
        "b": maybe(rng.random() < 0.5),
        "s": maybe(rng.choice(STRINGS)),
    }


# -- lifecycle --------------------------------------------------------------------

# Declared transition table.
LIFECYCLE = {
    "Transient": {"MakePersistent": "PersistentNew"},
    "PersistentNew": {
        "ReadField": "PersistentNew",
        "WriteField": "PersistentNew",
        "Delete": "PersistentNewDeleted",
        "Commit": "PersistentClean",
        "Rollback": "Transient",
    },
    "Hollow": {"ReadField": "PersistentClean", "Commit": "Hollow", "Rollback": "Hollow", "Evict": "Hollow"},
    "PersistentClean": {
        "ReadField": "PersistentClean",
        "WriteField": "PersistentDirty",
        "Delete": "PersistentDeleted",
        "Commit": "PersistentClean",
        "Rollback": "PersistentClean",
        "Evict": "Hollow",
    },
    "PersistentDirty": {
        "ReadField": "PersistentDirty",
        "WriteField": "PersistentDirty",
        "Delete": "PersistentDeleted",
        "Commit": "PersistentClean",
        "Rollback": "Hollow",
    },
    "PersistentDeleted": {"Commit": "Transient", "Rollback": "Hollow"},
    "PersistentNewDeleted": {"Commit": "Transient", "Rollback": "Transient"},
}


# -- object graphs ----------------------------------------------------------------


def random_graph(rng: random.Random, n: int):
    """Adjacency lists with cycles, sharing and unreachable parts."""
    nxt = [rng.randrange(n) if rng.random() < 0.7 else None for _ in range(n)]
    kids = [[rng.randrange(n) for _ in range(rng.choice((0, 0, 1, 2, 3)))] for _ in range(n)]
    return nxt, kids


def bfs_closure(root: int, nxt, kids) -> set[int]:
    seen, queue = {root}, deque([root])
    while queue:
        u = queue.popleft()
        for v in ([nxt[u]] if nxt[u] is not None else []) + kids[u]:
            if v not in seen:
                seen.add(v)
                queue.append(v)
    return seen
