from __future__ import annotations

import math
import random

import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from reachstore.errors import EvalError, FilterSyntaxError, TypeMismatch, UnknownField
from reachstore.query import (
    IN_MEMORY,
    SQL_PUSHDOWN,
    Binary,
    BinaryOp,
    FieldRef,
    Literal,
    Unary,
    UnaryOp,
    evaluate,
    execute_query,
    parse_filter,
    plan_query,
    pretty,
    translate_sql,
    type_check,
)

from conftest import desc, open_factory, registry_of
from oracles import (
    REC_FIELDS,
    OracleError,
    gen_bool,
    oracle_select,
    oracle_value,
    random_record,
    render_full,
    render_min,
)

REC = desc("Rec", REC_FIELDS + " other:ref:Rec many:reflist:Rec")


@pytest.fixture(scope="module")
def reg():
    r = registry_of(REC)
    r.freeze()
    return r


def typed(text, reg):
    return type_check(parse_filter(text), reg.by_name("Rec"), reg)


# -- parsing ---------------------------------------------------------------------


def F(name):
    return FieldRef((name,))


def L(v, kind):
    return Literal(v, kind)


@pytest.mark.parametrize(
    "text, tree",
    [
        ("a || b && c", Binary(BinaryOp.OR, F("a"), Binary(BinaryOp.AND, F("b"), F("c")))),
        ("1 + 2 * 3", Binary(BinaryOp.ADD, L(1, "int"), Binary(BinaryOp.MUL, L(2, "int"), L(3, "int")))),
        ("a - b - c", Binary(BinaryOp.SUB, Binary(BinaryOp.SUB, F("a"), F("b")), F("c"))),
        ("x + 1 < y * 2", Binary(BinaryOp.LT, Binary(BinaryOp.ADD, F("x"), L(1, "int")), Binary(BinaryOp.MUL, F("y"), L(2, "int")))),
        ("!a && b", Binary(BinaryOp.AND, Unary(UnaryOp.NOT, F("a")), F("b"))),
        ("-x * 2", Binary(BinaryOp.MUL, Unary(UnaryOp.NEG, F("x")), L(2, "int"))),
        ("a.b.c >= 1.5", Binary(BinaryOp.GE, FieldRef(("a", "b", "c")), L(1.5, "double"))),
        ("s != 'it\\'s'", Binary(BinaryOp.NE, F("s"), L("it's", "str"))),
        ("true", L(True, "bool")),
        ("2e3 == 2000.0", Binary(BinaryOp.EQ, L(2000.0, "double"), L(2000.0, "double"))),
    ],
)
def test_parse_trees(text, tree):
    assert parse_filter(text) == tree


@pytest.mark.parametrize(
    "text, position",
    [
        ("pt >", 4),
        ("a < b < c", 6),
        ("--x", 1),
        ("!!b", 1),
        ("(a", 2),
        ("a b", 2),
        ("'open", 0),
        ("a.", 2),
        ("99999999999999999999", 0),
        ("a # b", 2),
        ("", 0),
    ],
)
def test_syntax_errors_report_position(text, position):
    with pytest.raises(FilterSyntaxError) as info:
        parse_filter(text)
    assert info.value.position == position


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**32))
def test_minimal_and_full_parenthesization_agree(seed):
    rng = random.Random(seed)
    e = gen_bool(rng, 4)
    tree = parse_filter(render_full(e))
    assert parse_filter(render_min(e, rng)) == tree
    assert parse_filter(pretty(tree)) == tree


def test_pretty_renders_infinity_parseably():
    tree = Binary(BinaryOp.LT, F("d"), Literal(math.inf, "double"))
    assert pretty(tree) == "(d < 1e999)"
    assert parse_filter(pretty(tree)) == tree


# -- typing ----------------------------------------------------------------------


@pytest.mark.parametrize(
    "text",
    ["i", "s < 3", "b < true", "!i", "-b", "s + s", "i && b", "other > 1", "many == 1", "b == 1", "i.x > 1"],
)
def test_type_errors(text, reg):
    with pytest.raises(TypeMismatch):
        typed(text, reg)


def test_unknown_field(reg):
    with pytest.raises(UnknownField):
        typed("nope > 1", reg)
    with pytest.raises(UnknownField):
        typed("other.nope > 1", reg)


def test_widening_and_long_literals(reg):
    e = typed("i + l * 2.0 > 1", reg)
    assert e.lhs.type == "double" and e.lhs.rhs.type == "double"
    assert typed("i + 3000000000 > 0", reg).lhs.type == "long"
    assert typed("i + 7 > 0", reg).lhs.type == "int"


# -- evaluation ------------------------------------------------------------------


@pytest.mark.parametrize(
    "text, rec, expected",
    [
        ("i > 3", {"i": None}, False),
        ("!(i > 3)", {"i": None}, True),
        ("i + 1 == i + 1", {"i": None}, False),
        ("b", {"b": None}, False),
        ("!b", {"b": None}, True),
        ("i / 2 == -3", {"i": -7}, True),
        ("d / 0.0 > 1e300", {"d": 1.0}, True),
        ("d / -0.0 < 0.0", {"d": 1.0}, True),
        ("d != d", {"d": math.nan}, True),
        ("s < 'b'", {"s": "ab"}, True),
    ],
)
def test_evaluate_cases(text, rec, expected, reg):
    inst = reg.new("Rec", **rec)
    assert evaluate(typed(text, reg), inst) is expected


def test_integer_division_by_zero_is_an_error_even_when_short_circuit_would_hide_it(reg):
    inst = reg.new("Rec", i=0)
    with pytest.raises(EvalError):
        evaluate(typed("false && 1 / i == 0", reg), inst)


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32))
def test_evaluator_matches_reference(seed, reg):
    rng = random.Random(seed)
    e = gen_bool(rng, 4)
    tree = typed(render_min(e, rng), reg)
    for _ in range(20):
        rec = random_record(rng, null_rate=0.2)
        inst = reg.new("Rec", **rec)
        try:
            expected = oracle_value(e, rec) is True
        except OracleError:
            with pytest.raises(EvalError):
                evaluate(tree, inst)
            continue
        assert evaluate(tree, inst) is expected


# -- SQL translation ---------------------------------------------------------------


@pytest.mark.parametrize(
    "text, where",
    [
        ("d > 20.0", "(d > 20.0)"),
        ("i == 7 && s != 'x'", "((i = 7) AND (s <> 'x'))"),
        ("true", "(TRUE)"),
        ("b", "(b = TRUE)"),
        ("!b", "(NOT ((b = TRUE) AND (b IS NOT NULL)))"),
        ("!(i + l < 2)", "(NOT (((i + l) < 2) AND (i IS NOT NULL) AND (l IS NOT NULL)))"),
        ("-i < 3", "((-i) < 3)"),
        ("s == 'it\\'s'", "(s = 'it''s')"),
    ],
)
def test_sql_golden(text, where, reg):
    rc = reg.by_name("Rec")
    assert translate_sql(typed(text, reg), rc, reg) == f"SELECT oid FROM rec WHERE {where}"


def _store(tmp, records, backend="sql"):
    fac = open_factory(tmp, backend, REC)
    pm = fac.get_persistence_manager()
    with pm.transaction():
        insts = [pm.new("Rec", **r) for r in records]
        pm.make_persistent_all(insts)
    return fac, pm, insts


def test_planner_pushes_down_and_falls_back(tmp_path):
    fac, pm, insts = _store(tmp_path, [{"i": 1}, {"i": 5}])
    ext = pm.get_extent("Rec")
    plan = plan_query(pm, ext, "i > 3")
    assert plan.execution == SQL_PUSHDOWN and plan.explain == "SELECT oid FROM rec WHERE (i > 3)"
    path = plan_query(pm, ext, "other.i > 3")
    assert path.execution == IN_MEMORY and path.explain == "inmemory" and path.fallback_reason
    assert execute_query(pm, ext, "i > 3") == [insts[1].jdo_oid]


def test_file_backend_always_scans(tmp_path):
    fac, pm, _ = _store(tmp_path, [{"i": 1}], backend="file")
    assert plan_query(pm, pm.get_extent("Rec"), "i > 0").execution == IN_MEMORY


def test_path_filters_follow_references(tmp_path, backend):
    fac, pm, insts = _store(tmp_path, [{"i": 1}, {"i": 5}, {"i": 9}], backend)
    with pm.transaction():
        insts[0].other = insts[2]
        insts[1].other = insts[0]
    assert execute_query(pm, pm.get_extent("Rec"), "other.i > 3") == [insts[0].jdo_oid]
    assert execute_query(pm, pm.get_extent("Rec"), "other.other.i == 9") == [insts[1].jdo_oid]


def test_pending_changes_are_visible_to_pushdown(tmp_path):
    fac, pm, insts = _store(tmp_path, [{"i": 1}, {"i": 5}])
    pm.begin()
    insts[0].i = 10
    insts[1].i = 0
    fresh = pm.new("Rec", i=50)
    pm.make_persistent(fresh)
    got = execute_query(pm, pm.get_extent("Rec"), "i > 3", SQL_PUSHDOWN)
    assert got == [insts[0].jdo_oid, fresh.jdo_oid]
    pm.rollback()
    assert execute_query(pm, pm.get_extent("Rec"), "i > 3", SQL_PUSHDOWN) == [insts[1].jdo_oid]


@pytest.mark.parametrize("strategy", [IN_MEMORY, SQL_PUSHDOWN])
def test_division_by_zero_surfaces_on_both_paths(tmp_path, strategy):
    fac, pm, _ = _store(tmp_path, [{"i": 1}, {"i": 0}])
    with pytest.raises(EvalError):
        execute_query(pm, pm.get_extent("Rec"), "10 / i > 1", strategy)


@settings(max_examples=10, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(st.integers(0, 2**32))
def test_pushdown_matches_scan_and_reference(tmp_path_factory, seed):
    rng = random.Random(seed)
    records = [random_record(rng) for _ in range(100)]
    fac, pm, insts = _store(tmp_path_factory.mktemp("q"), records)
    ext = pm.get_extent("Rec")
    for _ in range(10):
        e = gen_bool(rng, 3)
        text = render_min(e, rng)
        try:
            expected = sorted(insts[i].jdo_oid for i in oracle_select(e, records))
        except OracleError:
            expected = EvalError
        for strategy in (IN_MEMORY, SQL_PUSHDOWN):
            if expected is EvalError:
                with pytest.raises(EvalError):
                    execute_query(pm, ext, text, strategy)
            else:
                assert execute_query(pm, ext, text, strategy) == expected, (text, strategy)
    fac.close()
