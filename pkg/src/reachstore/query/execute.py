"""Query planning and execution over an extent.

A filter runs either as an in-memory scan of the extent or, on relational
stores, pushed down as SQL. Pushed-down results are merged with this
transaction's own new and modified instances, which are evaluated in
memory, so both strategies see the same data. Results are ordered by
ObjectId sequence number.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ..errors import Unsupported
from ..lifecycle import LifecycleState as S
from ..metamodel import ObjectId
from ..store import schema
from .ast import Expr
from .checker import type_check
from .evaluator import evaluate
from .parser import parse_filter
from .sql import translate_sql

IN_MEMORY = "InMemoryScan"
SQL_PUSHDOWN = "SqlPushdown"
STRATEGIES = (IN_MEMORY, SQL_PUSHDOWN)


@dataclass(frozen=True)
class QueryPlan:
    class_id: int
    include_subclasses: bool
    filter: Expr
    execution: str
    #: One SELECT per class table in the extent (SqlPushdown only).
    sql: tuple[str, ...] = field(default=())
    fallback_reason: str | None = None

    @property
    def explain(self) -> str:
        return "\n".join(self.sql) if self.execution == SQL_PUSHDOWN else "inmemory"


def compile_filter(filter_text: str | Expr, rc, registry) -> Expr:
    expr = parse_filter(filter_text) if isinstance(filter_text, str) else filter_text
    return type_check(expr, rc, registry)


def plan_query(pm, extent, filter_text: str | Expr, strategy: str | None = None) -> QueryPlan:
    """Parse, type-check and choose an execution strategy.

    ``strategy`` forces one of :data:`STRATEGIES`; forcing SqlPushdown on a
    filter or store that cannot take it raises Unsupported.
    """
    if strategy not in (None, *STRATEGIES):
        raise ValueError(f"unknown strategy {strategy!r}")
    typed = compile_filter(filter_text, extent.rc, pm.registry)
    base = dict(class_id=extent.rc.class_id, include_subclasses=extent.include_subclasses, filter=typed)
    if strategy == IN_MEMORY:
        return QueryPlan(execution=IN_MEMORY, **base)
    reason = None
    if pm.adapter.kind != "sql":
        reason = f"{pm.adapter.kind} backend has no SQL engine"
    else:
        try:
            names = schema.table_names(pm.registry)
            sql = tuple(
                translate_sql(typed, extent.rc, table=names[cid], collation=getattr(pm.adapter, "sql_collation", None))
                for cid in extent.class_ids()
            )
            return QueryPlan(execution=SQL_PUSHDOWN, sql=sql, **base)
        except Unsupported as exc:
            reason = str(exc)
    if strategy == SQL_PUSHDOWN:
        raise Unsupported(f"cannot push down: {reason}")
    return QueryPlan(execution=IN_MEMORY, fallback_reason=reason, **base)


def run_plan(pm, extent, plan: QueryPlan) -> list[ObjectId]:
    if plan.execution == IN_MEMORY:
        hits = [inst.jdo_oid for inst in extent if evaluate(plan.filter, inst)]
        return sorted(hits, key=lambda o: o.seq)
    found: set[ObjectId] = set()
    for cid, sql in zip(extent.class_ids(), plan.sql):
        found.update(pm.adapter.oid(cid, seq) for seq in pm.adapter.exec_filter(sql))
    wanted = set(extent.class_ids())
    for oid, inst in pm.transactional.items():
        if oid.class_id not in wanted:
            continue
        found.discard(oid)
        if inst.jdo_state in (S.PERSISTENT_NEW, S.PERSISTENT_DIRTY) and evaluate(plan.filter, inst):
            found.add(oid)
    return sorted(found, key=lambda o: o.seq)


def execute_query(pm, extent, filter_text: str | Expr, strategy: str | None = None) -> list[ObjectId]:
    """ObjectIds of extent members matching ``filter_text``, by sequence."""
    if not hasattr(extent, "rc"):
        extent = pm.get_extent(extent, True)
    return run_plan(pm, extent, plan_query(pm, extent, filter_text, strategy))


class Query:
    """A filter bound to an extent; :meth:`execute` returns instances."""

    def __init__(self, pm, extent, filter_text: str | Expr = "true", strategy: str | None = None):
        self.pm = pm
        self.extent = extent
        self.filter = filter_text
        self.strategy = strategy

    def plan(self) -> QueryPlan:
        return plan_query(self.pm, self.extent, self.filter, self.strategy)

    def execute_oids(self) -> list[ObjectId]:
        return run_plan(self.pm, self.extent, self.plan())

    def execute(self) -> list:
        return [self.pm.get_object_by_id(oid) for oid in self.execute_oids()]
