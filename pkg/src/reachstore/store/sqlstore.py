"""Relational backend: every commit is emitted as SQL.

Statements run against the bundled :class:`~reachstore.store.minisql.Engine`
and are journaled as JSON lines (``{"sql": ...}`` then ``{"commit": n}``)
so the database survives reopening; replay stops at the last commit line.
Swapping the engine for a real database only needs the same statement
stream.
"""

from __future__ import annotations

import json
import logging
import os
from pathlib import Path
from typing import Any, Iterator

from ..errors import EvalError, SqlError, StoreIOError, StoreUnavailable
from ..metamodel import ObjectId, Registry, RegisteredClass
from . import schema
from .base import BackendAdapter, StoreRecord, reconcile_registry
from .minisql import Engine, SqlDivisionByZero

logger = logging.getLogger(__name__)


class SqlStore(BackendAdapter):
    kind = "sql"

    def __init__(self, path: str | os.PathLike, store_name: str, registry: Registry | None = None):
        self.path = Path(path)
        if not self.path.parent.is_dir():
            raise StoreUnavailable(f"directory {self.path.parent} does not exist")
        self.engine = Engine()
        #: Every statement executed, for inspection (``--explain`` and tests).
        self.statement_log: list[str] = []
        self._commits = 0
        try:
            if self.path.exists():
                self._replay()
                meta = self._read_meta()
                reg, grow = reconcile_registry(meta["header"]["classes"], registry)
                super().__init__(meta["header"]["store"], reg)
                self.sections = meta["header"].get("sections", {})
                self._next_seq = meta["next_seq"]
                self._tables = schema.table_names(self.registry)
                if grow:
                    self.sync_classes()
            else:
                super().__init__(store_name, registry if registry is not None else Registry())
                self.path.write_bytes(b"")
                self._tables = schema.table_names(self.registry)
                stmts = [schema.META_DDL]
                stmts += [
                    f"INSERT INTO {schema.META} (name, value) VALUES ('header', {schema.sql_literal(self._header_json())})",
                    f"INSERT INTO {schema.META} (name, value) VALUES ('next_seq', '1')",
                ]
                stmts += schema.create_schema(self.registry)
                self._run_batch(stmts)
        except OSError as exc:
            raise StoreUnavailable(f"{self.path}: {exc}") from exc

    # -- journal ----------------------------------------------------------

    def _replay(self) -> None:
        data = self.path.read_bytes()
        pending: list[str] = []
        committed_end = 0
        pos = 0
        for line in data.splitlines(keepends=True):
            pos += len(line)
            if not line.endswith(b"\n"):
                break
            try:
                entry = json.loads(line)
            except ValueError:
                break
            if "sql" in entry:
                pending.append(entry["sql"])
            elif "commit" in entry:
                self.engine.begin()
                try:
                    for stmt in pending:
                        self.engine.execute(stmt)
                except SqlError:
                    self.engine.rollback()
                    raise StoreUnavailable(f"{self.path}: journal replay failed") from None
                self.engine.commit()
                pending.clear()
                committed_end = pos
                self._commits = entry["commit"]
            else:
                break
        if committed_end < len(data):
            logger.warning("%s: discarding uncommitted journal tail", self.path)
            with open(self.path, "r+b") as fh:
                fh.truncate(committed_end)

    def _read_meta(self) -> dict[str, Any]:
        rows = self.engine.execute(f"SELECT name, value FROM {schema.META}").rows
        meta = dict(rows)
        return {"header": json.loads(meta["header"]), "next_seq": int(meta["next_seq"])}

    def _header_json(self) -> str:
        return json.dumps(
            {"store": self.store_name, "classes": self.registry.to_table(), "sections": self.sections},
            sort_keys=True,
            separators=(",", ":"),
        )

    def _run_batch(self, stmts: list[str]) -> None:
        """Execute ``stmts`` atomically in the engine, then journal them."""
        self.engine.begin()
        try:
            for stmt in stmts:
                self._fault("statement")
                self.engine.execute(stmt)
            self._fault("journal")
            self._append_journal(stmts, self._commits + 1)
        except Exception as exc:
            self.engine.rollback()
            raise StoreIOError(f"batch aborted: {exc}") from exc
        except BaseException:
            self.engine.rollback()
            raise
        self._commits += 1
        self.engine.commit()
        self.statement_log.extend(stmts)

    def _append_journal(self, stmts: list[str], commit_no: int) -> None:
        lines = [json.dumps({"sql": s}) + "\n" for s in stmts]
        lines.append(json.dumps({"commit": commit_no}) + "\n")
        size = self.path.stat().st_size
        try:
            with open(self.path, "ab") as fh:
                fh.write("".join(lines).encode("utf-8"))
                fh.flush()
                os.fsync(fh.fileno())
        except Exception:
            with open(self.path, "r+b") as fh:
                fh.truncate(size)
            raise

    # -- writes -----------------------------------------------------------

    def _table(self, class_id: int) -> str:
        return self._tables[class_id]

    def _meta_update(self, name: str, value: str) -> str:
        return (
            f"UPDATE {schema.META} SET value = {schema.sql_literal(value)} "
            f"WHERE (name = {schema.sql_literal(name)})"
        )

    def _ref_rows(self, seq: int, slot: int, refs: list[tuple[int, ObjectId]]) -> list[str]:
        return [
            f"INSERT INTO {schema.REFMETA} (parent_oid, slot, idx, store, class_id) VALUES "
            f"({seq}, {slot}, {idx}, {schema.sql_literal(oid.store)}, {oid.class_id})"
            for idx, oid in refs
        ]

    def _put_statements(self, record: StoreRecord, changed: frozenset[int] | None) -> list[str]:
        rc = self.registry.get(record.class_id)
        table = self._table(record.class_id)
        seq = record.oid.seq
        exists = self.engine.has_row(table, (seq,))
        slots = range(len(rc.slots)) if (changed is None or not exists) else sorted(changed)
        stmts: list[str] = []
        cols: list[tuple[str, Any]] = []
        for i in slots:
            f = rc.slots[i]
            value = record.payload[i]
            if f.kind.is_reflist:
                child = schema.child_table(table, f)
                if exists:
                    stmts.append(f"DELETE FROM {child} WHERE (parent_oid = {seq})")
                    stmts.append(
                        f"DELETE FROM {schema.REFMETA} WHERE ((parent_oid = {seq}) AND (slot = {i}))"
                    )
                for idx, oid in enumerate(value):
                    stmts.append(
                        f"INSERT INTO {child} (parent_oid, idx, target) VALUES ({seq}, {idx}, {oid.seq})"
                    )
                stmts += self._ref_rows(seq, i, list(enumerate(value)))
            elif f.kind.is_ref:
                if exists:
                    stmts.append(
                        f"DELETE FROM {schema.REFMETA} WHERE ((parent_oid = {seq}) AND (slot = {i}))"
                    )
                cols.append((schema.column_name(f), None if value is None else value.seq))
                if value is not None:
                    stmts += self._ref_rows(seq, i, [(0, value)])
            else:
                cols.append((schema.column_name(f), value))
        if not exists:
            names = ", ".join(["oid"] + [c for c, _ in cols])
            vals = ", ".join([str(seq)] + [schema.sql_literal(v) for _, v in cols])
            stmts.insert(0, f"INSERT INTO {table} ({names}) VALUES ({vals})")
        elif cols:
            sets = ", ".join(f"{c} = {schema.sql_literal(v)}" for c, v in cols)
            stmts.insert(0, f"UPDATE {table} SET {sets} WHERE (oid = {seq})")
        return stmts

    def _delete_statements(self, oid: ObjectId) -> list[str]:
        rc = self.registry.get(oid.class_id)
        table = self._table(oid.class_id)
        stmts = [f"DELETE FROM {table} WHERE (oid = {oid.seq})"]
        for f in rc.slots:
            if f.kind.is_reflist:
                stmts.append(f"DELETE FROM {schema.child_table(table, f)} WHERE (parent_oid = {oid.seq})")
        if schema.has_refs(rc):
            stmts.append(f"DELETE FROM {schema.REFMETA} WHERE (parent_oid = {oid.seq})")
        return stmts

    def _apply(self, puts, deletes) -> None:
        stmts: list[str] = []
        top = 0
        for record, changed in puts:
            stmts += self._put_statements(record, changed)
            top = max(top, record.oid.seq)
        for oid in deletes:
            stmts += self._delete_statements(oid)
            top = max(top, oid.seq)
        stmts.append(self._meta_update("next_seq", str(max(self._next_seq, top + 1))))
        self._run_batch(stmts)

    def _write_header(self) -> None:
        self._run_batch([self._meta_update("header", self._header_json())])

    def sync_classes(self) -> None:
        with self._commit_lock, self._io_lock:
            names = schema.table_names(self.registry)
            stmts: list[str] = []
            for rc in self.registry:
                table = names[rc.class_id]
                if rc.retired:
                    if self.engine.has_table(table):
                        stmts.append(f"DROP TABLE {table}")
                        stmts += [
                            f"DROP TABLE {schema.child_table(table, f)}"
                            for f in rc.slots
                            if f.kind.is_reflist
                        ]
                elif not self.engine.has_table(table):
                    stmts += schema.class_ddl(table, rc)
            if not self.engine.has_table(schema.REFMETA) and any(
                schema.has_refs(rc) for rc in self.registry.live_classes()
            ):
                stmts.append(schema.REFMETA_DDL)
            stmts.append(self._meta_update("header", self._header_json()))
            self._run_batch(stmts)
            self._tables = names

    def drop_class_data(self, class_id: int) -> None:
        rc = self.registry.get(class_id)
        table = self._table(class_id)
        seqs = [r[0] for r in self.engine.execute(f"SELECT oid FROM {table}").rows]
        if not seqs:
            return
        self.begin_batch()
        ok = False
        try:
            for seq in seqs:
                self.delete(self.oid(rc.class_id, seq))
            ok = True
        finally:
            self.end_batch(ok)

    # -- reads ------------------------------------------------------------

    def _refmeta(self, where: str = "") -> dict[tuple[int, int, int], ObjectId]:
        if not self.engine.has_table(schema.REFMETA):
            return {}
        rows = self.engine.execute(
            f"SELECT parent_oid, slot, idx, store, class_id FROM {schema.REFMETA}{where}"
        ).rows
        return {(p, s, i): (store, cid) for p, s, i, store, cid in rows}

    def _children(self, table: str, f, where: str = "") -> dict[int, list[tuple[int, int]]]:
        out: dict[int, list[tuple[int, int]]] = {}
        for parent, idx, target in self.engine.execute(
            f"SELECT parent_oid, idx, target FROM {schema.child_table(table, f)}{where}"
        ).rows:
            out.setdefault(parent, []).append((idx, target))
        return out

    def _records(self, rc: RegisteredClass, where: str = "", ref_where: str = "") -> list[StoreRecord]:
        table = self._table(rc.class_id)
        result = self.engine.execute(f"SELECT * FROM {table}{where}")
        col_of = {name: i for i, name in enumerate(result.columns)}
        refs = self._refmeta(ref_where) if schema.has_refs(rc) else {}
        children = {
            i: self._children(table, f, ref_where)
            for i, f in enumerate(rc.slots)
            if f.kind.is_reflist
        }
        out = []
        for row in result.rows:
            seq = row[0]
            payload: list[Any] = []
            for i, f in enumerate(rc.slots):
                if f.kind.is_reflist:
                    items = sorted(children[i].get(seq, []))
                    payload.append(
                        [ObjectId(*refs[(seq, i, idx)], target) for idx, target in items]
                    )
                    continue
                value = row[col_of[_col_key(f)]]
                if f.kind.is_ref and value is not None:
                    store, cid = refs[(seq, i, 0)]
                    value = ObjectId(store, cid, value)
                payload.append(value)
            out.append(StoreRecord(ObjectId(self.store_name, rc.class_id, seq), rc.class_id, payload))
        return out

    def get(self, oid: ObjectId) -> StoreRecord | None:
        if oid.store != self.store_name:
            return None
        with self._io_lock:
            try:
                rc = self.registry.get(oid.class_id)
            except Exception:
                return None
            if rc.retired:
                return None
            recs = self._records(rc, f" WHERE (oid = {oid.seq})", f" WHERE (parent_oid = {oid.seq})")
            return recs[0] if recs else None

    def scan(self, class_id: int, subclasses: bool = False) -> Iterator[StoreRecord]:
        with self._io_lock:
            out = []
            for cid in self._class_ids(class_id, subclasses):
                out.extend(self._records(self.registry.get(cid)))
        return iter(out)

    def exec_filter(self, sql: str) -> list[int]:
        with self._io_lock:
            self.statement_log.append(sql)
            try:
                return [row[0] for row in self.engine.execute(sql).rows]
            except SqlDivisionByZero as exc:
                raise EvalError(str(exc)) from exc

    def count(self) -> int:
        return sum(
            len(self.engine.table(self._tables[rc.class_id]).rows)
            for rc in self.registry.live_classes()
        )


def _col_key(f) -> str:
    """Engine-side column name (unquoted identifiers are case-folded)."""
    col = schema.column_name(f)
    if col.startswith('"'):
        return col[1:-1].replace('""', '"')
    return col
