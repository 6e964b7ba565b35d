"""Backend adapter contract shared by the file and relational stores."""

from __future__ import annotations

import abc
import json
import threading
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator

from ..errors import IncompatibleSchema, StoreIOError, TransactionStateError
from ..metamodel import ObjectId, Registry


@dataclass
class StoreRecord:
    oid: ObjectId
    class_id: int
    payload: list[Any]
    tombstone: bool = False


@dataclass
class _Batch:
    puts: list[tuple[StoreRecord, frozenset[int] | None]] = field(default_factory=list)
    deletes: list[ObjectId] = field(default_factory=list)


def _normalize(entry: dict) -> str:
    return json.dumps(entry, sort_keys=True)


def reconcile_registry(header_table: list[dict], registry: Registry | None) -> tuple[Registry, bool]:
    """Check a caller registry against a stored class table.

    Returns the registry to use and whether the stored table must grow.
    """
    if registry is None:
        return Registry.from_table(header_table), False
    mine = registry.to_table()
    if len(mine) < len(header_table):
        missing = ", ".join(h["name"] for h in header_table[len(mine):])
        raise IncompatibleSchema(f"store defines classes unknown to the registry: {missing}")
    for stored, ours in zip(header_table, mine):
        if _normalize(stored) != _normalize(ours):
            raise IncompatibleSchema(
                f"class id {stored['id']}: store has {stored['name']!r}, registry has {ours['name']!r}"
                if stored["name"] != ours["name"]
                else f"class {stored['name']!r} differs between store and registry"
            )
    return registry, len(mine) > len(header_table)


class BackendAdapter(abc.ABC):
    """Thin storage layer below the persistence manager.

    Writes go through batches: ``begin_batch``, any number of ``put`` and
    ``delete``, then ``end_batch(commit)``. A committed batch becomes visible
    atomically; an aborted one leaves no trace. Only one batch is open per
    store at a time.
    """

    kind = "abstract"

    def __init__(self, store_name: str, registry: Registry):
        self.store_name = store_name
        self.registry = registry
        self.sections: dict[str, Any] = {}
        #: Called with a location tag before each low-level write; raising aborts.
        self.fault_hook: Callable[[str], None] | None = None
        self._commit_lock = threading.Lock()
        self._io_lock = threading.RLock()
        self._seq_lock = threading.Lock()
        self._batch: _Batch | None = None
        self._batch_owner: int | None = None
        self._next_seq = 1

    # -- identity ---------------------------------------------------------

    def allocate_seq(self) -> int:
        with self._seq_lock:
            seq = self._next_seq
            self._next_seq += 1
            return seq

    def oid(self, class_id: int, seq: int) -> ObjectId:
        return ObjectId(self.store_name, class_id, seq)

    # -- batches ----------------------------------------------------------

    def begin_batch(self) -> None:
        self._commit_lock.acquire()
        self._batch = _Batch()
        self._batch_owner = threading.get_ident()

    def _current(self) -> _Batch:
        if self._batch is None or self._batch_owner != threading.get_ident():
            raise TransactionStateError("no open batch")
        return self._batch

    def put(self, record: StoreRecord, changed_slots: frozenset[int] | None = None) -> None:
        self._current().puts.append((record, changed_slots))

    def delete(self, oid: ObjectId) -> None:
        self._current().deletes.append(oid)

    def end_batch(self, commit: bool = True) -> None:
        batch = self._current()
        self._batch = None
        self._batch_owner = None
        try:
            if commit and (batch.puts or batch.deletes):
                with self._io_lock:
                    self._apply(batch.puts, batch.deletes)
        finally:
            self._commit_lock.release()

    def _fault(self, where: str) -> None:
        if self.fault_hook is not None:
            self.fault_hook(where)

    # -- header sections (collections, mappers, ...) ---------------------

    def update_section(self, name: str, value: Any) -> None:
        with self._commit_lock, self._io_lock:
            old = self.sections.get(name)
            self.sections[name] = value
            try:
                self._write_header()
            except Exception as exc:
                self.sections[name] = old
                raise StoreIOError(str(exc)) from exc

    # -- backend specifics ------------------------------------------------

    @abc.abstractmethod
    def _apply(self, puts, deletes) -> None: ...

    @abc.abstractmethod
    def _write_header(self) -> None: ...

    @abc.abstractmethod
    def get(self, oid: ObjectId) -> StoreRecord | None: ...

    @abc.abstractmethod
    def scan(self, class_id: int, subclasses: bool = False) -> Iterator[StoreRecord]: ...

    @abc.abstractmethod
    def sync_classes(self) -> None:
        """Persist registry additions/retirements (header, DDL)."""

    @abc.abstractmethod
    def drop_class_data(self, class_id: int) -> None:
        """Remove every instance of ``class_id`` (committed atomically)."""

    def exec_filter(self, sql: str) -> list[int]:
        from ..errors import Unsupported

        raise Unsupported(f"{self.kind} backend cannot execute SQL")

    def close(self) -> None:
        pass

    def _class_ids(self, class_id: int, subclasses: bool) -> list[int]:
        if subclasses:
            return self.registry.subclasses(class_id)
        return [] if self.registry.get(class_id).retired else [class_id]


def flush_batch(adapter: BackendAdapter, records: list[StoreRecord], deletes: list[ObjectId]) -> None:
    """Write ``records`` and ``deletes`` as one atomic batch."""
    adapter.begin_batch()
    ok = False
    try:
        for rec in records:
            adapter.put(rec)
        for oid in deletes:
            adapter.delete(oid)
        ok = True
    finally:
        adapter.end_batch(commit=ok)


def scan_extent(adapter: BackendAdapter, class_id: int, subclasses: bool = False) -> Iterator[StoreRecord]:
    return adapter.scan(class_id, subclasses)
