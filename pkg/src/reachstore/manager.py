"""Persistence managers, transactions and extents.

A :class:`PersistenceManagerFactory` is built from a properties map
(``backend``, ``store.path``, optional ``store.name`` and ``catalog.path``)
and hands out :class:`PersistenceManager` objects over one shared store.

Persistence by reachability is computed at commit: every instance that is
new or dirty in the transaction is a root, and every transient instance
reachable from a root through reference fields is made persistent along
with it.
"""

from __future__ import annotations

import contextlib
import logging
import os
import threading
from collections import deque
from pathlib import Path
from types import MappingProxyType
from typing import Any, Iterable, Iterator, Mapping

from .errors import (
    IllegalTransition,
    NoSuchObject,
    TransactionStateError,
    UnregisteredClass,
)
from .lifecycle import LifecycleEvent as E
from .lifecycle import LifecycleState as S
from .lifecycle import ManagedInstance, advance
from .metamodel import ClassDescriptor, ObjectId, Registry, RegisteredClass
from .properties import load_properties
from .store import BackendAdapter, StoreRecord, open_store

logger = logging.getLogger(__name__)

_PENDING = (S.PERSISTENT_NEW, S.PERSISTENT_DIRTY)


class PersistenceManagerFactory:
    """Immutable configuration plus the lazily opened store it points at."""

    def __init__(
        self,
        properties: Mapping[str, str] | str | os.PathLike,
        registry: Registry | None = None,
        *,
        catalog=None,
    ):
        if isinstance(properties, (str, os.PathLike)):
            properties = load_properties(properties)
        self.properties = MappingProxyType(dict(properties))
        self._registry = registry
        self._adapter: BackendAdapter | None = None
        self._catalog = catalog
        self._lock = threading.Lock()
        #: Factories for foreign stores, shared by every manager of this one.
        self.secondary_factories: dict[str, PersistenceManagerFactory] = {}

    @property
    def adapter(self) -> BackendAdapter:
        with self._lock:
            if self._adapter is None:
                self._adapter = open_store(self.properties, self._registry)
                self._registry = self._adapter.registry
            return self._adapter

    @property
    def registry(self) -> Registry:
        return self.adapter.registry

    @property
    def store_name(self) -> str:
        return self.adapter.store_name

    @property
    def catalog(self):
        """The DB catalog named by ``catalog.path`` (empty when unset)."""
        with self._lock:
            if self._catalog is None:
                from .proxies import Catalog, catalog_load

                path = self.properties.get("catalog.path")
                self._catalog = catalog_load(path) if path else Catalog()
            return self._catalog

    def get_persistence_manager(self, *, read_only: bool = False) -> PersistenceManager:
        return PersistenceManager(self, read_only=read_only)

    def add_class(self, descriptor: ClassDescriptor, cls: type | None = None) -> RegisteredClass:
        """Register a class on an open store and persist the schema change."""
        adapter = self.adapter
        class_id = adapter.registry.extend(descriptor, cls)
        adapter.sync_classes()
        return adapter.registry.get(class_id)

    def close(self) -> None:
        with self._lock:
            if self._adapter is not None:
                self._adapter.close()
                self._adapter = None
        for f in self.secondary_factories.values():
            f.close()
        self.secondary_factories.clear()

    def __enter__(self) -> PersistenceManagerFactory:
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def get_persistence_manager_factory(
    properties: Mapping[str, str] | str | os.PathLike, registry: Registry | None = None
) -> PersistenceManagerFactory:
    return PersistenceManagerFactory(properties, registry)


class Transaction:
    def __init__(self, pm: PersistenceManager):
        self._pm = pm

    def begin(self) -> None:
        self._pm.begin()

    def commit(self) -> None:
        self._pm.commit()

    def rollback(self) -> None:
        self._pm.rollback()

    @property
    def active(self) -> bool:
        return self._pm.active

    def is_active(self) -> bool:
        return self._pm.active


class Extent:
    """All stored instances of a class, plus this transaction's new ones."""

    def __init__(self, pm: PersistenceManager, rc: RegisteredClass, include_subclasses: bool):
        self.pm = pm
        self.rc = rc
        self.include_subclasses = include_subclasses

    @property
    def class_id(self) -> int:
        return self.rc.class_id

    def class_ids(self) -> list[int]:
        if self.include_subclasses:
            return self.pm.registry.subclasses(self.rc.class_id)
        return [self.rc.class_id]

    def __iter__(self) -> Iterator[ManagedInstance]:
        return iter(self.pm._extent_instances(self))

    def __len__(self) -> int:
        return len(self.pm._extent_instances(self))

    def oids(self) -> list[ObjectId]:
        return [inst.jdo_oid for inst in self]


class PersistenceManager:
    """Mediates every interaction with one store.

    A manager and the instances it returns are meant for one thread of
    control; an internal lock only protects lazy loading so that readers on
    other threads (dataflow workers) may dereference safely.
    """

    def __init__(self, factory: PersistenceManagerFactory, *, read_only: bool = False):
        self.factory = factory
        self.adapter = factory.adapter
        self.registry = self.adapter.registry
        self.store_name = self.adapter.store_name
        self.read_only = read_only
        self._cache: dict[ObjectId, ManagedInstance] = {}
        self._txn: dict[ObjectId, ManagedInstance] = {}
        self._active = False
        self._lock = threading.RLock()
        self._foreign: dict[str, PersistenceManager] = {}
        self._closed = False

    # -- transactions -----------------------------------------------------

    @property
    def active(self) -> bool:
        return self._active

    def current_transaction(self) -> Transaction:
        return Transaction(self)

    def begin(self) -> None:
        if self._active:
            raise TransactionStateError("transaction already active")
        self._active = True

    def commit(self) -> None:
        if not self._active:
            raise TransactionStateError("commit without an active transaction")
        with self._lock:
            try:
                self._close_over_reachability()
                puts, deletes = self._collect_writes()
                if puts or deletes:
                    self.adapter.begin_batch()
                    ok = False
                    try:
                        for record, changed in puts:
                            self.adapter.put(record, changed)
                        for oid in deletes:
                            self.adapter.delete(oid)
                        ok = True
                    finally:
                        self.adapter.end_batch(ok)
            except Exception:
                self._finish(E.ROLLBACK)
                raise
            self._finish(E.COMMIT)

    def rollback(self) -> None:
        if not self._active:
            raise TransactionStateError("rollback without an active transaction")
        with self._lock:
            self._finish(E.ROLLBACK)

    @contextlib.contextmanager
    def transaction(self):
        """``with pm.transaction():`` commits on success, rolls back on error."""
        self.begin()
        try:
            yield self
        except BaseException:
            if self._active:
                self.rollback()
            raise
        self.commit()

    def _finish(self, event: E) -> None:
        for oid, inst in list(self._txn.items()):
            advance(inst, event)
            if inst.jdo_state is S.TRANSIENT:
                self._cache.pop(oid, None)
                object.__setattr__(inst, "_pm", None)
        self._txn.clear()
        self._active = False

    def _require_active(self, what: str) -> None:
        if not self._active:
            raise TransactionStateError(f"{what} requires an active transaction")

    # -- persistence by reachability -------------------------------------

    def make_persistent(self, instance: ManagedInstance) -> ObjectId:
        """Make ``instance`` and everything it reaches persistent."""
        self._require_active("make_persistent")
        self._check_writable(instance, E.MAKE_PERSISTENT)
        with self._lock:
            if instance.jdo_state is not S.TRANSIENT:
                if instance.jdo_manager is not self:
                    raise IllegalTransition(instance.jdo_state, E.MAKE_PERSISTENT)
                return instance.jdo_oid
            self._persist_from([instance])
            return instance.jdo_oid

    def make_persistent_all(self, instances: Iterable[ManagedInstance]) -> list[ObjectId]:
        return [self.make_persistent(i) for i in instances]

    def _persist_from(self, roots: Iterable[ManagedInstance]) -> None:
        queue = deque()
        for root in roots:
            if root.jdo_state is S.TRANSIENT:
                self._attach(root)
                queue.append(root)
            elif root.jdo_state in _PENDING:
                queue.append(root)
        while queue:
            inst = queue.popleft()
            for spec, value in zip(inst._cls.slots, inst._values):
                if spec.kind.is_ref:
                    targets = (value,)
                elif spec.kind.is_reflist:
                    targets = value
                else:
                    continue
                for t in targets:
                    if isinstance(t, ManagedInstance) and t.jdo_state is S.TRANSIENT:
                        self._attach(t)
                        queue.append(t)

    def _attach(self, inst: ManagedInstance) -> None:
        rc = self._adopt_class(inst._cls)
        object.__setattr__(inst, "_cls", rc)
        oid = self.adapter.oid(rc.class_id, self.adapter.allocate_seq())
        object.__setattr__(inst, "_pm", self)
        advance(inst, E.MAKE_PERSISTENT, oid=oid)
        self._cache[oid] = inst
        self._txn[oid] = inst

    def _adopt_class(self, rc: RegisteredClass) -> RegisteredClass:
        """Map a class from any registry onto this store's registry by name."""
        try:
            mine = self.registry.by_name(rc.name)
        except UnregisteredClass:
            raise UnregisteredClass(f"{rc.name} is not registered in store {self.store_name}") from None
        if mine is not rc and mine.layout() != rc.layout():
            raise UnregisteredClass(f"{rc.name} has a different layout in store {self.store_name}")
        return mine

    def _close_over_reachability(self) -> None:
        roots = [i for i in self._txn.values() if i.jdo_state in _PENDING]
        self._persist_from(roots)

    def _collect_writes(self) -> tuple[list[tuple[StoreRecord, frozenset[int] | None]], list[ObjectId]]:
        puts = []
        deletes = []
        for oid, inst in self._txn.items():
            state = inst.jdo_state
            if state is S.PERSISTENT_NEW:
                puts.append((self._record(inst), None))
            elif state is S.PERSISTENT_DIRTY:
                puts.append((self._record(inst), inst.jdo_dirty_slots))
            elif state is S.PERSISTENT_DELETED:
                deletes.append(oid)
        return puts, deletes

    def _record(self, inst: ManagedInstance) -> StoreRecord:
        payload = []
        for spec, value in zip(inst._cls.slots, inst._values):
            if spec.kind.is_ref:
                value = _stored_ref(value)
            elif spec.kind.is_reflist:
                value = [_stored_ref(v) for v in value]
            payload.append(value)
        return StoreRecord(inst.jdo_oid, inst._cls.class_id, payload)

    # -- retrieval --------------------------------------------------------

    def get_object_by_id(self, oid: ObjectId | str) -> ManagedInstance:
        """The unique instance for ``oid``; hollow until a field is read."""
        if isinstance(oid, str):
            oid = ObjectId.parse(oid)
        if oid.store != self.store_name:
            from .proxies import resolve_foreign

            return resolve_foreign(self, oid)
        with self._lock:
            inst = self._cache.get(oid)
            if inst is not None:
                return inst
            try:
                rc = self.registry.get(oid.class_id)
            except UnregisteredClass:
                raise NoSuchObject(f"{oid}: no class with id {oid.class_id}") from None
            inst = ManagedInstance._hollow(rc, oid, self)
            self._cache[oid] = inst
            return inst

    def _load(self, inst: ManagedInstance) -> None:
        with self._lock:
            if inst.jdo_state is not S.HOLLOW:
                return
            record = self.adapter.get(inst.jdo_oid)
            if record is None or record.class_id != inst._cls.class_id:
                raise NoSuchObject(str(inst.jdo_oid))
            self._fill(inst, record)

    def _fill(self, inst: ManagedInstance, record: StoreRecord) -> None:
        values = [list(v) if isinstance(v, list) else v for v in record.payload]
        object.__setattr__(inst, "_values", values)
        advance(inst, E.READ_FIELD)

    def _materialize(self, record: StoreRecord) -> ManagedInstance:
        with self._lock:
            inst = self._cache.get(record.oid)
            if inst is None:
                inst = ManagedInstance._hollow(self.registry.get(record.class_id), record.oid, self)
                self._cache[record.oid] = inst
            if inst.jdo_state is S.HOLLOW:
                self._fill(inst, record)
            return inst

    def evict(self, instance: ManagedInstance) -> None:
        """Drop a clean instance's values; the next read reloads them."""
        with self._lock:
            if instance.jdo_state in (S.PERSISTENT_CLEAN, S.HOLLOW):
                advance(instance, E.EVICT)

    def evict_all(self) -> None:
        for inst in list(self._cache.values()):
            self.evict(inst)

    @property
    def cached(self) -> Mapping[ObjectId, ManagedInstance]:
        return MappingProxyType(self._cache)

    @property
    def transactional(self) -> Mapping[ObjectId, ManagedInstance]:
        """Instances new, dirty or deleted in the current transaction."""
        return MappingProxyType(self._txn)

    # -- deletion ---------------------------------------------------------

    def delete_persistent(self, target: ManagedInstance | ObjectId | str) -> None:
        self._require_active("delete_persistent")
        inst = target if isinstance(target, ManagedInstance) else self.get_object_by_id(target)
        self._check_writable(inst, E.DELETE)
        if inst.jdo_manager is not self:
            raise NoSuchObject(f"{inst!r} is not managed here")
        with self._lock:
            if inst.jdo_state is S.HOLLOW:
                self._load(inst)
            advance(inst, E.DELETE)
            self._txn[inst.jdo_oid] = inst

    # -- hooks used by ManagedInstance ----------------------------------

    def _before_write(self, inst: ManagedInstance) -> None:
        self._check_writable(inst, E.WRITE_FIELD)
        self._require_active("modifying a persistent instance")
        self._txn[inst.jdo_oid] = inst

    def _check_writable(self, inst: ManagedInstance, event: E) -> None:
        pm = inst.jdo_manager
        if self.read_only or (pm is not None and pm is not self and pm.read_only):
            raise IllegalTransition(inst.jdo_state, event)

    # -- extents and queries ---------------------------------------------

    def get_extent(self, cls: Any, include_subclasses: bool = True) -> Extent:
        return Extent(self, self._resolve(cls), include_subclasses)

    def _resolve(self, cls: Any) -> RegisteredClass:
        rc = self.registry.resolve(cls)
        if rc.retired:
            raise UnregisteredClass(rc.name)
        return rc

    def _extent_instances(self, extent: Extent) -> list[ManagedInstance]:
        out: dict[ObjectId, ManagedInstance] = {}
        for record in self.adapter.scan(extent.rc.class_id, extent.include_subclasses):
            inst = self._materialize(record)
            out[record.oid] = inst
        wanted = set(extent.class_ids())
        for oid, inst in self._txn.items():
            if inst.jdo_state in (S.PERSISTENT_DELETED, S.PERSISTENT_NEW_DELETED):
                out.pop(oid, None)
            elif inst.jdo_state in _PENDING and oid.class_id in wanted:
                out[oid] = inst
        return [out[k] for k in sorted(out, key=lambda o: o.seq)]

    def new_query(self, extent_or_class: Any, filter_text: str = "true"):
        from .query import Query

        extent = extent_or_class
        if not isinstance(extent, Extent):
            extent = self.get_extent(extent_or_class, True)
        return Query(self, extent, filter_text)

    def new(self, class_name: str, **values: Any) -> ManagedInstance:
        return self.registry.new(class_name, **values)

    # -- foreign stores ---------------------------------------------------

    def foreign_manager(self, store: str) -> PersistenceManager | None:
        return self._foreign.get(store)

    def _register_foreign(self, store: str, pm: PersistenceManager) -> None:
        self._foreign[store] = pm

    # -- lifecycle --------------------------------------------------------

    def close(self) -> None:
        if self._active:
            self.rollback()
        self._closed = True

    def __enter__(self) -> PersistenceManager:
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def __repr__(self) -> str:
        return f"PersistenceManager({self.store_name!r}, active={self._active})"


def _stored_ref(value: Any) -> ObjectId | None:
    if value is None or isinstance(value, ObjectId):
        return value
    oid = value.jdo_oid
    if oid is None:
        raise TransactionStateError(f"reference to transient {value!r} survived reachability")
    return oid


def open_manager(props: Mapping[str, str] | str | Path, registry: Registry | None = None) -> PersistenceManager:
    """Shortcut: a factory plus one manager."""
    return PersistenceManagerFactory(props, registry).get_persistence_manager()
