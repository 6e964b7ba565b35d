"""Object evolution (mappers) and foreign references (DB catalog).

A mapper presents an instance of one class as a view of another type:
each view attribute is an expression in the filter language over the
source fields. Mappers are stored in the store header.

A foreign reference is an ObjectId whose store differs from the reading
manager's. It is resolved through a DB catalog that maps store names to
properties files; one read-only secondary manager is kept per foreign store.
"""

from __future__ import annotations

import os
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

from .errors import (
    DuplicateMapper,
    DuplicateStoreName,
    MalformedCatalog,
    NoMapper,
    ReachStoreError,
    StoreUnavailable,
    TypeMismatch,
    UnknownField,
    UnknownStore,
)
from .lifecycle import ManagedInstance
from .metamodel import ObjectId, Registry
from .properties import load_properties
from .query.ast import Expr
from .query.checker import check_value
from .query.evaluator import evaluate_value
from .query.parser import parse_filter

MAPPER_SECTION = "mappers"

# -- object evolution --------------------------------------------------------


@dataclass(frozen=True)
class MapperEntry:
    source_class: str
    target_view: str
    #: (view attribute, expression text over source fields), in view order.
    field_map: tuple[tuple[str, str], ...]

    def __post_init__(self):
        object.__setattr__(self, "field_map", tuple((a, e) for a, e in self.field_map))

    def to_json(self) -> dict:
        return {
            "source": self.source_class,
            "target": self.target_view,
            "fields": [list(p) for p in self.field_map],
        }

    @classmethod
    def from_json(cls, data: dict) -> MapperEntry:
        return cls(data["source"], data["target"], tuple(tuple(p) for p in data["fields"]))


@dataclass(frozen=True)
class ViewInstance:
    target_view: str
    values: dict[str, Any]
    origin: ObjectId

    def __getattr__(self, name: str) -> Any:
        try:
            return self.values[name]
        except KeyError:
            raise AttributeError(f"view {self.target_view!r} has no attribute {name!r}") from None


@dataclass
class _Compiled:
    entry: MapperEntry
    exprs: tuple[tuple[str, Expr], ...]


class MapperRegistry:
    """Mappers known to one store, optionally persisted in its header."""

    def __init__(self, registry: Registry, adapter=None):
        self.registry = registry
        self.adapter = adapter
        self._entries: list[_Compiled] = []
        self._lock = threading.Lock()
        if adapter is not None:
            for data in adapter.sections.get(MAPPER_SECTION, []):
                self._entries.append(self._compile(MapperEntry.from_json(data)))

    def _compile(self, entry: MapperEntry) -> _Compiled:
        rc = self.registry.by_name(entry.source_class)
        names = [a for a, _ in entry.field_map]
        if len(set(names)) != len(names):
            raise TypeMismatch(f"mapper {entry.source_class}->{entry.target_view} repeats an attribute")
        exprs = []
        for attr, text in entry.field_map:
            try:
                typed = check_value(parse_filter(text), rc, self.registry)
            except UnknownField as exc:
                raise TypeMismatch(f"{entry.target_view}.{attr}: {exc}") from exc
            exprs.append((attr, typed))
        return _Compiled(entry, tuple(exprs))

    def register(self, entry: MapperEntry) -> None:
        with self._lock:
            if any(
                c.entry.source_class == entry.source_class and c.entry.target_view == entry.target_view
                for c in self._entries
            ):
                raise DuplicateMapper(f"{entry.source_class} -> {entry.target_view}")
            compiled = self._compile(entry)
            if self.adapter is not None:
                stored = list(self.adapter.sections.get(MAPPER_SECTION, []))
                self.adapter.update_section(MAPPER_SECTION, stored + [entry.to_json()])
            self._entries.append(compiled)

    def entries(self) -> list[MapperEntry]:
        return [c.entry for c in self._entries]

    def _find(self, source_class: str, target_view: str) -> _Compiled | None:
        for c in self._entries:
            if c.entry.source_class == source_class and c.entry.target_view == target_view:
                return c
        return None

    def lookup(self, source_class: str, target_view: str, lineage: Iterable[str] = ()) -> _Compiled:
        """Exact (source, target) match, else the nearest superclass mapper."""
        for name in (source_class, *lineage):
            found = self._find(name, target_view)
            if found is not None:
                return found
        raise NoMapper(f"no mapper from {source_class} to {target_view}")

    def by_target(self, target_view: str) -> MapperEntry:
        for c in self._entries:
            if c.entry.target_view == target_view:
                return c.entry
        raise NoMapper(f"no mapper to {target_view}")


def mapper_registry(pm_or_factory) -> MapperRegistry:
    """The (cached) mapper registry of a manager's store."""
    adapter = pm_or_factory.adapter
    reg = getattr(adapter, "_mapper_registry", None)
    if reg is None:
        reg = MapperRegistry(adapter.registry, adapter)
        adapter._mapper_registry = reg
    return reg


def register_mapper(target, entry: MapperEntry) -> None:
    """Register ``entry`` on a MapperRegistry, manager or factory."""
    reg = target if isinstance(target, MapperRegistry) else mapper_registry(target)
    reg.register(entry)


def apply_mapper(mapper: _Compiled, instance: ManagedInstance) -> dict[str, Any]:
    return {attr: evaluate_value(expr, instance) for attr, expr in mapper.exprs}


def read_as(pm, oid: ObjectId | str, target_view: str) -> ViewInstance:
    """Read the object ``oid`` presented as a ``target_view``."""
    inst = pm.get_object_by_id(oid)
    rc = inst.jdo_class
    mapper = mapper_registry(pm).lookup(rc.name, target_view, rc.lineage[1:])
    inst.field_values()  # loads a hollow instance; raises NoSuchObject
    return ViewInstance(target_view, apply_mapper(mapper, inst), inst.jdo_oid)


# -- foreign references --------------------------------------------------------


@dataclass(frozen=True)
class CatalogEntry:
    store: str
    location: str


@dataclass
class Catalog:
    entries: dict[str, CatalogEntry] = field(default_factory=dict)
    source: str | None = None

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, store: str) -> bool:
        return store in self.entries

    def get(self, store: str) -> CatalogEntry:
        try:
            return self.entries[store]
        except KeyError:
            raise UnknownStore(f"store {store!r} is not in the catalog") from None

    def properties_for(self, store: str) -> dict[str, str]:
        entry = self.get(store)
        try:
            return load_properties(entry.location)
        except OSError as exc:
            raise StoreUnavailable(f"{store}: {exc}") from exc


def parse_catalog(text: str, base: str | os.PathLike | None = None) -> Catalog:
    entries: dict[str, CatalogEntry] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        name, sep, location = line.partition("=")
        name, location = name.strip(), location.strip()
        if not sep or not name or not location or any(c.isspace() for c in name):
            raise MalformedCatalog(f"line {lineno}: expected storeName=propertiesPath, got {raw!r}")
        if name in entries:
            raise DuplicateStoreName(f"line {lineno}: {name!r} listed twice")
        if base is not None and not os.path.isabs(location):
            location = str(Path(base) / location)
        entries[name] = CatalogEntry(name, location)
    return Catalog(entries)


def catalog_load(path: str | os.PathLike) -> Catalog:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise MalformedCatalog(f"cannot read catalog {path}: {exc}") from exc
    except UnicodeDecodeError as exc:
        raise MalformedCatalog(f"catalog {path} is not UTF-8") from exc
    cat = parse_catalog(text, path.parent)
    cat.source = str(path)
    return cat


def check_catalog(catalog: Catalog) -> list[tuple[str, str | None]]:
    """Try to open every store; returns (store, problem or None) pairs."""
    from .manager import PersistenceManagerFactory

    out = []
    for name in sorted(catalog.entries):
        try:
            props = catalog.properties_for(name)
            if not os.path.exists(props.get("store.path", "")):
                raise StoreUnavailable(f"{props.get('store.path')} does not exist")
            fac = PersistenceManagerFactory(props)
            try:
                actual = fac.store_name
            finally:
                fac.close()
            out.append((name, None if actual == name else f"store is named {actual!r}"))
        except ReachStoreError as exc:
            out.append((name, str(exc)))
    return out


def resolve_foreign(pm, oid: ObjectId) -> ManagedInstance:
    """Load ``oid`` from its own store through the catalog."""
    with pm._lock:
        sec = pm.foreign_manager(oid.store)
        if sec is None:
            sec = _open_secondary(pm, oid.store)
            pm._register_foreign(oid.store, sec)
    inst = sec.get_object_by_id(oid)
    inst.field_values()
    return inst


def _open_secondary(pm, store: str):
    from .manager import PersistenceManagerFactory

    factory = pm.factory
    catalog = factory.catalog
    entry = catalog.get(store)
    fac = factory.secondary_factories.get(store)
    if fac is None:
        props = catalog.properties_for(store)
        if not os.path.exists(props.get("store.path", "")):
            raise StoreUnavailable(f"foreign store {store!r}: {props.get('store.path')} does not exist")
        fac = PersistenceManagerFactory(props, catalog=catalog)
        if fac.store_name != store:
            actual = fac.store_name
            fac.close()
            raise StoreUnavailable(f"catalog entry {store!r} ({entry.location}) opens store {actual!r}")
        factory.secondary_factories[store] = fac
    return fac.get_persistence_manager(read_only=True)


__all__ = [
    "Catalog",
    "CatalogEntry",
    "MapperEntry",
    "MapperRegistry",
    "ViewInstance",
    "apply_mapper",
    "catalog_load",
    "check_catalog",
    "mapper_registry",
    "parse_catalog",
    "read_as",
    "register_mapper",
    "resolve_foreign",
]
