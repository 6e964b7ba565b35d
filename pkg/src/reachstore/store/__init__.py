"""Storage backends: an append-only file log and a relational mapping."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping

from ..errors import StoreUnavailable
from ..metamodel import Registry
from .base import BackendAdapter, StoreRecord, flush_batch, scan_extent
from .filestore import FileStore
from .schema import create_schema
from .sqlstore import SqlStore

BACKENDS = {"file": FileStore, "sql": SqlStore}


def store_name_for(properties: Mapping[str, str]) -> str:
    if properties.get("store.name"):
        return properties["store.name"]
    return Path(properties["store.path"]).stem


def open_store(properties: Mapping[str, str], registry: Registry | None = None) -> BackendAdapter:
    """Open (creating if absent) the store named by ``properties``.

    With ``registry=None`` an existing store's class table is used as is.
    """
    backend = properties.get("backend", "file")
    cls = BACKENDS.get(backend)
    if cls is None:
        raise StoreUnavailable(f"unknown backend {backend!r} (expected one of {sorted(BACKENDS)})")
    if not properties.get("store.path"):
        raise StoreUnavailable("properties lack store.path")
    if registry is not None and not registry.frozen:
        registry.freeze()
    return cls(properties["store.path"], store_name_for(properties), registry)


__all__ = [
    "BackendAdapter",
    "FileStore",
    "SqlStore",
    "StoreRecord",
    "create_schema",
    "flush_batch",
    "open_store",
    "scan_extent",
]
