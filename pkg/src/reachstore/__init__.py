"""reachstore: transparent object persistence with reachability, a filter
language pushed down to SQL, foreign references and data-flow pipelines."""

from __future__ import annotations

from .errors import ReachStoreError, SystemError_, UserError
from .lifecycle import LifecycleEvent, LifecycleState, ManagedInstance
from .manager import (
    Extent,
    PersistenceManager,
    PersistenceManagerFactory,
    get_persistence_manager_factory,
    open_manager,
)
from .metamodel import (
    BOOL,
    DOUBLE,
    INT,
    LONG,
    STR,
    ClassDescriptor,
    FieldSpec,
    ObjectId,
    Ref,
    RefList,
    Registry,
    parse_descriptor,
    render_descriptor,
)
from .query import Query, parse_filter, pretty

__version__ = "0.1.0"

__all__ = [
    "BOOL",
    "DOUBLE",
    "INT",
    "LONG",
    "STR",
    "ClassDescriptor",
    "Extent",
    "FieldSpec",
    "LifecycleEvent",
    "LifecycleState",
    "ManagedInstance",
    "ObjectId",
    "PersistenceManager",
    "PersistenceManagerFactory",
    "Query",
    "parse_filter",
    "ReachStoreError",
    "Ref",
    "RefList",
    "Registry",
    "SystemError_",
    "UserError",
    "get_persistence_manager_factory",
    "open_manager",
    "parse_descriptor",
    "pretty",
    "render_descriptor",
    "__version__",
]
