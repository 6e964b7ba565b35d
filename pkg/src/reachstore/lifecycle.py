"""Managed-instance lifecycle: hollow loading, dirty tracking, deletion."""

from __future__ import annotations

import enum
from typing import Any

from .errors import IllegalTransition, UnknownField, UnregisteredClass, ValueKindError
from .metamodel import ANY_CLASS, ObjectId, RegisteredClass, coerce_value


class LifecycleState(enum.Enum):
    TRANSIENT = "Transient"
    PERSISTENT_NEW = "PersistentNew"
    HOLLOW = "Hollow"
    PERSISTENT_CLEAN = "PersistentClean"
    PERSISTENT_DIRTY = "PersistentDirty"
    PERSISTENT_DELETED = "PersistentDeleted"
    PERSISTENT_NEW_DELETED = "PersistentNewDeleted"


class LifecycleEvent(enum.Enum):
    MAKE_PERSISTENT = "MakePersistent"
    READ_FIELD = "ReadField"
    WRITE_FIELD = "WriteField"
    DELETE = "Delete"
    COMMIT = "Commit"
    ROLLBACK = "Rollback"
    EVICT = "Evict"


S = LifecycleState
E = LifecycleEvent

# Every pair not listed raises IllegalTransition.
TRANSITIONS: dict[tuple[LifecycleState, LifecycleEvent], LifecycleState] = {
    (S.TRANSIENT, E.MAKE_PERSISTENT): S.PERSISTENT_NEW,
    (S.PERSISTENT_NEW, E.READ_FIELD): S.PERSISTENT_NEW,
    (S.PERSISTENT_NEW, E.WRITE_FIELD): S.PERSISTENT_NEW,
    (S.PERSISTENT_NEW, E.DELETE): S.PERSISTENT_NEW_DELETED,
    (S.PERSISTENT_NEW, E.COMMIT): S.PERSISTENT_CLEAN,
    (S.PERSISTENT_NEW, E.ROLLBACK): S.TRANSIENT,
    (S.HOLLOW, E.READ_FIELD): S.PERSISTENT_CLEAN,
    (S.HOLLOW, E.COMMIT): S.HOLLOW,
    (S.HOLLOW, E.ROLLBACK): S.HOLLOW,
    (S.HOLLOW, E.EVICT): S.HOLLOW,
    (S.PERSISTENT_CLEAN, E.READ_FIELD): S.PERSISTENT_CLEAN,
    (S.PERSISTENT_CLEAN, E.WRITE_FIELD): S.PERSISTENT_DIRTY,
    (S.PERSISTENT_CLEAN, E.DELETE): S.PERSISTENT_DELETED,
    (S.PERSISTENT_CLEAN, E.COMMIT): S.PERSISTENT_CLEAN,
    (S.PERSISTENT_CLEAN, E.ROLLBACK): S.PERSISTENT_CLEAN,
    (S.PERSISTENT_CLEAN, E.EVICT): S.HOLLOW,
    (S.PERSISTENT_DIRTY, E.READ_FIELD): S.PERSISTENT_DIRTY,
    (S.PERSISTENT_DIRTY, E.WRITE_FIELD): S.PERSISTENT_DIRTY,
    (S.PERSISTENT_DIRTY, E.DELETE): S.PERSISTENT_DELETED,
    (S.PERSISTENT_DIRTY, E.COMMIT): S.PERSISTENT_CLEAN,
    (S.PERSISTENT_DIRTY, E.ROLLBACK): S.HOLLOW,
    # Commit of a deleted instance removes it; the ObjectId is retired.
    (S.PERSISTENT_DELETED, E.COMMIT): S.TRANSIENT,
    (S.PERSISTENT_DELETED, E.ROLLBACK): S.HOLLOW,
    (S.PERSISTENT_NEW_DELETED, E.COMMIT): S.TRANSIENT,
    (S.PERSISTENT_NEW_DELETED, E.ROLLBACK): S.TRANSIENT,
}


def transition(state: LifecycleState, event: LifecycleEvent) -> LifecycleState:
    try:
        return TRANSITIONS[(state, event)]
    except KeyError:
        raise IllegalTransition(state, event) from None


class ManagedInstance:
    """A persistence-capable object: field values plus lifecycle bookkeeping.

    Fields are read and written as attributes. Host classes may subclass this
    and be bound with ``Registry.register_class(desc, cls=Host)``; instances
    loaded from a store are then created as ``Host``.
    """

    __slots__ = ("_cls", "_oid", "_state", "_values", "_dirty", "_loaded", "_pm")
    _jdo_managed = True

    def __init__(self, _class: RegisteredClass | None = None, **values: Any):
        rc = _class if _class is not None else getattr(type(self), "_jdo_class", None)
        if rc is None:
            raise UnregisteredClass(type(self).__name__)
        object.__setattr__(self, "_cls", rc)
        object.__setattr__(self, "_oid", None)
        object.__setattr__(self, "_state", S.TRANSIENT)
        object.__setattr__(self, "_values", default_values(rc))
        object.__setattr__(self, "_dirty", set())
        object.__setattr__(self, "_loaded", True)
        object.__setattr__(self, "_pm", None)
        for name, value in values.items():
            self.jdo_set_slot(self._slot(name), value)

    @classmethod
    def _hollow(cls, rc: RegisteredClass, oid: ObjectId, pm) -> ManagedInstance:
        factory = rc.python_type or ManagedInstance
        inst = factory.__new__(factory)
        object.__setattr__(inst, "_cls", rc)
        object.__setattr__(inst, "_oid", oid)
        object.__setattr__(inst, "_state", S.HOLLOW)
        object.__setattr__(inst, "_values", default_values(rc))
        object.__setattr__(inst, "_dirty", set())
        object.__setattr__(inst, "_loaded", False)
        object.__setattr__(inst, "_pm", pm)
        return inst

    # -- introspection ----------------------------------------------------

    @property
    def jdo_class(self) -> RegisteredClass:
        return self._cls

    @property
    def jdo_oid(self) -> ObjectId | None:
        return self._oid

    @property
    def jdo_state(self) -> LifecycleState:
        return self._state

    @property
    def jdo_dirty_slots(self) -> frozenset[int]:
        return frozenset(self._dirty)

    @property
    def jdo_loaded(self) -> bool:
        return self._loaded

    @property
    def jdo_manager(self):
        return self._pm

    # -- field access protocol -------------------------------------------

    def _slot(self, name: str) -> int:
        idx = self._cls.slot_index.get(name)
        if idx is None:
            raise UnknownField(f"{self._cls.name}.{name}")
        return idx

    def _before_read(self) -> None:
        if self._state is S.HOLLOW:
            self._pm._load(self)
        elif self._state is not S.TRANSIENT:
            transition(self._state, E.READ_FIELD)

    def jdo_get_raw(self, slot: int) -> Any:
        """Stored value of ``slot``: refs come back as ObjectIds or instances."""
        self._before_read()
        return self._values[slot]

    def jdo_get_slot(self, slot: int) -> Any:
        value = self.jdo_get_raw(slot)
        kind = self._cls.slots[slot].kind
        if kind.is_ref and isinstance(value, ObjectId):
            return self._deref(value)
        if kind.is_reflist:
            return [self._deref(v) if isinstance(v, ObjectId) else v for v in value]
        return value

    def _deref(self, oid: ObjectId):
        if self._pm is None:
            return oid
        return self._pm.get_object_by_id(oid)

    def jdo_set_slot(self, slot: int, value: Any) -> None:
        spec = self._cls.slots[slot]
        value = coerce_value(spec.kind, value)
        if spec.kind.target not in (None, ANY_CLASS):
            targets = value if spec.kind.is_reflist else [value]
            for t in targets:
                if t is not None and not isinstance(t, ObjectId):
                    _check_ref_target(t, spec.kind.target, spec.name)
        if self._state is S.TRANSIENT:
            self._values[slot] = value
            return
        self._pm._before_write(self)
        if self._state is S.HOLLOW:
            self._pm._load(self)
        transition(self._state, E.WRITE_FIELD)
        self._values[slot] = value
        mark_dirty(self, slot)

    def get(self, name: str) -> Any:
        return self.jdo_get_slot(self._slot(name))

    def set(self, name: str, value: Any) -> None:
        self.jdo_set_slot(self._slot(name), value)

    def raw(self, name: str) -> Any:
        return self.jdo_get_raw(self._slot(name))

    def field_values(self) -> dict[str, Any]:
        """Raw values keyed by field name (loads a hollow instance)."""
        self._before_read()
        return {f.name: self._values[i] for i, f in enumerate(self._cls.slots)}

    def __getattr__(self, name: str) -> Any:
        if name.startswith("_"):
            raise AttributeError(name)
        idx = self._cls.slot_index.get(name)
        if idx is None:
            raise AttributeError(f"{self._cls.name!r} has no field {name!r}")
        return self.jdo_get_slot(idx)

    def __setattr__(self, name: str, value: Any) -> None:
        idx = self._cls.slot_index.get(name) if not name.startswith("_") else None
        if idx is None:
            object.__setattr__(self, name, value)
        else:
            self.jdo_set_slot(idx, value)

    def __repr__(self) -> str:
        if self._loaded:
            body = ", ".join(
                f"{f.name}={_short(self._values[i])}" for i, f in enumerate(self._cls.slots)
            )
        else:
            body = "<hollow>"
        where = f" {self._oid}" if self._oid else ""
        return f"{self._cls.name}({body})[{self._state.value}{where}]"


def _short(value: Any) -> str:
    if getattr(value, "_jdo_managed", False):
        return f"<{value._cls.name} {value._oid or 'transient'}>"
    return repr(value)


def _check_ref_target(inst: ManagedInstance, target: str, field_name: str) -> None:
    # By name: instances may come from a different store's registry.
    if target not in inst._cls.lineage:
        raise ValueKindError(f"{field_name} expects {target}, got {inst._cls.name}")


def default_values(rc: RegisteredClass) -> list[Any]:
    return [[] if f.kind.is_reflist else None for f in rc.slots]


def advance(
    inst: ManagedInstance,
    event: LifecycleEvent,
    *,
    oid: ObjectId | None = None,
    slot: int | None = None,
) -> LifecycleState:
    """Apply ``event`` to ``inst``, keeping its bookkeeping consistent."""
    old = inst._state
    new = transition(old, event)
    if event is E.MAKE_PERSISTENT:
        object.__setattr__(inst, "_oid", oid)
        object.__setattr__(inst, "_loaded", True)
    elif event is E.READ_FIELD:
        if old is S.HOLLOW:
            object.__setattr__(inst, "_loaded", True)
    elif event is E.WRITE_FIELD:
        inst._dirty.add(slot)
    elif event is E.DELETE:
        inst._dirty.clear()
    elif event in (E.COMMIT, E.ROLLBACK, E.EVICT):
        inst._dirty.clear()
        if new is S.HOLLOW and old is not S.HOLLOW:
            object.__setattr__(inst, "_values", default_values(inst._cls))
            object.__setattr__(inst, "_loaded", False)
        if new is S.TRANSIENT:
            object.__setattr__(inst, "_oid", None)
            object.__setattr__(inst, "_loaded", True)
    object.__setattr__(inst, "_state", new)
    return new


def mark_dirty(inst: ManagedInstance, slot: int) -> None:
    advance(inst, E.WRITE_FIELD, slot=slot)


def invariant_violations(inst: ManagedInstance) -> list[str]:
    out = []
    if inst._state is S.TRANSIENT and inst._oid is not None:
        out.append("transient instance has an ObjectId")
    if inst._state is not S.TRANSIENT and inst._oid is None:
        out.append(f"{inst._state.value} instance lacks an ObjectId")
    if inst._state is S.HOLLOW and (inst._loaded or inst._dirty):
        out.append("hollow instance is loaded or dirty")
    if inst._dirty and inst._state not in (S.PERSISTENT_DIRTY, S.PERSISTENT_NEW):
        out.append(f"dirty slots in state {inst._state.value}")
    return out
