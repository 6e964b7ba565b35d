"""Class metadata registry and the shared value model.

Registering a :class:`ClassDescriptor` is what makes a class
persistence-capable: it gets a dense ``class_id``, a flattened slot layout
(superclass slots first) and may then be stored, queried and iterated in
extents.
"""

from __future__ import annotations

import math
import re
import threading
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from typing import Any, Iterable, Iterator
from xml.sax.saxutils import quoteattr

from .errors import (
    DuplicateClass,
    DuplicateField,
    MalformedXml,
    MissingNameAttribute,
    RegistryFrozen,
    UnknownElement,
    UnknownField,
    UnknownKind,
    UnknownSuperclass,
    UnregisteredClass,
    ValueKindError,
)

INT64_MIN = -(2**63)
INT64_MAX = 2**63 - 1

SCALAR_BASES = ("int", "long", "double", "bool", "str")
REF_BASES = ("ref", "reflist")

#: Ref target accepting instances of any class (used for cross-store links).
ANY_CLASS = "*"


@dataclass(frozen=True)
class FieldKind:
    base: str
    target: str | None = None

    def __post_init__(self):
        if self.base in SCALAR_BASES:
            if self.target is not None:
                raise UnknownKind(f"scalar kind {self.base!r} takes no target")
        elif self.base in REF_BASES:
            if not self.target:
                raise UnknownKind(f"kind {self.base!r} needs a target class")
        else:
            raise UnknownKind(f"unknown field kind {self.base!r}")

    @property
    def is_ref(self) -> bool:
        return self.base == "ref"

    @property
    def is_reflist(self) -> bool:
        return self.base == "reflist"

    @property
    def is_numeric(self) -> bool:
        return self.base in ("int", "long", "double")

    def __str__(self) -> str:
        return f"{self.base}:{self.target}" if self.target else self.base

    @classmethod
    def parse(cls, text: str) -> FieldKind:
        """Parse ``int|long|double|bool|str|ref:Class|reflist:Class``."""
        base, sep, target = text.partition(":")
        if sep:
            if base not in REF_BASES:
                raise UnknownKind(f"unknown field kind {text!r}")
            return cls(base, target)
        if base not in SCALAR_BASES:
            raise UnknownKind(f"unknown field kind {text!r}")
        return cls(base)


INT = FieldKind("int")
LONG = FieldKind("long")
DOUBLE = FieldKind("double")
BOOL = FieldKind("bool")
STR = FieldKind("str")


def Ref(target: str) -> FieldKind:
    return FieldKind("ref", target)


def RefList(target: str) -> FieldKind:
    return FieldKind("reflist", target)


@dataclass(frozen=True, order=True)
class ObjectId:
    """Globally resolvable identity of a stored object."""

    store: str
    class_id: int
    seq: int

    def __str__(self) -> str:
        return f"{self.store}:{self.class_id}:{self.seq}"

    @classmethod
    def parse(cls, text: str) -> ObjectId:
        store, class_id, seq = text.rsplit(":", 2)
        return cls(store, int(class_id), int(seq))


@dataclass(frozen=True)
class FieldSpec:
    name: str
    kind: FieldKind
    description: str | None = None


@dataclass(frozen=True)
class ClassDescriptor:
    class_name: str
    superclass: str | None = None
    fields: tuple[FieldSpec, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "fields", tuple(self.fields))


@dataclass(eq=False)
class RegisteredClass:
    """A class as seen by the rest of the engine: id, layout, lineage."""

    class_id: int
    descriptor: ClassDescriptor
    slots: tuple[FieldSpec, ...]
    superclass_id: int | None
    retired: bool = False
    python_type: type | None = None
    lineage: tuple[str, ...] = ()
    slot_index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.slot_index = {f.name: i for i, f in enumerate(self.slots)}
        if not self.lineage:
            self.lineage = (self.descriptor.class_name,)

    @property
    def name(self) -> str:
        return self.descriptor.class_name

    def layout(self) -> tuple[tuple[str, str], ...]:
        return tuple((f.name, str(f.kind)) for f in self.slots)


class Registry:
    """Registry of persistence-capable classes.

    Mutation happens single-threaded before :meth:`freeze`. After freezing,
    only :meth:`extend` (append a new class) and :meth:`retire` are allowed;
    both leave every existing class id and slot layout untouched.
    """

    def __init__(self):
        self._classes: list[RegisteredClass] = []
        self._by_name: dict[str, RegisteredClass] = {}
        self._frozen = False
        self._lock = threading.RLock()

    # -- registration -----------------------------------------------------

    def register_class(self, descriptor: ClassDescriptor, cls: type | None = None) -> int:
        if self._frozen:
            raise RegistryFrozen("registry is frozen; use extend() to add classes")
        return self._add(descriptor, cls)

    def extend(self, descriptor: ClassDescriptor, cls: type | None = None) -> int:
        return self._add(descriptor, cls)

    def _add(self, descriptor: ClassDescriptor, cls: type | None) -> int:
        with self._lock:
            if descriptor.class_name in self._by_name:
                raise DuplicateClass(descriptor.class_name)
            inherited: tuple[FieldSpec, ...] = ()
            super_id = None
            lineage: tuple[str, ...] = (descriptor.class_name,)
            if descriptor.superclass is not None:
                parent = self._by_name.get(descriptor.superclass)
                if parent is None:
                    raise UnknownSuperclass(descriptor.superclass)
                inherited = parent.slots
                super_id = parent.class_id
                lineage += parent.lineage
            seen = {f.name for f in inherited}
            for f in descriptor.fields:
                if f.name in seen:
                    raise DuplicateField(f"{descriptor.class_name}.{f.name}")
                seen.add(f.name)
            rc = RegisteredClass(
                class_id=len(self._classes) + 1,
                descriptor=descriptor,
                slots=inherited + descriptor.fields,
                superclass_id=super_id,
                python_type=cls,
                lineage=lineage,
            )
            self._classes.append(rc)
            self._by_name[rc.name] = rc
            if cls is not None:
                cls._jdo_class = rc
            return rc.class_id

    def retire(self, class_name: str) -> None:
        """Free ``class_name`` for redefinition; its id stays reserved."""
        with self._lock:
            rc = self.by_name(class_name)
            if any(c.superclass_id == rc.class_id and not c.retired for c in self._classes):
                raise UnregisteredClass(f"cannot retire {class_name}: live subclasses")
            rc.retired = True
            del self._by_name[class_name]

    def bind(self, class_name: str, cls: type) -> None:
        """Attach a host class so instances load as ``cls``."""
        rc = self.by_name(class_name)
        rc.python_type = cls
        cls._jdo_class = rc

    def freeze(self) -> None:
        for rc in self._by_name.values():
            for f in rc.slots:
                if f.kind.target not in (None, ANY_CLASS) and f.kind.target not in self._by_name:
                    raise UnregisteredClass(
                        f"{rc.name}.{f.name} references unregistered class {f.kind.target}"
                    )
        self._frozen = True

    @property
    def frozen(self) -> bool:
        return self._frozen

    # -- lookup -----------------------------------------------------------

    def get(self, class_id: int) -> RegisteredClass:
        if not 1 <= class_id <= len(self._classes):
            raise UnregisteredClass(f"class id {class_id}")
        return self._classes[class_id - 1]

    def by_name(self, name: str) -> RegisteredClass:
        try:
            return self._by_name[name]
        except KeyError:
            raise UnregisteredClass(name) from None

    def resolve(self, cls: int | str | RegisteredClass | type) -> RegisteredClass:
        if isinstance(cls, RegisteredClass):
            return cls
        if isinstance(cls, int):
            return self.get(cls)
        if isinstance(cls, str):
            return self.by_name(cls)
        rc = getattr(cls, "_jdo_class", None)
        if rc is None:
            raise UnregisteredClass(getattr(cls, "__name__", repr(cls)))
        return self.by_name(rc.name)

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    def __len__(self) -> int:
        return len(self._classes)

    def __iter__(self) -> Iterator[RegisteredClass]:
        return iter(list(self._classes))

    def live_classes(self) -> list[RegisteredClass]:
        return [c for c in self._classes if not c.retired]

    def lookup_field(self, cls: int | str | RegisteredClass, field_name: str) -> tuple[int, FieldKind]:
        rc = self.resolve(cls)
        idx = rc.slot_index.get(field_name)
        if idx is None:
            raise UnknownField(f"{rc.name}.{field_name}")
        return idx, rc.slots[idx].kind

    def is_subclass(self, class_id: int, ancestor_id: int) -> bool:
        cid: int | None = class_id
        while cid is not None:
            if cid == ancestor_id:
                return True
            cid = self.get(cid).superclass_id
        return False

    def subclasses(self, class_id: int, include_self: bool = True) -> list[int]:
        """Live class ids descending from ``class_id``, ascending order."""
        out = []
        for rc in self._classes:
            if rc.retired:
                continue
            if rc.class_id == class_id and not include_self:
                continue
            if self.is_subclass(rc.class_id, class_id):
                out.append(rc.class_id)
        return out

    def new(self, class_name: str, **values: Any):
        """Create a transient instance of a registered class."""
        from .lifecycle import ManagedInstance

        rc = self.by_name(class_name)
        factory = rc.python_type or ManagedInstance
        inst = factory.__new__(factory)
        ManagedInstance.__init__(inst, _class=rc, **values)
        return inst

    # -- header (de)serialization ----------------------------------------

    def to_table(self) -> list[dict]:
        return [class_to_json(rc) for rc in self._classes]

    @classmethod
    def from_table(cls, table: Iterable[dict]) -> Registry:
        reg = cls()
        for entry in table:
            desc = descriptor_from_json(entry)
            if entry["id"] != len(reg._classes) + 1:
                raise ValueError(f"class table out of order at id {entry['id']}")
            sup_id = entry.get("superclass_id")
            parent = reg.get(sup_id) if sup_id else None
            inherited = parent.slots if parent else ()
            rc = RegisteredClass(
                class_id=entry["id"],
                descriptor=desc,
                slots=inherited + desc.fields,
                superclass_id=sup_id,
                retired=bool(entry.get("retired")),
                lineage=(desc.class_name,) + (parent.lineage if parent else ()),
            )
            reg._classes.append(rc)
            if not rc.retired:
                reg._by_name[rc.name] = rc
        return reg


def class_to_json(rc: RegisteredClass) -> dict:
    return {
        "id": rc.class_id,
        "name": rc.name,
        "superclass": rc.descriptor.superclass,
        "superclass_id": rc.superclass_id,
        "fields": [
            {"name": f.name, "kind": str(f.kind), "description": f.description}
            for f in rc.descriptor.fields
        ],
        "retired": rc.retired,
    }


def descriptor_from_json(entry: dict) -> ClassDescriptor:
    return ClassDescriptor(
        entry["name"],
        entry.get("superclass"),
        tuple(
            FieldSpec(f["name"], FieldKind.parse(f["kind"]), f.get("description"))
            for f in entry.get("fields", ())
        ),
    )


def coerce_value(kind: FieldKind, value: Any) -> Any:
    """Validate ``value`` against ``kind`` and return its normalized form.

    RefList values are normalized to lists; Null RefLists become empty.
    Ref targets are checked by the lifecycle layer, which knows the registry.
    """
    if value is None:
        return [] if kind.is_reflist else None
    base = kind.base
    if base in ("int", "long"):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValueKindError(f"expected {base}, got {type(value).__name__}")
        if not INT64_MIN <= value <= INT64_MAX:
            raise ValueKindError(f"{value} out of 64-bit range")
        return value
    if base == "double":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValueKindError(f"expected double, got {type(value).__name__}")
        return float(value)
    if base == "bool":
        if not isinstance(value, bool):
            raise ValueKindError(f"expected bool, got {type(value).__name__}")
        return value
    if base == "str":
        if not isinstance(value, str):
            raise ValueKindError(f"expected str, got {type(value).__name__}")
        return value
    if base == "ref":
        if not _is_ref_value(value):
            raise ValueKindError(f"expected reference, got {type(value).__name__}")
        return value
    if not isinstance(value, (list, tuple)):
        raise ValueKindError(f"expected reference list, got {type(value).__name__}")
    for v in value:
        if v is None or not _is_ref_value(v):
            raise ValueKindError("reference lists hold references only")
    return list(value)


def _is_ref_value(value: Any) -> bool:
    return isinstance(value, ObjectId) or getattr(value, "_jdo_managed", False)


def values_equal(a: Any, b: Any) -> bool:
    """Equality that treats NaN as equal to itself (for round-trip checks)."""
    if isinstance(a, float) and isinstance(b, float) and math.isnan(a) and math.isnan(b):
        return True
    return a == b


# -- persistence descriptor XML -------------------------------------------

_FIELD_ATTRS = {"name", "kind", "description"}
_CLASS_ATTRS = {"name", "persistence-capable-superclass"}


def parse_descriptor(text: str) -> list[ClassDescriptor]:
    """Parse a persistence descriptor into class overrides.

    Class names come back fully qualified (``package.Class``). The registry
    is not touched; callers pass the results to :meth:`Registry.register_class`.
    """
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        raise MalformedXml(str(exc)) from exc
    if root.tag != "jdo":
        raise UnknownElement(f"root element must be <jdo>, got <{root.tag}>")
    _no_extra_attrs(root, set())
    out: list[ClassDescriptor] = []
    for pkg in root:
        if pkg.tag != "package":
            raise UnknownElement(f"<{pkg.tag}> inside <jdo>")
        _no_extra_attrs(pkg, {"name"})
        pkg_name = _required_name(pkg)
        for cls in pkg:
            if cls.tag != "class":
                raise UnknownElement(f"<{cls.tag}> inside <package>")
            _no_extra_attrs(cls, _CLASS_ATTRS)
            cls_name = _required_name(cls)
            fields = []
            for fld in cls:
                if fld.tag != "field":
                    raise UnknownElement(f"<{fld.tag}> inside <class>")
                _no_extra_attrs(fld, _FIELD_ATTRS)
                if len(fld):
                    raise UnknownElement(f"<{fld[0].tag}> inside <field>")
                kind_text = fld.get("kind")
                if kind_text is None:
                    raise MalformedXml(f"field {_required_name(fld)!r} has no kind")
                fields.append(
                    FieldSpec(_required_name(fld), FieldKind.parse(kind_text), fld.get("description"))
                )
            qualified = f"{pkg_name}.{cls_name}" if pkg_name else cls_name
            out.append(
                ClassDescriptor(qualified, cls.get("persistence-capable-superclass"), tuple(fields))
            )
    return out


def _required_name(el: ET.Element) -> str:
    name = el.get("name")
    if name is None:
        raise MissingNameAttribute(f"<{el.tag}> without name attribute")
    return name


def _no_extra_attrs(el: ET.Element, allowed: set[str]) -> None:
    extra = set(el.attrib) - allowed
    if extra:
        raise UnknownElement(f"unknown attribute(s) on <{el.tag}>: {', '.join(sorted(extra))}")


# XML 1.0 cannot carry these even as character references.
_NOT_XML = re.compile("[\x00-\x08\x0b\x0c\x0e-\x1f\ud800-\udfff\ufffe\uffff]")


def xml_attr(text: str) -> str:
    if _NOT_XML.search(text):
        raise MalformedXml(f"{text!r} contains a character XML cannot represent")
    return quoteattr(text)


def render_descriptor(descriptors: Iterable[ClassDescriptor]) -> str:
    """Canonical descriptor text; ``parse_descriptor`` inverts it."""
    packages: dict[str, list[ClassDescriptor]] = {}
    for d in descriptors:
        pkg, _, _ = d.class_name.rpartition(".")
        packages.setdefault(pkg, []).append(d)
    lines = ["<jdo>"]
    for pkg, classes in packages.items():
        lines.append(f"  <package name={xml_attr(pkg)}>")
        for d in classes:
            short = d.class_name.rpartition(".")[2]
            attrs = f"name={xml_attr(short)}"
            if d.superclass is not None:
                attrs += f" persistence-capable-superclass={xml_attr(d.superclass)}"
            if not d.fields:
                lines.append(f"    <class {attrs}/>")
                continue
            lines.append(f"    <class {attrs}>")
            for f in d.fields:
                fattrs = f"name={xml_attr(f.name)} kind={xml_attr(str(f.kind))}"
                if f.description is not None:
                    fattrs += f" description={xml_attr(f.description)}"
                lines.append(f"      <field {fattrs}/>")
            lines.append("    </class>")
        lines.append("  </package>")
    lines.append("</jdo>")
    return "\n".join(lines) + "\n"
