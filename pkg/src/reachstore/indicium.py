"""Attribute sets: event metadata records on top of the persistence layer.

A :class:`Signature` is an ordered list of typed attributes. Creating a
collection registers a synthetic class named after the signature, whose
extent is the collection. Every such class carries an extra ``event_ref``
reference to the (possibly foreign) event object the set describes.

Any plain registered class can be queried the same way through
:meth:`Accessor.query_class`.
"""

from __future__ import annotations

import contextlib
import os
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from typing import Any, Mapping

from .errors import (
    CollectionExists,
    DuplicateAttribute,
    IncompatibleSignature,
    MalformedXml,
    MissingNameAttribute,
    NoSuchCollection,
    SignatureMismatch,
    UnknownElement,
    UnknownKind,
    UserError,
)
from .lifecycle import ManagedInstance
from .manager import PersistenceManagerFactory
from .metamodel import (
    ANY_CLASS,
    BOOL,
    DOUBLE,
    INT,
    LONG,
    STR,
    ClassDescriptor,
    FieldKind,
    FieldSpec,
    ObjectId,
    Ref,
    Registry,
    coerce_value,
    xml_attr,
)
from .query.execute import execute_query

KIND_TEXTS: dict[str, FieldKind] = {
    "int": INT,
    "long": LONG,
    "double": DOUBLE,
    "bool": BOOL,
    "String": STR,
}
_TEXT_OF = {str(k): t for t, k in KIND_TEXTS.items()}

EVENT_REF = "event_ref"
COLLECTIONS_SECTION = "collections"


@dataclass(frozen=True)
class Attribute:
    name: str
    kind: FieldKind
    description: str = ""


@dataclass
class Signature:
    name: str
    attributes: list[Attribute] = field(default_factory=list)

    def add(self, name: str, kind: str, description: str = "") -> None:
        if name == EVENT_REF or any(a.name == name for a in self.attributes):
            raise DuplicateAttribute(f"{self.name}.{name}")
        try:
            fk = KIND_TEXTS[kind]
        except KeyError:
            raise UnknownKind(f"{kind!r} (expected one of {', '.join(KIND_TEXTS)})") from None
        self.attributes.append(Attribute(name, fk, description))

    def names(self) -> list[str]:
        return [a.name for a in self.attributes]

    def to_descriptor(self) -> ClassDescriptor:
        fields = [FieldSpec(a.name, a.kind, a.description or None) for a in self.attributes]
        fields.append(FieldSpec(EVENT_REF, Ref(ANY_CLASS), None))
        return ClassDescriptor(self.name, None, tuple(fields))

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "attributes": [[a.name, _TEXT_OF[str(a.kind)], a.description] for a in self.attributes],
        }

    @classmethod
    def from_json(cls, data: Mapping) -> Signature:
        sig = cls(data["name"])
        for name, kind, desc in data["attributes"]:
            sig.add(name, kind, desc)
        return sig


def signature_add(sig: Signature, name: str, kind: str, description: str = "") -> None:
    sig.add(name, kind, description)


def generate_from_spec(text: str) -> Signature:
    """Build a signature from ``<attributeset name=..>`` XML."""
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        raise MalformedXml(str(exc)) from exc
    if root.tag != "attributeset":
        raise UnknownElement(f"root element must be <attributeset>, got <{root.tag}>")
    _only_attrs(root, {"name"})
    sig = Signature(_name_of(root))
    for el in root:
        if el.tag != "attribute":
            raise UnknownElement(f"<{el.tag}> inside <attributeset>")
        _only_attrs(el, {"name", "kind", "description"})
        if len(el):
            raise UnknownElement(f"<{el[0].tag}> inside <attribute>")
        kind = el.get("kind")
        if kind is None:
            raise MalformedXml(f"attribute {_name_of(el)!r} has no kind")
        sig.add(_name_of(el), kind, el.get("description", ""))
    return sig


def render_spec(sig: Signature) -> str:
    lines = [f"<attributeset name={xml_attr(sig.name)}>"]
    for a in sig.attributes:
        lines.append(
            f"  <attribute name={xml_attr(a.name)} kind={xml_attr(_TEXT_OF[str(a.kind)])}"
            f" description={xml_attr(a.description)}/>"
        )
    lines.append("</attributeset>")
    return "\n".join(lines) + "\n"


def _name_of(el: ET.Element) -> str:
    name = el.get("name")
    if name is None:
        raise MissingNameAttribute(f"<{el.tag}> without name attribute")
    return name


def _only_attrs(el: ET.Element, allowed: set[str]) -> None:
    extra = set(el.attrib) - allowed
    if extra:
        raise UnknownElement(f"unknown attribute(s) on <{el.tag}>: {', '.join(sorted(extra))}")


class AttributeSet:
    """One record of a collection: a value per signature attribute."""

    def __init__(self, signature: Signature, values: Mapping[str, Any] | None = None, event_ref=None):
        self.signature = signature
        self._kinds = {a.name: a.kind for a in signature.attributes}
        self.values: dict[str, Any] = {a.name: None for a in signature.attributes}
        self.event_ref = event_ref
        self.oid: ObjectId | None = None
        for k, v in (values or {}).items():
            self.set(k, v)

    def set(self, name: str, value: Any) -> None:
        if name not in self._kinds:
            raise SignatureMismatch(f"{self.signature.name} has no attribute {name!r}")
        try:
            self.values[name] = coerce_value(self._kinds[name], value)
        except UserError as exc:
            raise SignatureMismatch(f"{self.signature.name}.{name}: {exc}") from exc

    def get(self, name: str) -> Any:
        if name not in self._kinds:
            raise SignatureMismatch(f"{self.signature.name} has no attribute {name!r}")
        return self.values[name]

    def __getitem__(self, name: str) -> Any:
        return self.get(name)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, AttributeSet)
            and self.signature == other.signature
            and self.values == other.values
            and self.event_ref == other.event_ref
        )

    def __repr__(self) -> str:
        body = ", ".join(f"{k}={v!r}" for k, v in self.values.items())
        where = f" @{self.oid}" if self.oid else ""
        return f"{self.signature.name}({body}){where}"

    __str__ = __repr__


AssembledAttributeSet = AttributeSet


@dataclass
class CollectionHandle:
    name: str
    signature: Signature
    class_name: str
    class_id: int


class Accessor:
    """Entry point: one per properties file; owns a manager over its store."""

    def __init__(self, factory: PersistenceManagerFactory):
        self.factory = factory
        self.pm = factory.get_persistence_manager()
        self._last: str | None = None
        self._batch_depth = 0

    # -- collections ------------------------------------------------------

    def _sections(self) -> dict[str, dict]:
        return dict(self.factory.adapter.sections.get(COLLECTIONS_SECTION, {}))

    def collections(self) -> list[str]:
        return sorted(self._sections())

    def create_collection(self, name: str, signature: Signature, overwrite: bool = False) -> CollectionHandle:
        if self.pm.active:
            raise UserError("cannot create a collection inside an open batch")
        adapter = self.factory.adapter
        registry: Registry = adapter.registry
        sections = self._sections()
        desc = signature.to_descriptor()
        layout = tuple((f.name, str(f.kind)) for f in desc.fields)
        if name in sections:
            if not overwrite:
                raise CollectionExists(name)
            old = sections.pop(name)
            adapter.drop_class_data(old["class_id"])
            old_rc = registry.get(old["class_id"])
            if old_rc.layout() != layout or old_rc.name != signature.name:
                registry.retire(old_rc.name)
                adapter.sync_classes()
            self.pm.evict_all()
        for other, info in sections.items():
            if info["class"] == signature.name:
                raise IncompatibleSignature(
                    f"class {signature.name!r} already backs collection {other!r}"
                )
        if signature.name in registry:
            rc = registry.by_name(signature.name)
            if rc.layout() != layout or rc.superclass_id is not None:
                raise IncompatibleSignature(
                    f"class {signature.name!r} exists with a different layout"
                )
        else:
            rc = self.factory.add_class(desc)
        sections[name] = {"class": rc.name, "class_id": rc.class_id, "signature": signature.to_json()}
        adapter.update_section(COLLECTIONS_SECTION, sections)
        self._last = name
        return CollectionHandle(name, signature, rc.name, rc.class_id)

    def open_collection(self, name: str) -> CollectionHandle:
        info = self._sections().get(name)
        if info is None:
            raise NoSuchCollection(name)
        self._last = name
        return CollectionHandle(name, Signature.from_json(info["signature"]), info["class"], info["class_id"])

    def drop_collection(self, name: str) -> None:
        sections = self._sections()
        info = sections.pop(name, None)
        if info is None:
            raise NoSuchCollection(name)
        adapter = self.factory.adapter
        adapter.drop_class_data(info["class_id"])
        adapter.registry.retire(info["class"])
        adapter.sync_classes()
        adapter.update_section(COLLECTIONS_SECTION, sections)
        self.pm.evict_all()
        if self._last == name:
            self._last = None

    def _handle(self, collection: str | CollectionHandle | None) -> CollectionHandle:
        if isinstance(collection, CollectionHandle):
            collection = collection.name
        if collection is None:
            if self._last is None:
                raise NoSuchCollection("no collection has been created or opened")
            collection = self._last
        return self.open_collection(collection)

    # -- writing ----------------------------------------------------------

    @contextlib.contextmanager
    def batch(self):
        """Group writes into one transaction."""
        if self._batch_depth == 0:
            self.pm.begin()
        self._batch_depth += 1
        try:
            yield self
        except BaseException:
            self._batch_depth -= 1
            if self._batch_depth == 0 and self.pm.active:
                self.pm.rollback()
            raise
        self._batch_depth -= 1
        if self._batch_depth == 0:
            self.pm.commit()

    def write(self, aset: AttributeSet, collection: str | CollectionHandle | None = None) -> ObjectId:
        handle = self._handle(collection)
        if aset.signature != handle.signature:
            raise SignatureMismatch(
                f"set has signature {aset.signature.name!r}, collection {handle.name!r} "
                f"expects {handle.signature.name!r} with attributes {handle.signature.names()}"
            )
        with self.batch():
            inst = self.pm.new(handle.class_name, **aset.values, event_ref=aset.event_ref)
            oid = self.pm.make_persistent(inst)
        aset.oid = oid
        return oid

    # -- queries ----------------------------------------------------------

    def new_query(self, filter_text: str = "true", collection: str | CollectionHandle | None = None):
        return AttributeQuery(self, self._handle(collection), filter_text)

    def query(self, filter_text: str, collection: str | CollectionHandle | None = None) -> list[AttributeSet]:
        return self.new_query(filter_text, collection).execute()

    def query_class(self, cls: Any, filter_text: str = "true") -> list[ManagedInstance]:
        """Query any registered class; results are its managed instances."""
        return self.pm.new_query(cls, filter_text).execute()

    def close(self) -> None:
        self.pm.close()
        self.factory.close()

    def __enter__(self) -> Accessor:
        return self

    def __exit__(self, *exc) -> None:
        self.close()


class AttributeQuery:
    def __init__(self, accessor: Accessor, handle: CollectionHandle, filter_text: str):
        self.accessor = accessor
        self.handle = handle
        self.filter = filter_text

    def execute_oids(self) -> list[ObjectId]:
        pm = self.accessor.pm
        return execute_query(pm, pm.get_extent(self.handle.class_name, False), self.filter)

    def execute(self) -> list[AttributeSet]:
        pm = self.accessor.pm
        out = []
        for oid in self.execute_oids():
            inst = pm.get_object_by_id(oid)
            raw = inst.field_values()
            event = raw.pop(EVENT_REF)
            aset = AttributeSet(self.handle.signature, raw, event)
            aset.oid = oid
            out.append(aset)
        return out


def create_accessor(properties: Mapping[str, str] | str | os.PathLike, registry: Registry | None = None) -> Accessor:
    """Open (or create) the store described by ``properties``."""
    return Accessor(PersistenceManagerFactory(properties, registry))


def attr_write(accessor: Accessor, collection, aset: AttributeSet) -> ObjectId:
    return accessor.write(aset, collection)


def attr_query(accessor: Accessor, collection, filter_text: str) -> list[AttributeSet]:
    return accessor.query(filter_text, collection)


def create_collection(accessor: Accessor, name: str, signature: Signature, overwrite: bool = False) -> CollectionHandle:
    return accessor.create_collection(name, signature, overwrite)
