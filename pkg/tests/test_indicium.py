from __future__ import annotations

import pytest
from hypothesis import given, strategies as st

from reachstore.errors import (
    CollectionExists,
    DuplicateAttribute,
    IncompatibleSignature,
    MalformedXml,
    NoSuchCollection,
    SignatureMismatch,
    UnknownKind,
)
from reachstore.indicium import (
    AttributeSet,
    Signature,
    create_accessor,
    generate_from_spec,
    render_spec,
)
from reachstore.metamodel import ObjectId

from conftest import desc, open_factory, props_for


def three_attribute_signature() -> Signature:
    sig = Signature("MySignature")
    sig.add("j", "int", "int attribute")
    sig.add("y", "double")
    sig.add("s", "String")
    return sig


def fill(acc, n=100, event_store="evts"):
    sig = acc.open_collection("MyCollection").signature
    with acc.batch():
        for i in range(n):
            aset = AttributeSet(sig, event_ref=ObjectId(event_store, 1, i + 1))
            aset.set("j", i)
            aset.set("y", i / 100)
            aset.set("s", f"s{i}")
            acc.write(aset)


def test_write_query_reopen_workflow(tmp_path, backend):
    props = props_for(tmp_path, backend)
    acc = create_accessor(props)
    acc.create_collection("MyCollection", three_attribute_signature())
    fill(acc)
    hits = acc.query("y > 0.5")
    assert len(hits) == 49
    assert [h.get("j") for h in hits] == list(range(51, 100))
    assert hits[0].event_ref == ObjectId("evts", 1, 52)
    acc.close()
    again = create_accessor(props)
    assert again.collections() == ["MyCollection"]
    assert len(again.query("y > 0.5", "MyCollection")) == 49
    assert len(again.query("s == 's7' || j < 2", "MyCollection")) == 3
    again.close()


def test_signature_rules():
    sig = three_attribute_signature()
    with pytest.raises(DuplicateAttribute):
        sig.add("j", "int")
    with pytest.raises(DuplicateAttribute):
        sig.add("event_ref", "int")
    with pytest.raises(UnknownKind):
        sig.add("z", "float")
    assert [f.name for f in sig.to_descriptor().fields] == ["j", "y", "s", "event_ref"]


xml_text = st.text(st.characters(blacklist_categories=("Cc", "Cs")) | st.sampled_from("\n\t"), max_size=6)
names = st.from_regex(r"[a-z][a-z0-9]{0,6}", fullmatch=True).filter(lambda n: n != "event_ref")


@given(st.lists(st.tuples(names, st.sampled_from(["int", "long", "double", "bool", "String"]), xml_text), unique_by=lambda t: t[0], max_size=6))
def test_spec_round_trip(attrs):
    sig = Signature("Gen")
    for a in attrs:
        sig.add(*a)
    text = render_spec(sig)
    back = generate_from_spec(text)
    assert back == sig and render_spec(back) == text


def test_spec_errors():
    with pytest.raises(MalformedXml):
        generate_from_spec("<attributeset name='x'>")
    with pytest.raises(MalformedXml):
        generate_from_spec("<attributeset name='x'><attribute name='a'/></attributeset>")
    sig = Signature("S")
    sig.add("a", "int", "nul\x00")
    with pytest.raises(MalformedXml):
        render_spec(sig)


def test_attribute_set_checks_values():
    aset = AttributeSet(three_attribute_signature())
    with pytest.raises(SignatureMismatch):
        aset.set("nope", 1)
    with pytest.raises(SignatureMismatch):
        aset.set("j", "one")
    aset.set("y", 1)
    assert aset.get("y") == 1.0


def test_collection_lifecycle(tmp_path, backend):
    acc = create_accessor(props_for(tmp_path, backend))
    acc.create_collection("MyCollection", three_attribute_signature())
    fill(acc, 5)
    with pytest.raises(CollectionExists):
        acc.create_collection("MyCollection", three_attribute_signature())
    with pytest.raises(IncompatibleSignature):
        acc.create_collection("Other", three_attribute_signature())
    acc.create_collection("MyCollection", three_attribute_signature(), overwrite=True)
    assert acc.query("true") == []
    changed = Signature("MySignature")
    changed.add("j", "long")
    acc.create_collection("MyCollection", changed, overwrite=True)
    with pytest.raises(SignatureMismatch):
        acc.write(AttributeSet(three_attribute_signature(), {"j": 1}))
    acc.write(AttributeSet(changed, {"j": 2**40}))
    assert [a.get("j") for a in acc.query("j > 3000000000")] == [2**40]
    acc.drop_collection("MyCollection")
    with pytest.raises(NoSuchCollection):
        acc.open_collection("MyCollection")
    with pytest.raises(NoSuchCollection):
        acc.query("true", "MyCollection")
    acc.close()


def test_failed_batch_writes_nothing(tmp_path, backend):
    acc = create_accessor(props_for(tmp_path, backend))
    acc.create_collection("MyCollection", three_attribute_signature())
    with pytest.raises(RuntimeError):
        with acc.batch():
            acc.write(AttributeSet(three_attribute_signature(), {"j": 1}))
            raise RuntimeError("abort")
    assert acc.query("true") == []
    acc.close()


def test_query_class_works_on_plain_classes(tmp_path, backend):
    fac = open_factory(tmp_path, backend, desc("Track", "pt:double"))
    pm = fac.get_persistence_manager()
    with pm.transaction():
        pm.make_persistent_all([pm.new("Track", pt=float(p)) for p in (5, 25, 35)])
    fac.close()
    acc = create_accessor(props_for(tmp_path, backend))
    assert [t.pt for t in acc.query_class("Track", "pt > 20.0")] == [25.0, 35.0]
    acc.close()
