from __future__ import annotations

import pytest

from reachstore.errors import (
    DuplicateMapper,
    DuplicateStoreName,
    IllegalTransition,
    MalformedCatalog,
    NoMapper,
    StoreUnavailable,
    TypeMismatch,
    UnknownStore,
)
from reachstore.manager import PersistenceManagerFactory
from reachstore.proxies import (
    MapperEntry,
    catalog_load,
    check_catalog,
    mapper_registry,
    parse_catalog,
    read_as,
    register_mapper,
)

from conftest import desc, open_factory, props_for, write_props
from harness import TRACK, two_stores

MUON = desc("Muon", "iso:bool", "Track")


# -- mappers ---------------------------------------------------------------------


def _tracks(tmp, backend):
    fac = open_factory(tmp, backend, TRACK, MUON)
    pm = fac.get_persistence_manager()
    with pm.transaction():
        t = pm.new("Track", px=3.0, py=4.0, q=-1)
        m = pm.new("Muon", px=1.0, py=0.0, q=1, iso=True)
        pm.make_persistent_all([t, m])
    return fac, pm, t, m


def test_read_as_projects_through_expressions(tmp_path, backend):
    fac, pm, t, m = _tracks(tmp_path, backend)
    register_mapper(pm, MapperEntry("Track", "Kin", (("pt2", "px * px + py * py"), ("neg", "q < 0"))))
    view = read_as(pm, t.jdo_oid, "Kin")
    assert view.values == {"pt2": 25.0, "neg": True} and view.pt2 == 25.0
    # the Muon has no mapper of its own and inherits the Track one
    assert read_as(pm, m.jdo_oid, "Kin").values == {"pt2": 1.0, "neg": False}
    with pytest.raises(NoMapper):
        read_as(pm, t.jdo_oid, "Other")


def test_mappers_persist_in_the_store(tmp_path, backend):
    fac, pm, t, _ = _tracks(tmp_path, backend)
    entry = MapperEntry("Track", "Charge", (("q", "q"),))
    register_mapper(fac, entry)
    with pytest.raises(DuplicateMapper):
        register_mapper(fac, entry)
    oid = t.jdo_oid
    fac.close()
    again = PersistenceManagerFactory(props_for(tmp_path, backend))
    assert mapper_registry(again).entries() == [entry]
    assert read_as(again.get_persistence_manager(), oid, "Charge").q == -1


def test_mapper_expressions_are_type_checked(tmp_path):
    fac, pm, *_ = _tracks(tmp_path, "file")
    with pytest.raises(TypeMismatch):
        register_mapper(pm, MapperEntry("Track", "Bad", (("x", "nope + 1"),)))
    with pytest.raises(TypeMismatch):
        register_mapper(pm, MapperEntry("Track", "Bad", (("x", "iso"),)))
    with pytest.raises(TypeMismatch):
        register_mapper(pm, MapperEntry("Track", "Bad", (("x", "q"), ("x", "px"))))
    assert mapper_registry(pm).entries() == []


# -- catalog -----------------------------------------------------------------------


def test_parse_catalog(tmp_path):
    cat = parse_catalog("# stores\nd1 = one.properties\n\nd2=/abs/two.properties\n", tmp_path)
    assert cat.get("d1").location == str(tmp_path / "one.properties")
    assert cat.get("d2").location == "/abs/two.properties"
    with pytest.raises(UnknownStore):
        cat.get("d3")
    with pytest.raises(DuplicateStoreName):
        parse_catalog("a=x\na=y\n")
    for bad in ("just a line", "=x", "a=", "a b=c"):
        with pytest.raises(MalformedCatalog):
            parse_catalog(bad)
    with pytest.raises(MalformedCatalog):
        catalog_load(tmp_path / "missing.cat")


@pytest.mark.parametrize("backends", [("file", "sql"), ("sql", "file"), ("file", "file")])
def test_foreign_reference_reads_transparently(tmp_path, backends):
    p1, p2, ev_oid = two_stores(tmp_path, *backends)
    fac = PersistenceManagerFactory(p1)
    pm = fac.get_persistence_manager()
    ev = pm.get_object_by_id(ev_oid)
    assert ev.raw("track").store == "db2"
    assert ev.track.px == 12.5
    assert ev.track is ev.track
    assert pm.new_query("Event", "track.px > 10.0").execute() == [ev]
    pm.begin()
    with pytest.raises(IllegalTransition):
        ev.track.px = 1.0
    pm.rollback()
    fac.close()


def test_unknown_or_unreachable_foreign_store(tmp_path):
    p1, p2, ev_oid = two_stores(tmp_path)
    (tmp_path / "dbs.cat").write_text("db1=db1.properties\n")
    pm = PersistenceManagerFactory(p1).get_persistence_manager()
    with pytest.raises(UnknownStore):
        pm.get_object_by_id(ev_oid).track
    (tmp_path / "dbs.cat").write_text("db1=db1.properties\ndb2=db1.properties\n")
    pm = PersistenceManagerFactory(p1).get_persistence_manager()
    with pytest.raises(StoreUnavailable):
        pm.get_object_by_id(ev_oid).track


def test_check_catalog_reports_each_store(tmp_path):
    two_stores(tmp_path)
    ghost = write_props(tmp_path / "ghost.properties", props_for(tmp_path / "nowhere", "file", "ghost"))
    (tmp_path / "dbs.cat").write_text(f"db1=db1.properties\ndb2=db2.properties\nghost={ghost}\nwrong=db1.properties\n")
    report = dict(check_catalog(catalog_load(tmp_path / "dbs.cat")))
    assert report["db1"] is None and report["db2"] is None
    assert report["ghost"] and "db1" in report["wrong"]
