from __future__ import annotations

import json
import subprocess
import sys

import pytest

from reachstore.cli import main
from reachstore.manager import PersistenceManagerFactory
from reachstore.query import execute_query

import flowkit
from conftest import props_for, write_props

DESCRIPTOR = """<jdo>
  <package name="">
    <class name="Track">
      <field name="pt" kind="double"/>
      <field name="q" kind="int"/>
      <field name="next" kind="ref:Track"/>
    </class>
  </package>
</jdo>
"""


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def store(tmp_path, backend, capsys):
    (tmp_path / "d.xml").write_text(DESCRIPTOR)
    props = write_props(tmp_path / "s.properties", props_for(tmp_path, backend, "S"))
    code, out, _ = run(capsys, "create", "--props", str(props), "--descriptor", str(tmp_path / "d.xml"))
    assert code == 0
    assert json.loads(out) == {"backend": backend, "classes": [{"id": 1, "name": "Track"}], "store": "S"}
    for pt in (5.0, 25.5, 30.0, 12.0):
        assert run(capsys, "put", "--props", str(props), "--class", "Track", "--json-record", json.dumps({"pt": pt, "q": 1}))[0] == 0
    return props


def test_put_prints_canonical_record(store, capsys):
    rec = '{"q": -1, "pt": 1.0, "next": {"$ref": {"store": "S", "class": "Track", "seq": 2}}}'
    code, out, _ = run(capsys, "put", "--props", str(store), "--class", "Track", "--json-record", rec)
    assert code == 0
    assert out == (
        '{"$oid": {"class": 1, "seq": 5, "store": "S"}, "next": {"$ref": {"class": 1, "seq": 2, "store": "S"}}, '
        '"pt": 1.0, "q": -1}\n'
    )


def test_query_matches_library_and_is_stable(store, capsys):
    code, out, _ = run(capsys, "query", "--props", str(store), "--class", "Track", "--filter", "pt > 20.0")
    assert code == 0
    assert [json.loads(line)["pt"] for line in out.splitlines()] == [25.5, 30.0]
    fac = PersistenceManagerFactory(store)
    pm = fac.get_persistence_manager()
    oids = execute_query(pm, pm.get_extent("Track"), "pt > 20.0")
    fac.close()
    assert [json.loads(line)["$oid"]["seq"] for line in out.splitlines()] == [o.seq for o in oids]
    assert run(capsys, "query", "--props", str(store), "--class", "Track", "--filter", "pt > 20.0")[1] == out


def test_explain(store, capsys, backend):
    code, out, _ = run(capsys, "query", "--props", str(store), "--class", "Track", "--filter", "pt > 20.0", "--explain")
    assert code == 0
    assert out.strip() == ("SELECT oid FROM track WHERE (pt > 20.0)" if backend == "sql" else "inmemory")


def test_extent_dumps_everything(store, capsys):
    code, out, _ = run(capsys, "extent", "--props", str(store), "--class", "Track")
    assert code == 0 and len(out.splitlines()) == 4


@pytest.mark.parametrize(
    "argv, code",
    [
        (["query", "--class", "Track", "--filter", "pt >"], 1),
        (["query", "--class", "Track", "--filter", "nope > 1"], 1),
        (["query", "--class", "Nope", "--filter", "true"], 1),
        (["put", "--class", "Track", "--json-record", "{bad"], 1),
        (["put", "--class", "Track", "--json-record", '{"pt": "x"}'], 1),
        (["put", "--class", "Track", "--json-record", '{"pt": {"deep": 1}}'], 1),
    ],
)
def test_user_errors_exit_1(store, capsys, argv, code):
    got, out, err = run(capsys, argv[0], "--props", str(store), *argv[1:])
    assert got == code and out == "" and err.startswith("error:")


def test_store_errors_exit_2(tmp_path, capsys):
    props = write_props(tmp_path / "x.properties", props_for(tmp_path / "missing", "file", "x"))
    code, _, err = run(capsys, "extent", "--props", str(props), "--class", "Track")
    assert code == 2 and "StoreUnavailable" in err


def test_catalog_check(tmp_path, capsys, monkeypatch):
    (tmp_path / "d.xml").write_text(DESCRIPTOR)
    good = write_props(tmp_path / "g.properties", props_for(tmp_path, "file", "g"))
    assert run(capsys, "create", "--props", str(good))[0] == 0
    cat = tmp_path / "dbs.cat"
    cat.write_text("g=g.properties\n")
    monkeypatch.setenv("REACHSTORE_CATALOG", str(cat))
    code, out, _ = run(capsys, "catalog", "--check")
    assert code == 0 and json.loads(out)["status"] == "ok"
    cat.write_text("g=g.properties\nh=missing.properties\n")
    code, out, _ = run(capsys, "catalog", "--file", str(cat), "--check")
    assert code == 1 and json.loads(out.splitlines()[1])["status"] != "ok"
    monkeypatch.delenv("REACHSTORE_CATALOG")
    assert run(capsys, "catalog")[0] == 1


def test_run_prints_report(tmp_path, capsys):
    conf, raw = flowkit.build(tmp_path)
    code, out, _ = run(capsys, "run", "--pipeline", str(conf), "--workers", "3")
    good, bad = flowkit.expected_outputs(raw, 2.0)
    report = json.loads(out)
    assert code == 0 and not report["aborted"]
    assert report["nodes"]["good"]["persisted"] + report["nodes"]["bad"]["persisted"] == 20
    assert report["nodes"]["good"]["persisted"] == sum(good.values())


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "reachstore", "catalog", "--file", str(tmp_path / "none")], capture_output=True, text=True)
    assert proc.returncode == 1 and "MalformedCatalog" in proc.stderr
