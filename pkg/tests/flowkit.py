"""Fixtures for dataflow tests: a two-input, one-processor, two-output run."""

from __future__ import annotations

import random
from collections import Counter
from pathlib import Path

from reachstore.manager import PersistenceManagerFactory
from reachstore.metamodel import ClassDescriptor, FieldKind, FieldSpec, Registry, render_descriptor

from conftest import props_for, write_props

RAW = ClassDescriptor("RawEvent", None, (FieldSpec("n", FieldKind.parse("int")), FieldSpec("e", FieldKind.parse("double"))))
PROC = ClassDescriptor(
    "ProcEvent",
    None,
    (FieldSpec("n", FieldKind.parse("int")), FieldSpec("e", FieldKind.parse("double")), FieldSpec("good", FieldKind.parse("bool"))),
)
THRESHOLD = 10.0


def process(inputs, make, scale="1", **_):
    raw = inputs["RawEvent"]
    e = raw.e * float(scale)
    return [make("ProcEvent", n=raw.n, e=e, good=e > THRESHOLD)]


def expected_outputs(raw_values, scale: float):
    """Sequential oracle: (good store, bad store) contents as multisets."""
    good, bad = Counter(), Counter()
    for n, e in raw_values:
        v = e * scale
        (good if v > THRESHOLD else bad)[(n, v, v > THRESHOLD)] += 1
    return good, bad


def contents(props_path: Path, class_name: str = "ProcEvent") -> Counter:
    fac = PersistenceManagerFactory(props_path)
    try:
        if class_name not in fac.registry:
            return Counter()
        pm = fac.get_persistence_manager()
        return Counter((x.n, x.e, x.good) for x in pm.get_extent(class_name))
    finally:
        fac.close()


def build(tmp: Path, per_input: int = 10, seed: int = 0, backends=("file", "sql", "file", "sql")):
    """Write stores, descriptor and config; returns (config path, raw values)."""
    rng = random.Random(seed)
    tmp.mkdir(parents=True, exist_ok=True)
    (tmp / "types.xml").write_text(render_descriptor([RAW, PROC]))
    raw_values = []
    for k, be in zip(range(1, 5), backends):
        write_props(tmp / f"db{k}.properties", props_for(tmp, be, f"db{k}"))
    for k in (1, 2):
        reg = Registry()
        reg.register_class(RAW)
        fac = PersistenceManagerFactory(tmp / f"db{k}.properties", reg)
        pm = fac.get_persistence_manager()
        with pm.transaction():
            for i in range(per_input):
                n, e = 100 * k + i, round(rng.uniform(0, 10), 3)
                raw_values.append((n, e))
                pm.make_persistent(pm.new("RawEvent", n=n, e=e))
        fac.close()
    conf = tmp / "pipeline.conf"
    conf.write_text(
        "descriptor types.xml\n"
        "algorithm proc in=RawEvent out=ProcEvent body=flowkit:process scale=2\n"
        "output good store=db3.properties filter=good\n"
        'output bad store=db4.properties class=ProcEvent filter="!good"\n'
        "input in1 store=db1.properties class=RawEvent\n"
        "input in2 store=db2.properties class=RawEvent\n"
    )
    return conf, raw_values
