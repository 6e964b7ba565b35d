"""Helpers that drive the package for tests and the acceptance suite."""

from __future__ import annotations

import itertools
import random
from collections import deque

import pytest

from reachstore.errors import IllegalTransition
from reachstore.lifecycle import LifecycleEvent as E
from reachstore.lifecycle import LifecycleState as S
from reachstore.lifecycle import advance, invariant_violations
from reachstore.manager import PersistenceManagerFactory
from reachstore.metamodel import ObjectId

from conftest import desc, props_for, registry_of, write_props
from oracles import LIFECYCLE, bfs_closure, random_graph

NODE = desc("Node", "label:int next:ref:Node kids:reflist:Node")
TRACK = desc("Track", "px:double py:double q:int")
EVENT = desc("Event", "run:int track:ref:Track")


def _registry():
    return registry_of(desc("Thing", "a:int b:double c:str"))


def lifecycle_fuzz(steps: int, seed: int, pool: int = 16) -> int:
    """Random events over a pool of instances; returns the number applied."""
    rng = random.Random(seed)
    reg = _registry()
    insts = [reg.new("Thing") for _ in range(pool)]
    model = ["Transient"] * pool
    events = list(E)
    seq = itertools.count(1)
    applied = 0
    for _ in range(steps):
        i = rng.randrange(pool)
        inst, ev = insts[i], rng.choice(events)
        expected = LIFECYCLE[model[i]].get(ev.value)
        kw = {}
        if ev is E.MAKE_PERSISTENT:
            kw["oid"] = ObjectId("t", 1, next(seq))
        elif ev is E.WRITE_FIELD:
            kw["slot"] = rng.randrange(3)
        if expected is None:
            with pytest.raises(IllegalTransition):
                advance(inst, ev, **kw)
        else:
            advance(inst, ev, **kw)
            model[i] = expected
            applied += 1
        assert inst.jdo_state.value == model[i]
        assert invariant_violations(inst) == [], (ev, inst)
    return applied


def build(pm, nxt, kids):
    nodes = [pm.new("Node", label=i) for i in range(len(nxt))]
    for i, node in enumerate(nodes):
        node.next = nodes[nxt[i]] if nxt[i] is not None else None
        node.kids = [nodes[k] for k in kids[i]]
    return nodes


def read_back(pm, root_oid):
    """Walk the stored graph; returns label -> (next label, kid labels)."""
    out, queue = {}, deque([pm.get_object_by_id(root_oid)])
    while queue:
        node = queue.popleft()
        if node.label in out:
            continue
        out[node.label] = (node.next.label if node.next is not None else None, [k.label for k in node.kids])
        queue.extend(([node.next] if node.next is not None else []) + node.kids)
    return out


def check_graph(tmp, backend, n, seed):
    rng = random.Random(seed)
    nxt, kids = random_graph(rng, n)
    root = rng.randrange(n)
    expected = bfs_closure(root, nxt, kids)
    props = props_for(tmp, backend, name=f"g{seed}")
    fac = PersistenceManagerFactory(props, registry_of(NODE))
    pm = fac.get_persistence_manager()
    nodes = build(pm, nxt, kids)
    with pm.transaction():
        pm.make_persistent(nodes[root])
    persisted = {i for i, node in enumerate(nodes) if node.jdo_oid is not None}
    assert persisted == expected
    assert all(node.jdo_state is S.TRANSIENT for i, node in enumerate(nodes) if i not in expected)
    assert len(pm.get_extent("Node")) == len(expected)
    root_oid = nodes[root].jdo_oid
    fac.close()
    fac = PersistenceManagerFactory(props)
    stored = read_back(fac.get_persistence_manager(), root_oid)
    fac.close()
    assert stored == {i: (nxt[i], kids[i]) for i in expected}


def two_stores(tmp, backend1="file", backend2="sql"):
    """db1 holds an event whose track lives in db2."""
    p1 = write_props(tmp / "db1.properties", props_for(tmp, backend1, "db1", **{"catalog.path": str(tmp / "dbs.cat")}))
    p2 = write_props(tmp / "db2.properties", props_for(tmp, backend2, "db2"))
    (tmp / "dbs.cat").write_text("db1=db1.properties\ndb2=db2.properties\n")
    f2 = PersistenceManagerFactory(p2, registry_of(TRACK))
    pm2 = f2.get_persistence_manager()
    with pm2.transaction():
        track = pm2.new("Track", px=12.5, py=0.0, q=1)
        pm2.make_persistent(track)
    f1 = PersistenceManagerFactory(p1, registry_of(TRACK, EVENT))
    pm1 = f1.get_persistence_manager()
    with pm1.transaction():
        ev = pm1.new("Event", run=7, track=track)
        pm1.make_persistent(ev)
    ev_oid = ev.jdo_oid
    f1.close()
    f2.close()
    return p1, p2, ev_oid
