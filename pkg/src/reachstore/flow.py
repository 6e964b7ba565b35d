"""Typed dataflow runs over persistent stores.

Nodes are inputs (scan a store's extent and publish each instance),
algorithms (fire once per event when one envelope of every declared input
type with that event's sequence number has arrived) and outputs (persist
what they receive, optionally filtered). Nodes only talk through the bus.

Inputs number their events consecutively per published type, in
declaration order, so two inputs of the same type never collide and the
i-th events of different types join.

Config file lines::

    descriptor <descriptor.xml>
    input <name> store=<props> class=<Type>
    algorithm <name> in=<T1,..> out=<T2,..> [body=module:function] [key=value ...]
    output <name> store=<props> [class=<Type>] [filter=<filter text to end of line>]
"""

from __future__ import annotations

import importlib
import json
import logging
import os
import shlex
import threading
from collections import defaultdict, deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping

from .errors import (
    ConfigError,
    DuplicateDelivery,
    DuplicateName,
    ReachStoreError,
    UnknownType,
    ValidationError,
)
from .lifecycle import ManagedInstance
from .manager import PersistenceManagerFactory
from .metamodel import Registry, RegisteredClass, parse_descriptor
from .properties import load_properties
from .query.checker import type_check
from .query.evaluator import evaluate
from .query.parser import parse_filter

logger = logging.getLogger(__name__)

Body = Callable[..., Iterable[ManagedInstance] | None]

# -- declarations -------------------------------------------------------------


@dataclass
class AlgorithmSpec:
    name: str
    inputs: tuple[str, ...]
    outputs: tuple[str, ...]
    body: Body | None = None
    params: dict[str, str] = field(default_factory=dict)


@dataclass
class InputSpec:
    name: str
    store: Mapping[str, str] | str
    class_name: str


@dataclass
class OutputSpec:
    name: str
    store: Mapping[str, str] | str
    class_name: str | None = None
    filter: str | None = None


Declaration = AlgorithmSpec | InputSpec | OutputSpec


@dataclass
class PipelineConfig:
    declarations: list[Declaration] = field(default_factory=list)
    descriptors: list[str] = field(default_factory=list)

    @property
    def inputs(self) -> list[InputSpec]:
        return [d for d in self.declarations if isinstance(d, InputSpec)]

    @property
    def algorithms(self) -> list[AlgorithmSpec]:
        return [d for d in self.declarations if isinstance(d, AlgorithmSpec)]

    @property
    def outputs(self) -> list[OutputSpec]:
        return [d for d in self.declarations if isinstance(d, OutputSpec)]


@dataclass(frozen=True)
class EventEnvelope:
    event_seq: int
    class_name: str
    payload: Any
    source: str = ""


def _kv(tokens: list[str], lineno: int) -> dict[str, str]:
    out = {}
    for tok in tokens:
        key, sep, value = tok.partition("=")
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected key=value, got {tok!r}")
        if key in out:
            raise ConfigError(f"line {lineno}: {key} given twice")
        out[key] = value
    return out


def _types(text: str | None) -> tuple[str, ...]:
    if not text:
        return ()
    return tuple(t.strip() for t in text.split(",") if t.strip())


def resolve_body(ref: str) -> Body:
    module, sep, attr = ref.partition(":")
    if not sep:
        raise ConfigError(f"body must be module:function, got {ref!r}")
    try:
        fn = getattr(importlib.import_module(module), attr)
    except (ImportError, AttributeError) as exc:
        raise ConfigError(f"cannot load body {ref!r}: {exc}") from exc
    if not callable(fn):
        raise ConfigError(f"body {ref!r} is not callable")
    return fn


def parse_config(text: str, base: str | os.PathLike | None = None) -> PipelineConfig:
    base = Path(base) if base is not None else None

    def path(p: str) -> str:
        return str(base / p) if base is not None and not os.path.isabs(p) else p

    cfg = PipelineConfig()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        filter_text = None
        if line.split(None, 1)[0] == "output":
            head, sep, rest = line.partition(" filter=")
            if sep:
                line = head
                filter_text = rest.strip()
                if len(filter_text) >= 2 and filter_text[0] == filter_text[-1] == '"':
                    filter_text = filter_text[1:-1]
        try:
            tokens = shlex.split(line)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: {exc}") from exc
        kind = tokens[0]
        if kind == "descriptor":
            if len(tokens) != 2:
                raise ConfigError(f"line {lineno}: descriptor takes one path")
            cfg.descriptors.append(path(tokens[1]))
            continue
        if len(tokens) < 2:
            raise ConfigError(f"line {lineno}: {kind} needs a name")
        name, props = tokens[1], _kv(tokens[2:], lineno)
        if kind == "input":
            _require(props, ("store", "class"), lineno, allowed={"store", "class"})
            cfg.declarations.append(InputSpec(name, path(props["store"]), props["class"]))
        elif kind == "output":
            _require(props, ("store",), lineno, allowed={"store", "class"})
            cfg.declarations.append(OutputSpec(name, path(props["store"]), props.get("class"), filter_text))
        elif kind == "algorithm":
            _require(props, ("in", "out"), lineno)
            body = resolve_body(props.pop("body")) if "body" in props else None
            ins, outs = _types(props.pop("in")), _types(props.pop("out"))
            cfg.declarations.append(AlgorithmSpec(name, ins, outs, body, props))
        else:
            raise ConfigError(f"line {lineno}: unknown declaration {kind!r}")
    return cfg


def _require(props: dict, keys: tuple[str, ...], lineno: int, allowed: set[str] | None = None) -> None:
    missing = [k for k in keys if k not in props]
    if missing:
        raise ConfigError(f"line {lineno}: missing {', '.join(missing)}")
    if allowed is not None and set(props) - allowed:
        raise ConfigError(f"line {lineno}: unknown key(s) {', '.join(sorted(set(props) - allowed))}")


def load_config(path: str | os.PathLike) -> PipelineConfig:
    path = Path(path)
    return parse_config(path.read_text(encoding="utf-8"), path.parent)


# -- report -------------------------------------------------------------------


@dataclass
class NodeStats:
    kind: str
    published: int = 0
    fired: int = 0
    persisted: int = 0
    dropped: int = 0
    filtered: int = 0
    duplicates: int = 0
    unjoined: int = 0


@dataclass
class RunReport:
    nodes: dict[str, NodeStats] = field(default_factory=dict)
    errors: list[str] = field(default_factory=list)
    aborted: bool = False

    def total(self, counter: str) -> int:
        return sum(getattr(s, counter) for s in self.nodes.values())

    def to_json(self) -> dict:
        return {
            "aborted": self.aborted,
            "errors": list(self.errors),
            "nodes": {n: dict(vars(s)) for n, s in self.nodes.items()},
        }

    def render(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


# -- engine -------------------------------------------------------------------


def default_body(inputs: Mapping[str, ManagedInstance], make, outputs: tuple[str, ...], **params):
    """Copy same-named fields from the inputs into one instance per output type."""
    out = []
    for type_name in outputs:
        values = {}
        target = make(type_name).jdo_class
        for inst in inputs.values():
            for name, value in inst.field_values().items():
                if name in target.slot_index and name not in values:
                    values[name] = value
        out.append(make(type_name, **values))
    return out


class _Node:
    def __init__(self, name: str, kind: str):
        self.name = name
        self.kind = kind
        self.lock = threading.Lock()


class FlowEngine:
    """Bus plus nodes. Build with :meth:`from_config` or register nodes directly."""

    def __init__(self, registry: Registry | None = None):
        self.registry = registry if registry is not None else Registry()
        self.algorithms: dict[str, AlgorithmSpec] = {}
        self.inputs: dict[str, InputSpec] = {}
        self.outputs: dict[str, OutputSpec] = {}
        self._order: list[str] = []
        self._factories: dict[str, PersistenceManagerFactory] = {}

    # -- registration ------------------------------------------------------

    def _check_name(self, name: str) -> None:
        if name in self._order:
            raise DuplicateName(name)

    def _check_type(self, type_name: str, who: str) -> None:
        if type_name not in self.registry:
            raise UnknownType(f"{who}: {type_name!r} is not a registered class")

    def register_algorithm(self, spec: AlgorithmSpec) -> None:
        self._check_name(spec.name)
        if not spec.inputs:
            raise ValidationError(f"algorithm {spec.name} declares no input types")
        for t in (*spec.inputs, *spec.outputs):
            self._check_type(t, spec.name)
        if len(set(spec.inputs)) != len(spec.inputs):
            raise ValidationError(f"algorithm {spec.name} lists an input type twice")
        self.algorithms[spec.name] = spec
        self._order.append(spec.name)

    def register_input(self, spec: InputSpec) -> None:
        self._check_name(spec.name)
        fac = self._factory(spec.store)
        try:
            rc = fac.registry.by_name(spec.class_name)
        except ReachStoreError:
            raise UnknownType(f"input {spec.name}: store has no class {spec.class_name!r}") from None
        self._import_class(rc, fac.registry)
        self.inputs[spec.name] = spec
        self._order.append(spec.name)

    def register_output(self, spec: OutputSpec) -> None:
        self._check_name(spec.name)
        if spec.class_name is not None:
            self._check_type(spec.class_name, spec.name)
        if spec.filter is not None:
            parse_filter(spec.filter)
        self.outputs[spec.name] = spec
        self._order.append(spec.name)

    def _factory(self, store: Mapping[str, str] | str) -> PersistenceManagerFactory:
        props = load_properties(store) if isinstance(store, (str, os.PathLike)) else dict(store)
        key = os.path.realpath(props.get("store.path", ""))
        fac = self._factories.get(key)
        if fac is None:
            fac = PersistenceManagerFactory(props)
            self._factories[key] = fac
        return fac

    def _import_class(self, rc: RegisteredClass, source: Registry) -> None:
        chain = []
        cur: RegisteredClass | None = rc
        while cur is not None:
            chain.append(cur)
            cur = source.get(cur.superclass_id) if cur.superclass_id else None
        for c in reversed(chain):
            if c.name in self.registry:
                if self.registry.by_name(c.name).layout() != c.layout():
                    raise ValidationError(f"class {c.name} differs between stores")
            else:
                self.registry.extend(c.descriptor)

    @classmethod
    def from_config(cls, cfg: PipelineConfig, registry: Registry | None = None) -> FlowEngine:
        eng = cls(registry)
        for path in cfg.descriptors:
            for desc in parse_descriptor(Path(path).read_text(encoding="utf-8")):
                if desc.class_name not in eng.registry:
                    eng.registry.extend(desc)
        # Inputs first: their stores contribute class definitions.
        for d in cfg.inputs:
            eng.register_input(d)
        for d in cfg.declarations:
            if isinstance(d, AlgorithmSpec):
                eng.register_algorithm(d)
            elif isinstance(d, OutputSpec):
                eng.register_output(d)
        return eng

    # -- validation ---------------------------------------------------------

    def produced_types(self) -> set[str]:
        types = {s.class_name for s in self.inputs.values()}
        for a in self.algorithms.values():
            types.update(a.outputs)
        return types

    def sink_types(self) -> set[str]:
        consumed = {t for a in self.algorithms.values() for t in a.inputs}
        return self.produced_types() - consumed

    def output_types(self, spec: OutputSpec) -> set[str]:
        return {spec.class_name} if spec.class_name else self.sink_types()

    def validate(self) -> None:
        produced = self.produced_types()
        for a in self.algorithms.values():
            missing = [t for t in a.inputs if t not in produced]
            if missing:
                raise ValidationError(f"algorithm {a.name} starves: nothing produces {', '.join(missing)}")
            loops = set(a.inputs) & set(a.outputs)
            if loops:
                raise ValidationError(f"algorithm {a.name} consumes its own output {', '.join(sorted(loops))}")
        for o in self.outputs.values():
            if o.class_name and o.class_name not in produced:
                raise ValidationError(f"output {o.name} starves: nothing produces {o.class_name}")
        self._check_acyclic()

    def _check_acyclic(self) -> None:
        consumers: dict[str, list[str]] = defaultdict(list)
        for a in self.algorithms.values():
            for t in a.inputs:
                consumers[t].append(a.name)
        state: dict[str, int] = {}

        def visit(name: str, trail: list[str]) -> None:
            state[name] = 1
            for t in self.algorithms[name].outputs:
                for nxt in consumers[t]:
                    if state.get(nxt) == 1:
                        cycle = trail[trail.index(nxt):] + [nxt] if nxt in trail else [name, nxt]
                        raise ValidationError(f"cycle between algorithms: {' -> '.join(cycle)}")
                    if nxt not in state:
                        visit(nxt, trail + [nxt])
            state[name] = 2

        for name in self.algorithms:
            if name not in state:
                visit(name, [name])

    # -- running ------------------------------------------------------------

    def run(self, workers: int = 1) -> RunReport:
        self.validate()
        return _Run(self, max(1, workers)).execute()

    def close(self) -> None:
        for fac in self._factories.values():
            fac.close()
        self._factories.clear()


class _Abort(Exception):
    pass


class _Run:
    def __init__(self, engine: FlowEngine, workers: int):
        self.engine = engine
        self.workers = workers
        self.report = RunReport()
        self.nodes: dict[str, _Node] = {}
        for name in engine._order:
            kind = "input" if name in engine.inputs else "algorithm" if name in engine.algorithms else "output"
            self.nodes[name] = _Node(name, kind)
            self.report.nodes[name] = NodeStats(kind)
        self.subs: dict[str, list[str]] = defaultdict(list)
        for name in engine._order:
            if name in engine.algorithms:
                for t in engine.algorithms[name].inputs:
                    self.subs[t].append(name)
            elif name in engine.outputs:
                for t in sorted(engine.output_types(engine.outputs[name])):
                    self.subs[t].append(name)
        self.pending: dict[str, dict[int, dict[str, Any]]] = {n: {} for n in engine.algorithms}
        self.delivered: set[tuple[str, int, str]] = set()
        self.filters: dict[tuple[str, str], Any] = {}
        self.output_pms = {}
        self.queue: deque = deque()
        self.cv = threading.Condition()
        self.in_flight = 0
        self.stats_lock = threading.Lock()
        self.seqs: dict[str, int] = defaultdict(int)

    # scheduling

    def submit(self, node: str, env: EventEnvelope | None) -> None:
        with self.cv:
            self.in_flight += 1
            self.queue.append((node, env))
            self.cv.notify()

    def publish(self, source: str, env: EventEnvelope) -> None:
        stats = self.report.nodes[source]
        subscribers = self.subs.get(env.class_name, [])
        with self.stats_lock:
            stats.published += 1
            if not subscribers:
                stats.dropped += 1
        for node in subscribers:
            key = (node, env.event_seq, env.class_name)
            with self.stats_lock:
                dup = key in self.delivered
                if dup:
                    self.report.nodes[node].duplicates += 1
                    self.report.errors.append(
                        str(DuplicateDelivery(f"{node}: event {env.event_seq} of {env.class_name} from {source}"))
                    )
                else:
                    self.delivered.add(key)
            if not dup:
                self.submit(node, env)

    def handle(self, node_name: str, env: EventEnvelope | None) -> None:
        node = self.nodes[node_name]
        with node.lock:
            if node.kind == "input":
                self.produce(node_name)
            elif node.kind == "algorithm":
                self.join(node_name, env)
            else:
                self.persist(node_name, env)

    def execute(self) -> RunReport:
        eng = self.engine
        try:
            for name, spec in eng.outputs.items():
                self.output_pms[name] = eng._factory(spec.store).get_persistence_manager()
        except ReachStoreError as exc:
            self.report.aborted = True
            self.report.errors.append(f"{type(exc).__name__}: {exc}")
            return self.report
        for name in eng.inputs:
            self.submit(name, None)
        if self.workers == 1:
            self._sequential()
        else:
            threads = [threading.Thread(target=self._worker, daemon=True) for _ in range(self.workers)]
            for t in threads:
                t.start()
            for t in threads:
                t.join()
        for name, waiting in self.pending.items():
            self.report.nodes[name].unjoined = len(waiting)
        for pm in self.output_pms.values():
            pm.close()
        return self.report

    def _sequential(self) -> None:
        while self.queue and not self.report.aborted:
            node, env = self.queue.popleft()
            self._guarded(node, env)
            self.in_flight -= 1

    def _worker(self) -> None:
        while True:
            with self.cv:
                while not self.queue and self.in_flight and not self.report.aborted:
                    self.cv.wait()
                if self.report.aborted or not self.queue:
                    self.cv.notify_all()
                    return
                node, env = self.queue.popleft()
            try:
                self._guarded(node, env)
            finally:
                with self.cv:
                    self.in_flight -= 1
                    if self.in_flight == 0:
                        self.cv.notify_all()

    def _guarded(self, node: str, env: EventEnvelope | None) -> None:
        try:
            self.handle(node, env)
        except Exception as exc:
            logger.exception("node %s failed", node)
            with self.cv:
                self.report.aborted = True
                self.report.errors.append(f"{node}: {type(exc).__name__}: {exc}")
                self.cv.notify_all()

    # node behaviour

    def produce(self, name: str) -> None:
        spec = self.engine.inputs[name]
        fac = self.engine._factory(spec.store)
        pm = fac.get_persistence_manager(read_only=True)
        extent = pm.get_extent(spec.class_name, True)
        for inst in extent:
            if self.report.aborted:
                return
            with self.stats_lock:
                self.seqs[spec.class_name] += 1
                seq = self.seqs[spec.class_name]
            self.publish(name, EventEnvelope(seq, spec.class_name, inst, name))

    def join(self, name: str, env: EventEnvelope) -> None:
        spec = self.engine.algorithms[name]
        waiting = self.pending[name].setdefault(env.event_seq, {})
        waiting[env.class_name] = env.payload
        if len(waiting) < len(spec.inputs):
            return
        del self.pending[name][env.event_seq]
        inputs = {t: waiting[t] for t in spec.inputs}
        make = self.engine.registry.new
        if spec.body is None:
            produced = default_body(inputs, make, spec.outputs, **spec.params)
        else:
            produced = spec.body(inputs, make, **spec.params)
        with self.stats_lock:
            self.report.nodes[name].fired += 1
        for inst in produced or ():
            type_name = inst.jdo_class.name
            if type_name not in spec.outputs:
                raise ValidationError(f"algorithm {name} emitted undeclared type {type_name}")
            self.publish(name, EventEnvelope(env.event_seq, type_name, inst, name))

    def _filter_for(self, name: str, rc: RegisteredClass):
        key = (name, rc.name)
        if key not in self.filters:
            text = self.engine.outputs[name].filter
            self.filters[key] = type_check(parse_filter(text), rc, self.engine.registry) if text else None
        return self.filters[key]

    def persist(self, name: str, env: EventEnvelope) -> None:
        inst: ManagedInstance = env.payload
        expr = self._filter_for(name, self.engine.registry.by_name(inst.jdo_class.name))
        if expr is not None and not evaluate(expr, inst):
            with self.stats_lock:
                self.report.nodes[name].filtered += 1
            return
        pm = self.output_pms[name]
        copy = self._copy_into(pm, inst)
        with pm.transaction():
            pm.make_persistent(copy)
        with self.stats_lock:
            self.report.nodes[name].persisted += 1

    def _copy_into(self, pm, inst: ManagedInstance) -> ManagedInstance:
        src = inst.jdo_class
        if src.name not in pm.registry:
            lineage = [self.engine.registry.by_name(n) for n in reversed(src.lineage)]
            for rc in lineage:
                if rc.name not in pm.registry:
                    pm.factory.add_class(rc.descriptor)
        values = {}
        for name, value in inst.field_values().items():
            values[name] = _detach(value)
        return pm.new(src.name, **values)


def _detach(value: Any) -> Any:
    if isinstance(value, list):
        return [_detach(v) for v in value]
    if isinstance(value, ManagedInstance):
        if value.jdo_oid is None:
            raise ValidationError(f"output references transient {value!r}")
        return value.jdo_oid
    return value


def run_pipeline(config: PipelineConfig | str | os.PathLike, workers: int = 1, registry: Registry | None = None) -> RunReport:
    """Validate and execute a pipeline; the report counts per node."""
    if not isinstance(config, PipelineConfig):
        config = load_config(config)
    engine = FlowEngine.from_config(config, registry)
    try:
        return engine.run(workers)
    finally:
        engine.close()


__all__ = [
    "AlgorithmSpec",
    "EventEnvelope",
    "FlowEngine",
    "InputSpec",
    "NodeStats",
    "OutputSpec",
    "PipelineConfig",
    "RunReport",
    "default_body",
    "load_config",
    "parse_config",
    "run_pipeline",
]
