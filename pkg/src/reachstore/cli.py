"""Command-line tooling: ``reachstore <command> ...``.

Records print one per line as canonical JSON (sorted keys). References
render as ``{"$ref": {"store": s, "class": id, "seq": n}}`` and the record
identity as ``"$oid"`` in the same shape. Exit status is 0 on success, 1
for user errors and 2 for store or system errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path
from typing import Any, Sequence

from .errors import ReachStoreError, SystemError_, UserError, ValueKindError
from .metamodel import ObjectId, Registry, parse_descriptor
from .properties import load_properties

CATALOG_ENV = "REACHSTORE_CATALOG"


# -- JSON rendering ------------------------------------------------------------


def ref_json(oid: ObjectId) -> dict:
    return {"store": oid.store, "class": oid.class_id, "seq": oid.seq}


def value_json(value: Any) -> Any:
    if isinstance(value, ObjectId):
        return {"$ref": ref_json(value)}
    if isinstance(value, list):
        return [value_json(v) for v in value]
    if isinstance(value, float) and not math.isfinite(value):
        return {"$double": "NaN" if math.isnan(value) else ("Infinity" if value > 0 else "-Infinity")}
    if getattr(value, "_jdo_managed", False):
        return {"$ref": ref_json(value.jdo_oid)} if value.jdo_oid else None
    return value


def record_json(inst) -> dict:
    out = {name: value_json(v) for name, v in inst.field_values().items()}
    out["$oid"] = ref_json(inst.jdo_oid)
    return out


def canonical(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, allow_nan=False)


def parse_value(value: Any, registry: Registry) -> Any:
    if isinstance(value, list):
        return [parse_value(v, registry) for v in value]
    if isinstance(value, dict):
        if set(value) == {"$ref"}:
            ref = value["$ref"]
            try:
                cls = ref["class"]
                if isinstance(cls, str):
                    cls = registry.by_name(cls).class_id
                return ObjectId(str(ref["store"]), int(cls), int(ref["seq"]))
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueKindError(f"malformed $ref {ref!r}") from exc
        if set(value) == {"$double"}:
            text = value["$double"]
            if text not in ("NaN", "Infinity", "-Infinity"):
                raise ValueKindError(f"malformed $double {text!r}")
            return float(text.replace("Infinity", "inf"))
        raise ValueKindError(f"nested objects are not values: {value!r}")
    return value


# -- helpers ------------------------------------------------------------------


def _props(path: str) -> dict[str, str]:
    try:
        props = load_properties(path)
    except OSError as exc:
        raise UserError(f"cannot read properties {path}: {exc}") from exc
    except ValueError as exc:
        raise UserError(f"{path}: {exc}") from exc
    if "catalog.path" not in props and os.environ.get(CATALOG_ENV):
        props["catalog.path"] = os.environ[CATALOG_ENV]
    return props


def _factory(args, registry: Registry | None = None, must_exist: bool = True):
    from .manager import PersistenceManagerFactory
    from .errors import StoreUnavailable

    props = _props(args.props)
    if must_exist and props.get("store.path") and not Path(props["store.path"]).exists():
        raise StoreUnavailable(f"store {props['store.path']} does not exist (run create first)")
    return PersistenceManagerFactory(props, registry)


def _out(line: str) -> None:
    sys.stdout.write(line + "\n")


# -- commands -----------------------------------------------------------------


def cmd_create(args) -> int:
    descs = []
    if args.descriptor:
        try:
            text = Path(args.descriptor).read_text(encoding="utf-8")
        except OSError as exc:
            raise UserError(f"cannot read descriptor {args.descriptor}: {exc}") from exc
        descs = parse_descriptor(text)
    fac = _factory(args, must_exist=False)
    try:
        reg = fac.registry
        from .errors import IncompatibleSchema

        for d in descs:
            if d.class_name in reg:
                existing = reg.by_name(d.class_name)
                if existing.descriptor != d:
                    raise IncompatibleSchema(f"class {d.class_name} differs from the stored definition")
                continue
            fac.add_class(d)
        _out(canonical({
            "backend": fac.adapter.kind,
            "classes": [{"id": rc.class_id, "name": rc.name} for rc in reg.live_classes()],
            "store": fac.store_name,
        }))
    finally:
        fac.close()
    return 0


def cmd_put(args) -> int:
    try:
        record = json.loads(args.json_record)
    except json.JSONDecodeError as exc:
        raise UserError(f"--json-record is not valid JSON: {exc}") from exc
    if not isinstance(record, dict):
        raise UserError("--json-record must be a JSON object")
    fac = _factory(args)
    try:
        pm = fac.get_persistence_manager()
        values = {k: parse_value(v, pm.registry) for k, v in record.items()}
        with pm.transaction():
            inst = pm.new(args.cls, **values)
            pm.make_persistent(inst)
        _out(canonical(record_json(inst)))
    finally:
        fac.close()
    return 0


def cmd_query(args) -> int:
    from .query.execute import plan_query, run_plan

    fac = _factory(args)
    try:
        pm = fac.get_persistence_manager()
        extent = pm.get_extent(args.cls, not args.no_subclasses)
        plan = plan_query(pm, extent, args.filter, args.strategy)
        if args.explain:
            _out(plan.explain)
            return 0
        for oid in run_plan(pm, extent, plan):
            _out(canonical(record_json(pm.get_object_by_id(oid))))
    finally:
        fac.close()
    return 0


def cmd_extent(args) -> int:
    fac = _factory(args)
    try:
        pm = fac.get_persistence_manager()
        for inst in pm.get_extent(args.cls, not args.no_subclasses):
            _out(canonical(record_json(inst)))
    finally:
        fac.close()
    return 0


def cmd_catalog(args) -> int:
    from .proxies import catalog_load, check_catalog

    path = args.file or os.environ.get(CATALOG_ENV)
    if not path:
        raise UserError(f"no catalog given (use --file or set {CATALOG_ENV})")
    cat = catalog_load(path)
    problems = dict(check_catalog(cat)) if args.check else {}
    for name in sorted(cat.entries):
        row = {"location": cat.entries[name].location, "store": name}
        if args.check:
            row["status"] = problems[name] or "ok"
        _out(canonical(row))
    if any(problems.values()):
        return 1
    return 0


def cmd_run(args) -> int:
    from .flow import run_pipeline

    try:
        report = run_pipeline(args.pipeline, workers=args.workers)
    except OSError as exc:
        raise UserError(f"cannot read pipeline {args.pipeline}: {exc}") from exc
    _out(report.render())
    return 2 if report.aborted else 0


# -- entry point ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="reachstore", description="Object store tooling.")
    p.add_argument("-v", "--verbose", action="store_true", help="log to standard error")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("create", help="create or open a store")
    c.add_argument("--props", required=True, help="store properties file")
    c.add_argument("--descriptor", help="persistence descriptor with classes to register")
    c.set_defaults(func=cmd_create)

    c = sub.add_parser("put", help="persist one record")
    c.add_argument("--props", required=True)
    c.add_argument("--class", dest="cls", required=True)
    c.add_argument("--json-record", required=True, help="flat JSON object: field -> value")
    c.set_defaults(func=cmd_put)

    c = sub.add_parser("query", help="run a filter over a class extent")
    c.add_argument("--props", required=True)
    c.add_argument("--class", dest="cls", required=True)
    c.add_argument("--filter", required=True)
    c.add_argument("--explain", action="store_true", help="print the SQL (or 'inmemory') instead")
    c.add_argument("--strategy", choices=["InMemoryScan", "SqlPushdown"])
    c.add_argument("--no-subclasses", action="store_true")
    c.set_defaults(func=cmd_query)

    c = sub.add_parser("extent", help="dump every instance of a class")
    c.add_argument("--props", required=True)
    c.add_argument("--class", dest="cls", required=True)
    c.add_argument("--no-subclasses", action="store_true")
    c.set_defaults(func=cmd_extent)

    c = sub.add_parser("catalog", help="list or check a DB catalog")
    c.add_argument("--file", help=f"catalog file (default: ${CATALOG_ENV})")
    c.add_argument("--check", action="store_true", help="open every store it names")
    c.set_defaults(func=cmd_catalog)

    c = sub.add_parser("run", help="execute a pipeline config")
    c.add_argument("--pipeline", required=True)
    c.add_argument("--workers", type=int, default=1)
    c.set_defaults(func=cmd_run)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr)
    try:
        return args.func(args)
    except UserError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except (SystemError_, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except ReachStoreError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
