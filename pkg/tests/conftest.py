from __future__ import annotations

from pathlib import Path

import pytest

from reachstore.manager import PersistenceManagerFactory
from reachstore.metamodel import ClassDescriptor, FieldKind, FieldSpec, Registry

BACKENDS = ("file", "sql")


def desc(name: str, fields: str = "", superclass: str | None = None) -> ClassDescriptor:
    """``desc("Track", "pt:double next:ref:Track")``."""
    specs = []
    for item in fields.split():
        fname, _, kind = item.partition(":")
        specs.append(FieldSpec(fname, FieldKind.parse(kind)))
    return ClassDescriptor(name, superclass, tuple(specs))


def registry_of(*descriptors: ClassDescriptor) -> Registry:
    reg = Registry()
    for d in descriptors:
        reg.register_class(d)
    return reg


def props_for(tmp: Path, backend: str, name: str = "db", **extra: str) -> dict[str, str]:
    suffix = "rsto" if backend == "file" else "sqlj"
    props = {"backend": backend, "store.path": str(tmp / f"{name}.{suffix}"), "store.name": name}
    props.update(extra)
    return props


def write_props(path: Path, props: dict[str, str]) -> Path:
    path.write_text("".join(f"{k}={v}\n" for k, v in props.items()), encoding="utf-8")
    return path


def open_factory(tmp: Path, backend: str, *descriptors, name: str = "db", **extra) -> PersistenceManagerFactory:
    reg = registry_of(*descriptors) if descriptors else None
    return PersistenceManagerFactory(props_for(tmp, backend, name, **extra), reg)


@pytest.fixture(params=BACKENDS)
def backend(request) -> str:
    return request.param


# -- acceptance summary ------------------------------------------------------------

_CRITERIA: dict[str, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    label = dict(report.user_properties).get("criterion")
    if label is None:
        return
    if report.failed or (report.when == "call" and label not in _CRITERIA):
        _CRITERIA[label] = ("PASS" if report.passed else "FAIL", report.nodeid)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(_CRITERIA, key=lambda s: int(s.split()[0][2:])):
        outcome, _ = _CRITERIA[label]
        terminalreporter.write_line(f"{outcome} {label}")
