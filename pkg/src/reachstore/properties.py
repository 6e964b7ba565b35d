"""``key=value`` properties files (stores, catalogs share the syntax)."""

from __future__ import annotations

import os
from pathlib import Path

PATH_KEYS = ("store.path", "catalog.path")


def parse_properties(text: str) -> dict[str, str]:
    props: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line[0] in "#!":
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ValueError(f"line {lineno}: expected key=value, got {raw!r}")
        props[key.strip()] = value.strip()
    return props


def load_properties(path: str | os.PathLike) -> dict[str, str]:
    """Read a properties file; relative paths inside resolve against its directory."""
    path = Path(path)
    props = parse_properties(path.read_text(encoding="utf-8"))
    for key in PATH_KEYS:
        if key in props and not os.path.isabs(props[key]):
            props[key] = str(path.parent / props[key])
    return props


def write_properties(path: str | os.PathLike, props: dict[str, str]) -> None:
    lines = [f"{k}={v}" for k, v in props.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
