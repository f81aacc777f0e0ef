"""Small JSON helpers shared by the file formats: deterministic dumps and
schema-checked field access."""

from __future__ import annotations

import json
from pathlib import Path

from .errors import SchemaError


def dump(path, doc: dict) -> None:
    """Write JSON deterministically (sorted keys, fixed layout) so identical
    content yields byte-identical files."""
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")


def load(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path} is not valid JSON: {e}") from e


def require(doc, key, where: str):
    """Fetch doc[key] or raise SchemaError naming the missing field path."""
    if not isinstance(doc, dict) or key not in doc:
        raise SchemaError("missing field", path=f"{where}.{key}")
    return doc[key]


def check_format(doc, expected: str, path: str) -> None:
    fmt = require(doc, "format", "$")
    if fmt != expected:
        raise SchemaError(f"incompatible format tag {fmt!r} in {path}, expected {expected!r}", path="$.format")
