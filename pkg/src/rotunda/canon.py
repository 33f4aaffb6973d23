"""Canonical JSON encoding used for hashing, deltas, and the wire format.

The encoding is deterministic: object keys are sorted, floats are printed
with 9 significant digits, and the output is compact UTF-8.  Re-parsing a
canonical document and re-encoding it yields the same bytes, so hashes
survive a round trip through any standards-compliant JSON parser.
"""

from __future__ import annotations

import hashlib
import json
import math


def format_float(value: float) -> str:
    if not math.isfinite(value):
        raise ValueError(f"non-finite float in canonical document: {value!r}")
    if value == 0.0:
        return "0"  # collapses -0.0 as well
    out = format(value, ".9g")
    # ".9g" can emit things like "1e+20"; that is valid JSON, keep it.
    return out


def _encode(value, out: list[str]) -> None:
    if value is None:
        out.append("null")
    elif value is True:
        out.append("true")
    elif value is False:
        out.append("false")
    elif isinstance(value, str):
        out.append(json.dumps(value, ensure_ascii=False))
    elif isinstance(value, int):
        out.append(str(value))
    elif isinstance(value, float):
        out.append(format_float(value))
    elif isinstance(value, dict):
        out.append("{")
        first = True
        for key in sorted(value.keys()):
            if not isinstance(key, str):
                raise TypeError(f"canonical object keys must be str, got {type(key)}")
            if not first:
                out.append(",")
            first = False
            out.append(json.dumps(key, ensure_ascii=False))
            out.append(":")
            _encode(value[key], out)
        out.append("}")
    elif isinstance(value, (list, tuple)):
        out.append("[")
        for i, item in enumerate(value):
            if i:
                out.append(",")
            _encode(item, out)
        out.append("]")
    else:
        raise TypeError(f"cannot canonically encode {type(value)}")


def canonical_dumps(value) -> str:
    """Encode ``value`` as canonical JSON text."""
    out: list[str] = []
    _encode(value, out)
    return "".join(out)


def canonical_loads(text: str):
    return json.loads(text)


def canonical_hash(value) -> str:
    """256-bit hex digest of the canonical encoding of ``value``."""
    return hashlib.sha256(canonical_dumps(value).encode("utf-8")).hexdigest()
