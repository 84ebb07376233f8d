"""Flat structured-text config files: one `key = value` per line.

Values are coerced on read: booleans (true/false), ints, floats, then plain
strings.  `#` starts a comment.  CLI flags override file values; that merge
happens in the CLI layer, this module only reads and writes.
"""

from __future__ import annotations


def coerce(raw: str):
    text = raw.strip()
    low = text.lower()
    if low == "true":
        return True
    if low == "false":
        return False
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def read_config(path) -> dict:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            if "=" not in body:
                raise ValueError(f"{path}:{n}: expected 'key = value', got {line!r}")
            key, _, raw = body.partition("=")
            key = key.strip()
            if not key:
                raise ValueError(f"{path}:{n}: empty key")
            out[key] = coerce(raw)
    return out


def write_config(path, mapping: dict):
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in mapping.items():
            fh.write(f"{key} = {format_value(value)}\n")
