"""Canonical JSON text: insertion-ordered keys, 17 significant digits.

The standard encoder prints the shortest round-trip repr of a float, which
is fine for parsing but not a fixed format. Everything written by the
package goes through :func:`dumps` so that reports diff cleanly.
"""

import json
import math

import numpy as np


def format_float(x: float) -> str:
    x = float(x)
    if not math.isfinite(x):
        return "null"
    if x == 0.0:
        return "0"
    return format(x, ".17g")


def _plain(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, tuple):
        return list(obj)
    return obj


def _scalar(obj):
    if obj is None:
        return "null"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        return format_float(obj)
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


INLINE_WIDTH = 100


def _inline(obj):
    """Single-line rendering of a dict-free nested list, or None if it has a dict."""
    obj = _plain(obj)
    if isinstance(obj, dict):
        return None
    if isinstance(obj, list):
        parts = [_inline(v) for v in obj]
        if any(p is None for p in parts):
            return None
        return "[" + ", ".join(parts) + "]"
    return _scalar(obj)


def _emit(obj, indent, out):
    obj = _plain(obj)
    pad = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            out.append("{}")
            return
        out.append("{\n")
        items = list(obj.items())
        for k, (key, value) in enumerate(items):
            out.append(f"{pad}  {json.dumps(str(key), ensure_ascii=False)}: ")
            _emit(value, indent + 1, out)
            out.append(",\n" if k < len(items) - 1 else "\n")
        out.append(pad + "}")
    elif isinstance(obj, list):
        flat = _inline(obj)
        if flat is not None and (len(flat) <= INLINE_WIDTH or all(not isinstance(_plain(v), list) for v in obj)):
            out.append(flat)
            return
        out.append("[\n")
        for k, value in enumerate(obj):
            out.append(pad + "  ")
            _emit(value, indent + 1, out)
            out.append(",\n" if k < len(obj) - 1 else "\n")
        out.append(pad + "]")
    else:
        out.append(_scalar(obj))


def dumps(obj) -> str:
    out = []
    _emit(obj, 0, out)
    out.append("\n")
    return "".join(out)
