"""Deterministic JSON output with 17 significant digits for floats."""

from __future__ import annotations

import math

import numpy as np


def _format_float(x: float) -> str:
    if math.isnan(x):
        return '"nan"'
    if math.isinf(x):
        return '"inf"' if x > 0 else '"-inf"'
    text = format(x, ".17g")
    if text in ("0", "-0"):
        return "0.0" if text == "0" else "-0.0"
    if all(c not in text for c in ".eEn"):
        text += ".0"
    return text


def _encode(obj, indent: int, level: int) -> str:
    pad = "\n" + " " * (indent * (level + 1)) if indent else ""
    end = "\n" + " " * (indent * level) if indent else ""
    sep = "," + (pad if indent else " ")
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _format_float(float(obj))
    if isinstance(obj, str):
        import json

        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, np.ndarray):
        return _encode(obj.tolist(), indent, level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{_encode(str(k), indent, level + 1)}: {_encode(v, indent, level + 1)}" for k, v in obj.items()]
        return "{" + pad + sep.join(items) + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(isinstance(v, (int, float, np.integer, np.floating, str)) and not isinstance(v, bool) for v in obj):
            return "[" + ", ".join(_encode(v, indent, level + 1) for v in obj) + "]"
        return "[" + pad + sep.join(_encode(v, indent, level + 1) for v in obj) + end + "]"
    raise TypeError(f"cannot serialise object of type {type(obj).__name__}")


def dump_json(obj, indent: int = 2) -> str:
    """Serialise ``obj`` with keys in insertion order and floats at 17 digits."""
    return _encode(obj, indent, 0) + "\n"
