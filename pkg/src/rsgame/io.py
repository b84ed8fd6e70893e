"""Deterministic report serialization and strategy files."""

from __future__ import annotations

import hashlib
import json
import math
from typing import Any

import numpy as np

from .model import EventuallyStationaryPolicy


def _float(x: float) -> str:
    if math.isnan(x):
        return '"nan"'
    if math.isinf(x):
        return '"inf"' if x > 0 else '"-inf"'
    s = f"{x:.17g}"
    if all(ch not in s for ch in ".en"):
        s += ".0"
    return s


def dumps(obj: Any, indent: int = 2) -> str:
    """JSON with sorted keys and every float written to 17 significant digits."""
    out: list[str] = []
    _emit(obj, out, 0, indent)
    return "".join(out) + "\n"


def _emit(obj, out, level, indent):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, np.generic):
        obj = obj.item()
    if obj is None:
        out.append("null")
    elif isinstance(obj, bool):
        out.append("true" if obj else "false")
    elif isinstance(obj, int):
        out.append(str(obj))
    elif isinstance(obj, float):
        out.append(_float(obj))
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    elif isinstance(obj, dict):
        if not obj:
            out.append("{}")
            return
        out.append("{\n")
        items = sorted(obj.items(), key=lambda kv: str(kv[0]))
        for n, (k, v) in enumerate(items):
            out.append(pad + json.dumps(str(k)) + ": ")
            _emit(v, out, level + 1, indent)
            out.append(",\n" if n < len(items) - 1 else "\n")
        out.append(end + "}")
    elif isinstance(obj, (list, tuple)):
        if not obj:
            out.append("[]")
            return
        if all(isinstance(v, (int, float, bool, np.generic)) or v is None for v in obj):
            parts = []
            for v in obj:
                sub: list[str] = []
                _emit(v, sub, 0, indent)
                parts.append("".join(sub))
            out.append("[" + ", ".join(parts) + "]")
            return
        out.append("[\n")
        for n, v in enumerate(obj):
            out.append(pad)
            _emit(v, out, level + 1, indent)
            out.append(",\n" if n < len(obj) - 1 else "\n")
        out.append(end + "]")
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")


def sha256_text(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def strategy_to_json(strategy) -> Any:
    if isinstance(strategy, EventuallyStationaryPolicy):
        if strategy.is_stationary:
            return strategy.probs[0].tolist()
        return {"grid": strategy.grid.tolist(), "probs": strategy.probs.tolist()}
    return np.asarray(strategy, dtype=float).tolist()


def strategy_from_json(doc: Any):
    """A per-state column (ndarray) or an EventuallyStationaryPolicy."""
    if isinstance(doc, dict):
        return EventuallyStationaryPolicy(np.asarray(doc["grid"], float), np.asarray(doc["probs"], float))
    arr = np.asarray(doc, dtype=float)
    if arr.ndim != 2:
        raise ValueError("a stationary strategy must be a list of per-state mixed actions")
    if np.any(arr < -1e-12) or np.any(np.abs(arr.sum(axis=1) - 1.0) > 1e-9):
        raise ValueError("strategy rows must be probability vectors")
    return arr


def load_profile(text: str):
    """Parse ``{"p1": ..., "p2": ...}``; each entry a column or a theta-indexed policy."""
    doc = json.loads(text)
    if not isinstance(doc, dict) or "p1" not in doc or "p2" not in doc:
        raise ValueError("profile file needs 'p1' and 'p2'")
    return strategy_from_json(doc["p1"]), strategy_from_json(doc["p2"])


def profile_to_json(s1, s2) -> dict:
    return {"p1": strategy_to_json(s1), "p2": strategy_to_json(s2)}
