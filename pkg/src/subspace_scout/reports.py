"""Deterministic JSON reports."""

from __future__ import annotations

import dataclasses
import json
import math
from pathlib import Path

import numpy as np

from . import __version__


def plain(obj):
    """Convert numpy values, dataclasses and tuples to JSON-ready Python objects.

    Non-finite floats become the strings ``"inf"``, ``"-inf"`` and ``"nan"``.
    """
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return plain(dataclasses.asdict(obj))
    if isinstance(obj, dict):
        return {str(k): plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if math.isfinite(x):
            return x
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    return obj


def dumps(report: dict) -> str:
    """Sorted keys; floats use the shortest repr that round-trips exactly (at most 17 significant digits)."""
    body = dict(report)
    body.setdefault("version", __version__)
    return json.dumps(plain(body), sort_keys=True, indent=2, allow_nan=False) + "\n"


def write(report: dict, path):
    Path(path).write_text(dumps(report))
