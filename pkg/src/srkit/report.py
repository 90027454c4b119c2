"""JSON report documents.

Keys are sorted and floats use ``repr`` (shortest round-trip form), so the
same values always serialize to the same bytes.  Non-finite floats become
the strings ``"inf"``, ``"-inf"`` and ``"nan"``.
"""
from __future__ import annotations

import enum
import json
import math

import numpy as np

from . import __version__
from .errors import FormatError

SCHEMA_VERSION = 1
_NONFINITE = {"inf": math.inf, "-inf": -math.inf, "nan": math.nan}


def to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isfinite(x):
            return x
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    return obj


def dumps(obj) -> str:
    return json.dumps(to_jsonable(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def loads(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"malformed report: {exc}") from None


def parse_number(v) -> float:
    """Inverse of the non-finite string encoding."""
    if isinstance(v, str):
        return _NONFINITE[v]
    return float(v)


def make_report(command: str, parameters: dict, results, warnings=()) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "toolkit_version": __version__,
        "command": command,
        "parameters": parameters,
        "results": results,
        "warnings": list(warnings),
    }
