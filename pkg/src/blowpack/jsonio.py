"""Canonical JSON emission: sorted keys, fixed float formatting, trailing newline.

All files written by the package go through `dumps_canonical` so identical
seeds and configs produce byte-identical artifacts.
"""

from __future__ import annotations

import json
import math
from typing import Any

FORMAT_VERSION = 1


def _normalize(obj: Any) -> Any:
    if isinstance(obj, float):
        if math.isfinite(obj):
            # 12 significant digits; integers stay integral-looking
            r = float(f"{obj:.12g}")
            return r
        return str(obj)
    if isinstance(obj, dict):
        return {str(k): _normalize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_normalize(v) for v in obj]
    if isinstance(obj, (set, frozenset)):
        return sorted(_normalize(v) for v in obj)
    return obj


def dumps_canonical(obj: Any) -> str:
    return json.dumps(_normalize(obj), sort_keys=True, separators=(",", ":")) + "\n"


def dump_file(path: str, obj: Any) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_canonical(obj))


def load_file(path: str) -> Any:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)
