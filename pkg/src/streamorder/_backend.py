"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the pure-Python
twin. ``STREAMORDER_BACKEND=python`` (or ``compiled``) forces a choice.
"""

from __future__ import annotations

import logging
import os
from types import ModuleType

from . import _fallback as python

log = logging.getLogger(__name__)

try:
    from . import _kernels as compiled
except ImportError:  # extension not built
    compiled = None

BACKENDS = ("compiled", "python")


def available() -> list[str]:
    return [name for name in BACKENDS if get(name, strict=False) is not None]


def get(name: str | None = None, strict: bool = True) -> ModuleType | None:
    """Return the kernel module for ``name`` (None = process default)."""
    if name is None:
        return default
    if name == "python":
        return python
    if name == "compiled":
        if compiled is None and strict:
            raise RuntimeError(
                "compiled kernels are not built; run `pip install -e . --no-build-isolation`"
            )
        return compiled
    raise ValueError(f"unknown backend {name!r}; expected one of {BACKENDS}")


def _select_default() -> ModuleType:
    forced = os.environ.get("STREAMORDER_BACKEND", "").strip().lower()
    if forced:
        return get(forced)
    if compiled is None:
        log.debug("compiled kernels unavailable, using pure-Python fallback")
        return python
    return compiled


default = _select_default()
