"""Kernel selection: compiled extension when available, pure Python otherwise."""
from __future__ import annotations

try:
    from . import _core as _kernel
    HAVE_COMPILED = True
except ImportError:  # extension not built; fall back
    from . import _core_py as _kernel
    HAVE_COMPILED = False

from . import _core_py


def get_kernel(compiled: bool | None = None):
    """Return the integration kernel module.

    compiled=None picks the best available; True requires the extension;
    False forces the pure-Python implementation.
    """
    if compiled is None:
        return _kernel
    if compiled:
        if not HAVE_COMPILED:
            raise RuntimeError("compiled core requested but the extension is not built")
        from . import _core
        return _core
    return _core_py
