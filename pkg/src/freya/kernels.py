"""Backend selection for the schedule kernels.

The compiled module is used when importable; set ``FREYA_PURE_PYTHON=1``
to force the fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"
collect_first = _kernels_py.collect_first
collect_distinct = _kernels_py.collect_distinct

if not os.environ.get("FREYA_PURE_PYTHON"):
    try:
        from . import _kernels_c
    except ImportError:
        _kernels_c = None
    else:
        BACKEND = "cython"
        collect_first = _kernels_c.collect_first
        collect_distinct = _kernels_c.collect_distinct


def backend(name=None):
    """Return the ``(collect_first, collect_distinct)`` pair of a backend."""
    name = name or BACKEND
    if name == "python":
        return _kernels_py.collect_first, _kernels_py.collect_distinct
    if name == "cython":
        from . import _kernels_c as mod
        return mod.collect_first, mod.collect_distinct
    raise ValueError(f"unknown backend {name!r}")
