"""Select the compiled kernels when available, else the numpy fallback.

Set ``RELUGEO_PURE_PYTHON=1`` to force the fallback.
"""

import os

from relugeo import _kernels_py

kernels = _kernels_py
name = "python"

if os.environ.get("RELUGEO_PURE_PYTHON", "").strip() not in ("1", "true", "yes"):
    try:
        from relugeo import _kernels as _compiled
    except ImportError:
        pass
    else:
        kernels = _compiled
        name = "cython"


def max_workers() -> int:
    """Thread cap from ``RELUGEO_THREADS``, defaulting to the CPU count."""
    value = os.environ.get("RELUGEO_THREADS", "").strip()
    if value:
        try:
            return max(1, int(value))
        except ValueError:
            pass
    return max(1, os.cpu_count() or 1)
