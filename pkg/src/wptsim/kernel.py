"""Selects the compiled cycle kernel, falling back to pure Python.

Set ``WPTSIM_PURE=1`` to force the fallback.
"""

import os

if os.environ.get("WPTSIM_PURE") == "1":
    from ._kernel_py import run_cycle
    COMPILED = False
else:
    try:
        from ._kernel import run_cycle
        COMPILED = True
    except ImportError:
        from ._kernel_py import run_cycle
        COMPILED = False

__all__ = ["run_cycle", "COMPILED"]
