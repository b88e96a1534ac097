"""Kernel backend selection.

Prefers the compiled Cython extension; falls back to the numpy reference
implementation when the extension is missing or when RAUM_PURE_PY=1 is set.
Both backends expose the same four functions (conv2d_forward/backward,
scan_forward/backward) and agree numerically to float64 round-off.
"""

import os

from . import reference

if os.environ.get("RAUM_PURE_PY", "") == "1":
    backend = reference
else:
    try:
        from . import _core as backend  # type: ignore[no-redef]
    except ImportError:
        backend = reference


def backend_name() -> str:
    return backend.NAME
