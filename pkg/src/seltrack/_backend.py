"""Select the compiled kernel module when present, else the pure-Python one.

Set ``SELTRACK_PURE=1`` to force the fallback.
"""

import os

from . import _pykernels

pure = _pykernels

if os.environ.get("SELTRACK_PURE", "") not in ("", "0"):
    compiled = None
else:
    try:
        from . import _kernels as compiled
    except ImportError:  # extension not built
        compiled = None

kernels = compiled if compiled is not None else pure
NAME = "cython" if compiled is not None else "python"
