"""Select the kernel implementation at import time.

The compiled extension ``contrakt._ckernels`` is used when it was built;
otherwise, or when ``CONTRAKT_PURE_PYTHON=1`` is set, the pure-Python
``contrakt._pykernels`` takes over. Both expose the same functions.
"""

import os

from . import _pykernels

kernels = _pykernels
if os.environ.get("CONTRAKT_PURE_PYTHON", "").strip() not in ("1", "true", "yes"):
    try:
        from . import _ckernels as kernels
    except ImportError:  # extension not built
        kernels = _pykernels

BACKEND = kernels.BACKEND


def available():
    """Every importable kernel module, keyed by backend name."""
    found = {"python": _pykernels}
    try:
        from . import _ckernels

        found["cython"] = _ckernels
    except ImportError:
        pass
    return found
