"""Select the evidence-maximization kernel at import time.

The compiled ``_rvm_core`` extension is used when it was built; otherwise the
numpy implementation in ``_rvm_py`` is used.  Setting ``DOA_BCSKF_PURE_PYTHON=1``
forces the fallback.
"""

import os

from . import _rvm_py
from ._rvm_py import KernelError

_BACKENDS = {"python": _rvm_py.rvm_loop}

try:
    from . import _rvm_core
except ImportError:  # extension not built
    _rvm_core = None
else:
    _BACKENDS["cython"] = _rvm_core.rvm_loop

if _rvm_core is not None and os.environ.get("DOA_BCSKF_PURE_PYTHON", "") in ("", "0"):
    BACKEND = "cython"
else:
    BACKEND = "python"

rvm_loop = _BACKENDS[BACKEND]


def available_backends():
    return sorted(_BACKENDS)


def get_kernel(name=None):
    """Return the loop function for ``name`` (default: the selected backend)."""
    if name is None:
        return rvm_loop
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(f"kernel backend {name!r} unavailable; have {available_backends()}") from None


__all__ = ["BACKEND", "KernelError", "available_backends", "get_kernel", "rvm_loop"]
