"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy
implementations take over.  Set ``TETMOTION_PURE_PYTHON=1`` to force the
fallback (the benchmark and backend-equivalence tests do this).
"""

import os

from tetmotion import _pykernels

fallback = _pykernels
compiled = None

if os.environ.get("TETMOTION_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from tetmotion import _ckernels as compiled
    except ImportError:  # extension not built
        compiled = None

kernels = compiled if compiled is not None else fallback


def use(name):
    """Switch the active backend at runtime ("cython" or "numpy")."""
    global kernels
    if name == "numpy":
        kernels = fallback
    elif name == "cython":
        if compiled is None:
            raise RuntimeError("compiled kernels are not available")
        kernels = compiled
    else:
        raise ValueError(f"unknown backend {name!r}")
    return kernels


def active():
    return kernels
