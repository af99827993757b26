"""JIT switch for the numeric kernels.

Kernels are written as plain loops over numpy arrays and compiled with
numba when it is importable.  Setting ``ELASTIC_ALLOC_NO_JIT=1`` in the
environment (before import) forces the pure-numpy fallback path, which runs
the same function bodies uncompiled or, where one exists, a vectorised numpy
twin.
"""

import os

_flag = os.environ.get("ELASTIC_ALLOC_NO_JIT", "").strip().lower()
JIT_DISABLED = _flag not in ("", "0", "false", "no")

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

USE_JIT = HAVE_NUMBA and not JIT_DISABLED


def jit(fn):
    """Compile ``fn`` in nopython mode, or return it untouched on the fallback path."""
    if USE_JIT:
        return numba.njit(cache=True, nogil=True)(fn)
    return fn


def python_impl(fn):
    """Return the uncompiled body of a kernel (identity on the fallback path)."""
    return getattr(fn, "py_func", fn)
