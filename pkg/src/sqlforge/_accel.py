"""Optional numba acceleration.

Set ``SQLFORGE_NUMBA=0`` to force the pure-numpy code paths even when numba
is importable.
"""
import os

_flag = os.environ.get("SQLFORGE_NUMBA", "1").strip().lower()
_wanted = _flag not in ("0", "false", "no", "off")

try:
    if not _wanted:
        raise ImportError("disabled by SQLFORGE_NUMBA")
    from numba import njit
    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda fn: fn


def backend_name():
    return "numba" if HAVE_NUMBA else "numpy"
