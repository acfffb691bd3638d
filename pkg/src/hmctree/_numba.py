import os


def _noop_jit(*args, **kwargs):
    """Stand-in for ``numba.njit`` that returns the function untouched."""
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda f: f


def _want_numba():
    flag = os.environ.get("HMCTREE_DISABLE_NUMBA", "").strip().lower()
    if flag in ("1", "true", "yes", "on"):
        return False
    try:
        import numba  # noqa: F401

        return True
    except ImportError:
        return False


# True when the compiled kernels are in use
USE_NUMBA = _want_numba()

if USE_NUMBA:
    from numba import njit
else:
    njit = _noop_jit
